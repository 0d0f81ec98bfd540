"""Null-model tests for grandparent, origin and triadic link targets.

Under the null hypothesis a creator picks uniformly among the users it
does not yet follow, so link ``l`` hits a mechanism's candidate set with
probability ``n_mech / pool``.  Summing indicators and probabilities over
links gives an observed count ``S``, an expected count ``E`` and a
Bernoulli variance, hence a z-score.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .netstate import LinkContext, as_table

MECHANISMS = ("G", "O", "Delta")
_FIELDS = {
    "G": ("n_g", "is_g"),
    "O": ("n_o", "is_o"),
    "Delta": ("n_tri", "is_tri"),
    "GuO": ("n_guo", "is_guo"),
}


class UnusableLink(ValueError):
    """The link has no candidate pool, so its null probability is undefined."""


class InconsistentCounts(ValueError):
    """A candidate count exceeds the pool it is drawn from."""


def _fields(mechanism):
    try:
        return _FIELDS[mechanism]
    except KeyError:
        raise ValueError(f"unknown mechanism {mechanism!r}") from None


def null_probability(ctx: LinkContext, mechanism) -> float:
    """Chance that a uniformly random target lands in the mechanism's set."""
    n_field, _ = _fields(mechanism)
    n = getattr(ctx, n_field)
    if ctx.pool < 1:
        raise UnusableLink(f"link {ctx.link_index} has pool {ctx.pool}")
    if n > ctx.pool:
        raise InconsistentCounts(f"link {ctx.link_index}: {n_field}={n} exceeds pool {ctx.pool}")
    return n / ctx.pool


def null_probabilities(contexts, mechanism):
    """``(p, indicator, usable)`` arrays; ``p`` and ``indicator`` cover usable links only."""
    tab = as_table(contexts)
    n_field, i_field = _fields(mechanism)
    pool = tab.pool
    n = tab.column(n_field)
    usable = pool >= 1
    bad = usable & (n > pool)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise InconsistentCounts(
            f"link {tab[i].link_index}: {n_field}={n[i]} exceeds pool {pool[i]}")
    p = n[usable] / pool[usable]
    return p, tab.column(i_field)[usable].astype(float), usable


@dataclass(frozen=True)
class ZReport:
    mechanism: str
    S: float
    E: float
    sigma: float
    z: float
    p_value: float
    n_links_used: int
    n_excluded: int = 0

    @property
    def defined(self):
        return self.sigma > 0


def _report(mechanism, p, x, n_excluded):
    S = float(x.sum())
    E = float(p.sum())
    var = float((p * (1.0 - p)).sum())
    sigma = math.sqrt(var)
    if sigma > 0:
        z = (S - E) / sigma
        pv = float(2.0 * stats.norm.sf(abs(z)))
    else:
        z = pv = float("nan")
    return ZReport(mechanism, S, E, sigma, z, pv, int(p.size), n_excluded)


def z_score(contexts, mechanism) -> ZReport:
    """Observed vs expected count of links into the mechanism's set.

    Links with ``pool < 1`` are excluded and counted in ``n_excluded``;
    ``z`` is NaN when every probability is 0 or 1.
    """
    p, x, usable = null_probabilities(contexts, mechanism)
    if p.size == 0:
        raise ValueError("z_score needs at least one link with a non-empty pool")
    return _report(mechanism, p, x, int((~usable).sum()))


@dataclass(frozen=True)
class LyapunovCurve:
    mechanism: str
    n: np.ndarray
    ratio: np.ndarray
    final: float
    tail_max: float


def lyapunov_diagnostic(contexts, mechanism) -> LyapunovCurve:
    """Lyapunov fourth-moment ratio for every prefix of the usable links.

    ``ratio[i] = sum(E|X - p|^4) / sigma^4`` over the first ``n[i]`` links,
    where a Bernoulli(p) variable has fourth central moment
    ``p (1 - p) (1 - 3p + 3p^2)``.  Prefixes with zero variance are skipped.
    ``tail_max`` is the largest ratio over the second half of the prefixes.
    """
    p, _, _ = null_probabilities(contexts, mechanism)
    if p.size < 2:
        raise ValueError("lyapunov_diagnostic needs at least two usable links")
    var = np.cumsum(p * (1 - p))
    m4 = np.cumsum(p * (1 - p) * (1 - 3 * p + 3 * p * p))
    n = np.arange(1, p.size + 1)
    ok = var > 0
    ratio = m4[ok] / var[ok] ** 2
    n = n[ok]
    if ratio.size == 0:
        return LyapunovCurve(mechanism, n, ratio, float("nan"), float("nan"))
    tail = ratio[ratio.size // 2:]
    return LyapunovCurve(mechanism, n, ratio, float(ratio[-1]), float(tail.max()))


def k_bins(max_k, binning="mixed", exact_below=100, factor=2 ** 0.25):
    """Inclusive ``(lo, hi)`` in-degree bins covering ``0..max_k``.

    ``"exact"`` gives one bin per k, ``"log"`` geometric bins from 1,
    ``"mixed"`` exact bins below ``exact_below`` then geometric ones.
    """
    if binning == "exact":
        return [(k, k) for k in range(max_k + 1)]
    if binning == "log":
        bins, lo = [(0, 0)], 1
    elif binning == "mixed":
        bins = [(k, k) for k in range(min(exact_below, max_k + 1))]
        lo = exact_below
    else:
        raise ValueError(f"unknown binning {binning!r}")
    while lo <= max_k:
        hi = max(lo, int(math.ceil(lo * factor)) - 1)
        bins.append((lo, hi))
        lo = hi + 1
    return bins


@dataclass(frozen=True)
class KBin:
    lo: int
    hi: int
    report: ZReport


@dataclass(frozen=True)
class KCurve:
    mechanism: str
    bins: list[KBin]
    omitted: list[tuple[int, int, int]]

    def z(self):
        return {(b.lo, b.hi): b.report.z for b in self.bins}


def z_by_indegree(contexts, mechanism, binning="mixed", min_count=30) -> KCurve:
    """z-scores restricted to links whose creator had in-degree in each bin.

    Bins with fewer than ``min_count`` usable links are left out and listed
    in ``omitted`` as ``(lo, hi, n)``.
    """
    tab = as_table(contexts)
    if len(tab) == 0:
        return KCurve(mechanism, [], [])
    p, x, usable = null_probabilities(tab, mechanism)
    k = tab.k[usable]
    bins = binning if isinstance(binning, list) else k_bins(int(tab.k.max()), binning)
    out, omitted = [], []
    for lo, hi in bins:
        sel = (k >= lo) & (k <= hi)
        cnt = int(sel.sum())
        if cnt == 0:
            continue
        if cnt < min_count:
            omitted.append((lo, hi, cnt))
            continue
        out.append(KBin(lo, hi, _report(mechanism, p[sel], x[sel], 0)))
    return KCurve(mechanism, out, omitted)


def crossover(rising: KCurve, falling: KCurve):
    """First bin, in k order, after which ``rising`` beats ``falling`` for good.

    Only bins present in both curves with defined z are compared.  Returns
    ``(lo, hi)`` or ``None`` when ``rising`` never ends up on top.
    """
    za, zb = rising.z(), falling.z()
    keys = sorted(key for key in za if key in zb and np.isfinite(za[key]) and np.isfinite(zb[key]))
    ahead = [za[key] > zb[key] for key in keys]
    if not ahead or not ahead[-1]:
        return None
    i = len(ahead) - 1
    while i > 0 and ahead[i - 1]:
        i -= 1
    return keys[i]


@dataclass(frozen=True)
class RankBias:
    mechanism: str
    edges: np.ndarray
    density: np.ndarray
    percentiles: np.ndarray
    n: int

    def masses(self, n_groups=5):
        """Probability mass in ``n_groups`` equal-width percentile groups."""
        width = np.diff(self.edges)
        mass = self.density * width
        if mass.size % n_groups:
            raise ValueError(f"{mass.size} bins do not split into {n_groups} groups")
        return mass.reshape(n_groups, -1).sum(axis=1)

    def uniformity_pvalue(self, n_groups=5):
        """Chi-square p-value of the grouped masses against a flat density."""
        counts = self.masses(n_groups) * self.n
        return float(stats.chisquare(counts).pvalue)


def rank_bias(contexts, mechanism, bin_width=5.0) -> RankBias:
    """Density of the chosen target's rank percentile among candidates.

    Candidates are ranked by how many of their messages the creator had seen,
    most-seen first.  Each follow spreads unit mass uniformly over its tie
    group's percentile interval; with uniform choice among candidates the
    expected density is then exactly flat.  ``percentiles`` holds the mid-rank
    point values in ``(0, 100]``.
    """
    if mechanism not in ("G", "O"):
        raise ValueError("rank_bias is defined for 'G' and 'O'")
    tab = as_table(contexts)
    n_field, i_field = _fields(mechanism)
    pct = tab.column(f"target_rank_pct_{mechanism.lower()}")
    ties = tab.column(f"rank_ties_{mechanism.lower()}").astype(float)
    n = tab.column(n_field).astype(float)
    sel = (tab.column(i_field) == 1) & (n >= 2) & np.isfinite(pct)
    if not sel.any():
        raise ValueError(f"no follows into {mechanism} with at least two candidates")
    pct, ties, n = pct[sel], ties[sel], n[sel]
    n_bins = int(round(100.0 / bin_width))
    if not math.isclose(n_bins * bin_width, 100.0):
        raise ValueError("bin_width must divide 100")
    edges = np.linspace(0.0, 100.0, n_bins + 1)
    greater = pct * n / 100.0 - (ties + 1) / 2
    lo = 100.0 * greater / n
    hi = 100.0 * (greater + ties) / n
    overlap = np.clip(np.minimum(hi[:, None], edges[None, 1:]) - np.maximum(lo[:, None], edges[None, :-1]),
                      0.0, None)
    mass = (overlap / (hi - lo)[:, None]).sum(axis=0)
    density = mass / (sel.sum() * bin_width)
    return RankBias(mechanism, edges, density, pct, int(sel.sum()))
