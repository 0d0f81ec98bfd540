"""Maximum-likelihood estimates of link-creation strategy mixtures.

Each follow is modeled as a mixture: with probability ``p1`` the creator
uses a shortcut strategy (G, O or G-or-O), with ``p2`` triadic closure,
otherwise a uniformly random user from the pool.  A strategy assigns the
actual target probability ``indicator / n_candidates``.  Log-likelihoods
are maximized by a grid scan over the simplex followed by nested finer
grids around the best point.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .netstate import LinkContext, as_table
from .nullstats import InconsistentCounts, UnusableLink

COMPONENTS = ("G", "O", "GuO", "Delta")
SHORTCUTS = ("G", "O", "GuO")
_FIELDS = {
    "G": ("n_g", "is_g"),
    "O": ("n_o", "is_o"),
    "GuO": ("n_guo", "is_guo"),
    "Delta": ("n_tri", "is_tri"),
}
TARGET_RESOLUTION = 1e-3


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class StrategySpec:
    components: tuple[str, ...] = ()
    includes_random: bool = field(default=True, init=False)

    def __post_init__(self):
        comps = tuple(self.components)
        for c in comps:
            if c not in COMPONENTS:
                raise ValueError(f"unknown strategy component {c!r}")
        if len(set(comps)) != len(comps):
            raise ValueError("duplicate strategy component")
        if "GuO" in comps and ("G" in comps or "O" in comps):
            raise ValueError("GuO cannot be combined with G or O")
        object.__setattr__(self, "components", comps)

    @property
    def name(self):
        return "+".join(self.components) if self.components else "Rand"

    @property
    def kind(self):
        return ("Baseline", "Single", "Combined")[min(len(self.components), 2)]


@dataclass(frozen=True)
class FitResult:
    spec: StrategySpec
    params: dict
    loglik: float
    grid_resolution: float
    boundary_flag: bool
    provenance: str
    n_links: int

    def parameters_text(self):
        return ";".join(f"{k}={v:.3f}" for k, v in self.params.items()) or "-"


def link_likelihood(ctx: LinkContext, strategy) -> float:
    """Probability that ``strategy`` picks this link's actual target."""
    if ctx.pool < 1:
        raise UnusableLink(f"link {ctx.link_index} has pool {ctx.pool}")
    if strategy == "Rand":
        return 1.0 / ctx.pool
    n_field, i_field = _FIELDS[strategy]
    n, ind = getattr(ctx, n_field), getattr(ctx, i_field)
    if ind and n == 0:
        raise InconsistentCounts(f"link {ctx.link_index}: {i_field}=1 with {n_field}=0")
    return ind / n if n else 0.0


class _Terms:
    """Per-link arrays for the usable links of a context table.

    ``ratio[c]`` is a component's target probability divided by the random
    term ``1/pool``, so a link contributes ``log(1/pool) + log(p1*r1 + p2*r2 + q)``.
    """

    def __init__(self, contexts):
        tab = as_table(contexts)
        self.table = tab
        pool = tab.pool
        self.usable = pool >= 1
        self.n_links = int(self.usable.sum())
        pool_u = pool[self.usable].astype(float)
        self.log_rand = float(np.sum(-np.log(pool_u)))
        self.ratio = {}
        for comp, (n_field, i_field) in _FIELDS.items():
            n = tab.column(n_field)[self.usable]
            ind = tab.column(i_field)[self.usable]
            bad = (ind != 0) & (n == 0)
            if bad.any():
                raise InconsistentCounts(f"{i_field}=1 with {n_field}=0")
            r = np.zeros(n.shape[0])
            hit = ind != 0
            r[hit] = pool_u[hit] / n[hit]
            self.ratio[comp] = r

    @property
    def provenance(self):
        return self.table.fingerprint


def _terms(contexts):
    return contexts if isinstance(contexts, _Terms) else _Terms(contexts)


def _eval(terms: _Terms, shortcut, triadic, p1, p2, q, threads=1):
    """Log-likelihood at each ``(p1, p2, q)`` point; absent components pass ``None``."""
    zeros = np.zeros(terms.n_links)
    a = terms.ratio[shortcut] if shortcut else zeros
    b = terms.ratio[triadic] if triadic else zeros
    active = (a > 0) | (b > 0)
    a = np.ascontiguousarray(a[active])
    b = np.ascontiguousarray(b[active])
    ones = np.ones(a.shape[0])
    n_idle = int((~active).sum())
    p1, p2, q = (np.ascontiguousarray(np.atleast_1d(x), dtype=float) for x in (p1, p2, q))
    if threads > 1 and p1.shape[0] > threads:
        chunks = np.array_split(np.arange(p1.shape[0]), threads)
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(
                lambda idx: _kernels.loglik_grid(a, b, ones, p1[idx], p2[idx], q[idx]), chunks))
        act = np.concatenate(parts)
    else:
        act = _kernels.loglik_grid(a, b, ones, p1, p2, q)
    with np.errstate(divide="ignore"):
        idle = np.where(q > 0, n_idle * np.log(np.where(q > 0, q, 1.0)), -np.inf if n_idle else 0.0)
    return terms.log_rand + act + idle


def _check_p(*ps):
    for p in ps:
        if not (0.0 <= p <= 1.0) or math.isnan(p):
            raise ValueError(f"probability out of range: {p}")


def rand_baseline(contexts) -> float:
    """Log-likelihood of the pure random model, ``sum(log(1/pool))``."""
    return _terms(contexts).log_rand


def loglik_single(contexts, component, p) -> float:
    _check_p(p)
    if component not in COMPONENTS:
        raise ValueError(f"unknown component {component!r}")
    t = _terms(contexts)
    shortcut, triadic = (None, "Delta") if component == "Delta" else (component, None)
    pa, pb = (0.0, p) if triadic else (p, 0.0)
    return float(_eval(t, shortcut, triadic, pa, pb, 1.0 - p if p < 1 else 0.0)[0])


def loglik_combined(contexts, shortcut_component, p1, p2) -> float:
    _check_p(p1, p2)
    if shortcut_component not in SHORTCUTS:
        raise ValueError(f"shortcut component must be one of {SHORTCUTS}")
    q = 1.0 - p1 - p2
    if q < -1e-12:
        raise ValueError(f"p1 + p2 exceeds 1: {p1 + p2}")
    return float(_eval(_terms(contexts), shortcut_component, "Delta", p1, p2, max(q, 0.0))[0])


def _grid_1d(lo, hi, m):
    i = np.arange(lo, hi + 1)
    return i, i / m, (m - i) / m


def _grid_2d(lo1, hi1, lo2, hi2, m):
    i, j = np.meshgrid(np.arange(lo1, hi1 + 1), np.arange(lo2, hi2 + 1), indexing="ij")
    i, j = i.ravel(), j.ravel()
    ok = i + j <= m
    i, j = i[ok], j[ok]
    return i, j, i / m, j / m, (m - i - j) / m


def _lattice(step):
    if not (0 < step <= 0.1):
        raise ValueError("grid step must lie in (0, 0.1]")
    return int(math.ceil(1.0 / step - 1e-9))


def _default_rounds(n):
    r = 0
    while 1.0 / (n * 10**r) > TARGET_RESOLUTION + 1e-15:
        r += 1
    return r


def loglik_curve(contexts, component, step=0.01, threads=1):
    """``(p, logL)`` on the coarse grid for a single-strategy model."""
    t = _terms(contexts)
    n = _lattice(step)
    _, p, q = _grid_1d(0, n, n)
    shortcut, triadic = (None, "Delta") if component == "Delta" else (component, None)
    zero = np.zeros_like(p)
    pa, pb = (zero, p) if triadic else (p, zero)
    return p, _eval(t, shortcut, triadic, pa, pb, q, threads)


def loglik_surface(contexts, shortcut_component, step=0.01, threads=1):
    """``(p1, p2, logL)`` over the feasible triangle on the coarse grid."""
    t = _terms(contexts)
    n = _lattice(step)
    _, _, p1, p2, q = _grid_2d(0, n, 0, n, n)
    return p1, p2, _eval(t, shortcut_component, "Delta", p1, p2, q, threads)


def _require(t):
    if t.n_links < 2:
        raise FitError(f"need at least 2 usable links, got {t.n_links}")


def fit_single(contexts, component, step=0.01, rounds=None, threads=1) -> FitResult:
    """Maximize the single-strategy log-likelihood over ``p`` in [0, 1]."""
    if component not in COMPONENTS:
        raise ValueError(f"unknown component {component!r}")
    t = _terms(contexts)
    _require(t)
    n = _lattice(step)
    rounds = _default_rounds(n) if rounds is None else rounds
    shortcut, triadic = (None, "Delta") if component == "Delta" else (component, None)

    def evaluate(p, q):
        zero = np.zeros_like(p)
        pa, pb = (zero, p) if triadic else (p, zero)
        return _eval(t, shortcut, triadic, pa, pb, q, threads)

    m = n
    idx, p, q = _grid_1d(0, m, m)
    ll = evaluate(p, q)
    best = int(np.argmax(ll))
    best_i, best_ll = int(idx[best]), float(ll[best])
    for _ in range(rounds):
        m *= 10
        c = best_i * 10
        idx, p, q = _grid_1d(max(0, c - 10), min(m, c + 10), m)
        ll = evaluate(p, q)
        best = int(np.argmax(ll))
        if ll[best] >= best_ll:
            best_i, best_ll = int(idx[best]), float(ll[best])
        else:
            best_i = c
    p_hat = best_i / m
    return FitResult(
        spec=StrategySpec((component,)),
        params={"p": p_hat},
        loglik=best_ll,
        grid_resolution=1.0 / m,
        boundary_flag=p_hat <= 1.0 / n or p_hat >= 1.0 - 1.0 / n,
        provenance=t.provenance,
        n_links=t.n_links,
    )


def fit_combined(contexts, shortcut_component="GuO", step=0.01, rounds=None, threads=1) -> FitResult:
    """Maximize the shortcut + triadic + random log-likelihood over the triangle."""
    if shortcut_component not in SHORTCUTS:
        raise ValueError(f"shortcut component must be one of {SHORTCUTS}")
    t = _terms(contexts)
    _require(t)
    n = _lattice(step)
    rounds = _default_rounds(n) if rounds is None else rounds

    m = n
    i, j, p1, p2, q = _grid_2d(0, m, 0, m, m)
    ll = _eval(t, shortcut_component, "Delta", p1, p2, q, threads)
    best = int(np.argmax(ll))
    bi, bj, best_ll = int(i[best]), int(j[best]), float(ll[best])
    for _ in range(rounds):
        m *= 10
        ci, cj = bi * 10, bj * 10
        i, j, p1, p2, q = _grid_2d(max(0, ci - 10), ci + 10, max(0, cj - 10), cj + 10, m)
        ll = _eval(t, shortcut_component, "Delta", p1, p2, q, threads)
        best = int(np.argmax(ll))
        if ll[best] >= best_ll:
            bi, bj, best_ll = int(i[best]), int(j[best]), float(ll[best])
        else:
            bi, bj = ci, cj
    p1_hat, p2_hat = bi / m, bj / m
    edge = 1.0 / n
    return FitResult(
        spec=StrategySpec((shortcut_component, "Delta")),
        params={"p1": p1_hat, "p2": p2_hat},
        loglik=best_ll,
        grid_resolution=1.0 / m,
        boundary_flag=p1_hat <= edge or p2_hat <= edge or p1_hat + p2_hat >= 1.0 - edge,
        provenance=t.provenance,
        n_links=t.n_links,
    )


def fit_rand(contexts) -> FitResult:
    t = _terms(contexts)
    _require(t)
    return FitResult(StrategySpec(()), {}, t.log_rand, 0.0, False, t.provenance, t.n_links)


def fit_all(contexts, step=0.01, rounds=None, threads=1) -> list[FitResult]:
    """The baseline, four single-strategy and three combined models."""
    t = _terms(contexts)
    fits = [fit_rand(t)]
    fits += [fit_single(t, c, step, rounds, threads) for c in ("Delta", "G", "O", "GuO")]
    fits += [fit_combined(t, c, step, rounds, threads) for c in SHORTCUTS]
    return fits


def model_comparison(fits) -> list[FitResult]:
    """Fits sorted by maximized log-likelihood, best first.

    All fits must come from the same context table.
    """
    fits = list(fits)
    if not fits:
        return []
    prov = {f.provenance for f in fits}
    if len(prov) > 1:
        raise ValueError(f"fits come from different context tables: {sorted(prov)}")
    return sorted(fits, key=lambda f: -f.loglik)
