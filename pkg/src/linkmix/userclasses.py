"""Per-user strategy fits, Gaussian-mixture clustering and class profiles.

Every user with enough follows gets their own shortcut + triadic + random
fit.  The fitted ``(p_traffic, p_structure)`` points are clustered with a
Gaussian mixture whose order is picked by cross-validated held-out
log-likelihood.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from ._rng import rng_for
from .generator import StrategyMix
from .likelihood import fit_combined
from .netstate import NetworkState, as_table
from .stats import box_summary

# reference class centroids (p_traffic, p_structure) used only for naming
REFERENCE_CLASSES = {
    "Info": (0.52, 0.36),
    "Friend": (0.00, 0.96),
    "CFrd": (0.01, 0.80),
    "Mix": (0.07, 0.63),
    "Rand": (0.09, 0.32),
}
REG = 1e-6


@dataclass(frozen=True)
class UserFit:
    user: int
    n_links: int
    mix: StrategyMix
    loglik: float


class UserFits(list):
    """List of :class:`UserFit` sorted by user; ``skipped`` counts users below the threshold."""

    def __init__(self, fits=(), skipped=0):
        super().__init__(fits)
        self.skipped = skipped


def fit_users(contexts, min_links=20, flavor="GuO", step=0.01, rounds=None, threads=1) -> UserFits:
    """Fit the combined model separately to each creator's follows."""
    groups = as_table(contexts).by_creator()
    eligible = [(u, t) for u, t in groups.items() if len(t) >= min_links]

    def one(item):
        u, t = item
        f = fit_combined(t, flavor, step, rounds)
        return UserFit(u, len(t), StrategyMix.from_p(f.params["p1"], f.params["p2"]), f.loglik)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            fits = list(ex.map(one, eligible))
    else:
        fits = [one(item) for item in eligible]
    return UserFits(fits, len(groups) - len(eligible))


# -- Gaussian mixture ------------------------------------------------


@dataclass
class GMM:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    # penalized training log-likelihood after each EM iteration
    history: list = field(default_factory=list)
    degenerate: bool = False
    reseeded: int = 0
    dropped: int = 0

    @property
    def k(self):
        return len(self.weights)

    @property
    def objective(self):
        return self.history[-1] if self.history else -np.inf


def _log_joint(X, gmm):
    """``log w_j + log N(x_i | mu_j, S_j)`` as an ``(n, k)`` array."""
    d = X.shape[1]
    inv = np.linalg.inv(gmm.covs)
    _, logdet = np.linalg.slogdet(gmm.covs)
    diff = X[:, None, :] - gmm.means[None, :, :]
    maha = np.einsum("nki,kij,nkj->nk", diff, inv, diff)
    with np.errstate(divide="ignore"):
        lw = np.log(gmm.weights)
    return lw - 0.5 * (maha + logdet + d * np.log(2 * np.pi))


def point_loglik(X, gmm):
    """Log mixture density at each row of ``X``."""
    return logsumexp(_log_joint(np.asarray(X, float), gmm), axis=1)


def responsibilities(X, gmm):
    lj = _log_joint(np.asarray(X, float), gmm)
    return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))


def _penalty(covs):
    # fixed prior -REG/2 * tr(cov^-1) per component keeps EM monotone
    return -0.5 * REG * float(np.trace(np.linalg.inv(covs), axis1=1, axis2=2).sum())


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    idx = [int(rng.integers(n))]
    d2 = ((X - X[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        tot = d2.sum()
        i = int(rng.integers(n)) if tot <= 0 else int(rng.choice(n, p=d2 / tot))
        idx.append(i)
        d2 = np.minimum(d2, ((X - X[i]) ** 2).sum(axis=1))
    return X[idx].copy()


def _m_step(X, R):
    nk = R.sum(axis=0)
    means = (R.T @ X) / nk[:, None]
    covs = []
    degenerate = False
    for j in range(R.shape[1]):
        d = X - means[j]
        S = (R[:, j, None] * d).T @ d
        if np.linalg.eigvalsh(S / nk[j]).min() < REG:
            degenerate = True
        covs.append((S + REG * np.eye(X.shape[1])) / nk[j])
    return nk / nk.sum(), means, np.array(covs), degenerate


def fit_gmm(X, k, rng, max_iter=500, tol=1e-8, min_mass=1e-8) -> GMM:
    """EM for a ``k``-component full-covariance mixture.

    A component whose total responsibility falls below ``min_mass`` is
    reseeded once at the worst-explained point, then dropped if it empties
    again.  ``history`` holds the penalized objective of each parameter set
    visited; it never decreases between reseed/drop events.
    """
    X = np.asarray(X, float)
    n, d = X.shape
    if n < k:
        raise ValueError(f"cannot fit {k} components to {n} points")
    base = np.cov(X.T, bias=True).reshape(d, d) + REG * np.eye(d)
    gmm = GMM(np.full(k, 1.0 / k), _kmeanspp(X, k, rng), np.array([base] * k))
    reseeded = set()
    for _ in range(max_iter):
        lj = _log_joint(X, gmm)
        ll = logsumexp(lj, axis=1)
        R = np.exp(lj - ll[:, None])
        nk = R.sum(axis=0)
        empty = np.flatnonzero(nk < min_mass)
        if empty.size:
            keep = np.ones(gmm.k, bool)
            for j in empty:
                if j in reseeded:
                    keep[j] = False
                    gmm.dropped += 1
                    continue
                reseeded.add(int(j))
                gmm.reseeded += 1
                gmm.means[j] = X[int(np.argmin(ll))]
                gmm.covs[j] = base
                gmm.weights[j] = 1.0 / gmm.k
            gmm.weights = gmm.weights[keep] / gmm.weights[keep].sum()
            gmm.means, gmm.covs = gmm.means[keep], gmm.covs[keep]
            reseeded = {int(keep[:j].sum()) for j in reseeded if keep[j]}
            gmm.history.clear()
            continue
        obj = float(ll.sum() + _penalty(gmm.covs))
        prev = gmm.history[-1] if gmm.history else None
        gmm.history.append(obj)
        if prev is not None and abs(obj - prev) <= tol * max(1.0, abs(obj)):
            break
        gmm.weights, gmm.means, gmm.covs, gmm.degenerate = _m_step(X, R)
    return gmm


def _best_of(X, k, rng, restarts):
    best = None
    for _ in range(restarts):
        g = fit_gmm(X, k, rng)
        if best is None or g.objective > best.objective:
            best = g
    return best


def cv_scores(X, k_range=(1, 8), folds=10, seed=0):
    """Mean held-out log-likelihood per point for each model order."""
    X = np.asarray(X, float)
    n = X.shape[0]
    rng = rng_for(seed, "cluster-folds")
    perm = rng.permutation(n)
    parts = np.array_split(perm, min(folds, n))
    scores = {}
    for k in range(k_range[0], k_range[1] + 1):
        frng = rng_for(seed, f"cluster-cv-{k}")
        held = []
        for part in parts:
            train = np.setdiff1d(perm, part, assume_unique=True)
            if train.size < k or part.size == 0:
                held = None
                break
            g = fit_gmm(X[train], k, frng)
            held.append(point_loglik(X[part], g))
        scores[k] = float(np.concatenate(held).mean()) if held else -np.inf
    return scores


@dataclass(frozen=True)
class UserClass:
    label: str
    mean_mix: StrategyMix
    covariance: np.ndarray
    weight: float
    members: tuple


@dataclass
class Clustering:
    classes: list[UserClass]
    k: int
    cv: dict
    model: GMM
    users: np.ndarray
    assignment: np.ndarray
    resp: np.ndarray

    def class_of(self):
        return {int(u): self.classes[a].label for u, a in zip(self.users, self.assignment)}


def _labels(means):
    k = len(means)
    if k != len(REFERENCE_CLASSES):
        return [f"C{i + 1}" for i in range(k)]
    names = list(REFERENCE_CLASSES)
    ref = np.array([REFERENCE_CLASSES[n] for n in names])
    cost = ((means[:, None, :] - ref[None, :, :]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    out = [""] * k
    for r, c in zip(rows, cols):
        out[r] = names[c]
    return out


def cluster_users(fits, k_range=(1, 8), folds=10, seed=0, restarts=5) -> Clustering:
    """Cross-validated Gaussian-mixture clustering of per-user fits.

    Ties in held-out score (relative 1e-9) go to the smaller order.
    """
    if len(fits) < 10:
        raise ValueError(f"clustering needs at least 10 user fits, got {len(fits)}")
    lo, hi = k_range
    if not (1 <= lo <= hi):
        raise ValueError(f"bad k range {k_range}")
    users = np.array([f.user for f in fits])
    X = np.array([[f.mix.p_traffic, f.mix.p_structure] for f in fits])
    hi = min(hi, len(fits) - 1) if len(fits) > lo else lo
    cv = cv_scores(X, (lo, hi), folds, seed)
    best_k, best = lo, cv[lo]
    for k in range(lo + 1, hi + 1):
        if cv[k] > best + 1e-9 * max(1.0, abs(best)):
            best_k, best = k, cv[k]
    model = _best_of(X, best_k, rng_for(seed, "cluster-final"), restarts)
    # canonical component order: heaviest first, then by mean
    order = sorted(range(model.k), key=lambda j: (-round(model.weights[j], 12), *model.means[j]))
    model.weights, model.means, model.covs = model.weights[order], model.means[order], model.covs[order]
    R = responsibilities(X, model)
    assign = R.argmax(axis=1)
    labels = _labels(model.means)
    classes = []
    for j in range(model.k):
        m = model.means[j]
        p1, p2 = float(np.clip(m[0], 0, 1)), float(np.clip(m[1], 0, 1))
        if p1 + p2 > 1:
            p1, p2 = p1 / (p1 + p2), p2 / (p1 + p2)
        classes.append(UserClass(labels[j], StrategyMix.from_p(p1, p2), model.covs[j].copy(),
                                 float(model.weights[j]), tuple(int(u) for u in users[assign == j])))
    return Clustering(classes, model.k, cv, model, users, assign, R)


# -- profiles --------------------------------------------------------

PROFILE_FEATURES = ("lifetime", "k", "k_ratio", "times_reposted", "posts", "post_ratio")


@dataclass(frozen=True)
class ClassProfile:
    label: str
    feature: str
    summary: dict
    low_confidence: bool


def user_features(state: NetworkState):
    f = state.node_features()
    with np.errstate(invalid="ignore", divide="ignore"):
        k_ratio = f["k"] / (f["k"] + f["k_out"])
        post_ratio = f["posts"] / (f["posts"] + f["reposts"])
    return {
        "lifetime": f["lifetime"],
        "k": f["k"],
        "k_ratio": k_ratio,
        "times_reposted": f["times_reposted"],
        "posts": f["posts"],
        "post_ratio": post_ratio,
    }


def class_profiles(classes, state: NetworkState) -> list[ClassProfile]:
    """Box-plot summaries of user features for each class.

    Ratios with a zero denominator are left out of the summaries.
    """
    feats = user_features(state)
    out = []
    for c in classes:
        idx = np.array(c.members, dtype=np.int64)
        for name in PROFILE_FEATURES:
            vals = feats[name][idx] if idx.size else np.array([])
            out.append(ClassProfile(c.label, name, box_summary(vals), len(c.members) < 2))
    return out
