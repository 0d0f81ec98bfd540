"""End-to-end acceptance checks.

Each test records one ``criterion N: PASS|FAIL ...`` line; the lines are
printed together at the end of the session (see ``conftest.py``).
"""
import math
import time

import numpy as np
import pytest
from scipy import stats
from scipy.optimize import linear_sum_assignment

from linkmix import cli
from linkmix.eventlog import Follow
from linkmix.generator import GeneratorConfig, StrategyMix, generate
from linkmix.likelihood import fit_combined, fit_single, link_likelihood, loglik_combined, loglik_single
from linkmix.netstate import ReplayOptions, link_efficiency, replay
from linkmix.nullstats import crossover, rank_bias, z_by_indegree, z_score
from linkmix._rng import rng_for
from linkmix.userclasses import UserFit, cluster_users, fit_gmm
from oracles import brute_contexts, exact_loglik, normalization_sums

RESULTS = {}
USERS = ReplayOptions(pool_mode="users")


def record(n, ok, detail):
    RESULTS[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, RESULTS[n]


def test_criterion_01_parameter_recovery():
    t0 = time.perf_counter()
    base = dict(seed=1, n_events=100_000, rates=(0.01, 0.19, 0.3, 0.5), trace=False)
    g = generate(GeneratorConfig(mix=StrategyMix(0.12, 0.71, 0.17), **base))
    _, ctx = replay(g.events, USERS)
    comb = fit_combined(ctx, "GuO")
    g2 = generate(GeneratorConfig(mix=StrategyMix(0.0, 0.82, 0.18), **base))
    _, ctx2 = replay(g2.events, USERS)
    single = fit_single(ctx2, "Delta")
    elapsed = time.perf_counter() - t0
    p1, p2, pd = comb.params["p1"], comb.params["p2"], single.params["p"]
    ok = (abs(p1 - 0.12) <= 0.03 and abs(p2 - 0.71) <= 0.03 and abs(pd - 0.82) <= 0.03
          and elapsed <= 300)
    record(1, ok, f"follows={len(ctx)} p1={p1:.3f} (0.12) p2={p2:.3f} (0.71) "
                  f"p_delta={pd:.3f} (0.82) tol=0.03 time={elapsed:.0f}s")


def _short_logs(n_logs=50, max_follows=20):
    for seed in range(n_logs):
        evs = generate(GeneratorConfig(seed=seed, n_events=60, rates=(0.1, 0.2, 0.2, 0.5))).events
        follows = [i for i, e in enumerate(evs) if isinstance(e, Follow)]
        if len(follows) > max_follows:
            evs = evs[:follows[max_follows - 1] + 1]
        yield evs


def test_criterion_02_exact_oracle():
    worst = 0.0
    n_logs = 0
    grid = [(0.0, 0.0), (0.1, 0.7), (0.3, 0.3), (0.5, 0.0), (0.05, 0.9)]
    for evs in _short_logs():
        n_logs += 1
        _, ctx = replay(evs)
        assert sum(isinstance(e, Follow) for e in evs) <= 20
        for comp in ("G", "O", "GuO", "Delta"):
            for p in (0.0, 0.2, 0.6, 0.95):
                want = exact_loglik(ctx, {comp: p, "Rand": 1 - p})
                got = loglik_single(ctx, comp, p)
                worst = max(worst, abs(got - want) / max(1e-300, abs(want)))
        for comp in ("G", "O", "GuO"):
            for p1, p2 in grid:
                want = exact_loglik(ctx, {comp: p1, "Delta": p2, "Rand": 1 - p1 - p2})
                got = loglik_combined(ctx, comp, p1, p2)
                if math.isinf(want) or math.isinf(got):
                    worst = max(worst, 0.0 if want == got else math.inf)
                else:
                    worst = max(worst, abs(got - want) / max(1e-300, abs(want)))
    record(2, worst <= 1e-9 and n_logs == 50, f"logs={n_logs} max_rel_err={worst:.2e} tol=1e-9")


def test_criterion_03_null_calibration():
    base = dict(n_events=3000, rates=(0.0, 0.2, 0.3, 0.5), initial_users=50, trace=False)
    zs = {m: [] for m in ("G", "O", "Delta")}
    for seed in range(200):
        g = generate(GeneratorConfig(seed=seed, mix=StrategyMix(0, 0, 1), **base))
        _, ctx = replay(g.events, USERS)
        for m in zs:
            zs[m].append(z_score(ctx, m).z)
    pvals = {m: stats.kstest(v, "norm").pvalue for m, v in zs.items()}
    planted = {}
    for flavor, mix, mech in (("G", StrategyMix(0.3, 0, 0.7), "G"),
                              ("O", StrategyMix(0.3, 0, 0.7), "O"),
                              ("GuO", StrategyMix(0, 0.3, 0.7), "Delta")):
        g = generate(GeneratorConfig(seed=1000, shortcut_flavor=flavor, mix=mix, **base))
        _, ctx = replay(g.events, USERS)
        planted[mech] = z_score(ctx, mech).z
    ok = all(p >= 0.01 for p in pvals.values()) and all(z > 5 for z in planted.values())
    record(3, ok, "KS p: " + " ".join(f"{m}={p:.3f}" for m, p in pvals.items())
           + " | planted z: " + " ".join(f"{m}={z:.1f}" for m, z in planted.items()))


def test_criterion_04_snapshot_purity():
    n_checked = 0
    mismatches = 0
    for seed in range(4):
        for mode in ("links", "users"):
            g = generate(GeneratorConfig(seed=seed, n_events=1000, rates=(0.04, 0.26, 0.3, 0.4)))
            _, ctx = replay(g.events, ReplayOptions(pool_mode=mode))
            brute = brute_contexts(g.events, pool_mode=mode)
            mismatches += sum(a != b for a, b in zip(ctx, brute)) + abs(len(ctx) - len(brute))
            n_checked += len(brute)
    record(4, mismatches == 0, f"contexts={n_checked} mismatches={mismatches}")


def test_criterion_05_normalization():
    g = generate(GeneratorConfig(seed=21, n_events=300, rates=(0.05, 0.25, 0.3, 0.4)))
    fields = {"Rand": None, "G": "n_g", "O": "n_o", "GuO": "n_guo", "Delta": "n_tri"}
    worst, n = 0.0, 0
    for base, sums in normalization_sums(g.events, link_likelihood):
        n += 1
        for s, total in sums.items():
            # a strategy with no candidates assigns probability 0 to every target
            want = 1.0 if fields[s] is None or getattr(base, fields[s]) else 0.0
            worst = max(worst, abs(total - want))
    record(5, worst <= 1e-9 and n > 0, f"follows={n} max_abs_err={worst:.1e} tol=1e-9")


def test_criterion_06_regime_switch():
    cfg = GeneratorConfig(seed=1, n_events=160_000, rates=(0.0, 0.2, 0.3, 0.5), initial_users=800,
                          mix=StrategyMix(0, 0.9, 0.1), switch_k=75, mix_after=StrategyMix(0.9, 0, 0.1),
                          shortcut_flavor="G", trace=False)
    _, ctx = replay(generate(cfg).events, USERS)
    zg = z_by_indegree(ctx, "G", binning="exact")
    zd = z_by_indegree(ctx, "Delta", binning="exact")
    cross = crossover(zg, zd)
    ok = cross is not None and cross[0] <= 76 and cross[1] >= 74
    record(6, ok, f"crossover bin={cross} expected bin containing 75 +/- 1")


def _rank_masses(weighting, seed):
    cfg = GeneratorConfig(seed=seed, n_events=40_000, rates=(0.01, 0.19, 0.3, 0.5),
                          mix=StrategyMix(0.6, 0.2, 0.2), shortcut_flavor="G",
                          traffic_weighting=weighting, trace=False)
    _, ctx = replay(generate(cfg).events)
    return rank_bias(ctx, "G")


def test_criterion_07_rank_bias():
    weighted = _rank_masses(True, 3)
    masses = weighted.masses()
    decreasing = bool(np.all(np.diff(masses) < 0))
    flat = _rank_masses(False, 3)
    p = flat.uniformity_pvalue()
    record(7, decreasing and p > 0.01,
           f"weighted quintiles={np.round(masses, 3).tolist()} unweighted chi2 p={p:.3f}")


def test_criterion_08_efficiency():
    cfg = GeneratorConfig(seed=2, n_events=30_000, mix=StrategyMix(0.3, 0.5, 0.2),
                          traffic_weighting=True, activity_skew=1.0, trace=False)
    state, ctx = replay(generate(cfg).events)
    per, _ = link_efficiency(state, ctx)
    a = per["seen"][per["masks"]["GuO"]]
    b = per["seen"][per["masks"]["Delta-only"]]
    res = stats.ttest_ind(a, b, equal_var=False, alternative="greater")
    ok = a.mean() > b.mean() and res.pvalue < 0.01
    record(8, ok, f"mean eta_seen GuO={a.mean():.4f} (n={a.size}) Delta-only={b.mean():.4f} "
                  f"(n={b.size}) Welch one-sided p={res.pvalue:.1e}")


def _planted_points(seed, n_per=50, sd=0.05):
    centroids = np.array([[0.15, 0.65], [0.55, 0.2], [0.15, 0.2]])
    rng = np.random.default_rng(seed)
    pts = np.vstack([mu + sd * rng.standard_normal((n_per, 2)) for mu in centroids])
    pts = np.clip(pts, 0, 1)
    s = pts.sum(axis=1, keepdims=True)
    return np.where(s > 1, pts / s, pts), np.repeat(np.arange(3), n_per)


def test_criterion_09_planted_clustering():
    picked, accs, monotone = [], [], True
    for seed in range(10):
        X, labels = _planted_points(seed)
        fits = [UserFit(i, 50, StrategyMix.from_p(*x), 0.0) for i, x in enumerate(X)]
        cl = cluster_users(fits, seed=seed)
        picked.append(cl.k)
        if cl.k == 3:
            M = np.zeros((3, 3))
            for a, t in zip(cl.assignment, labels):
                M[a, t] += 1
            r, c = linear_sum_assignment(-M)
            accs.append(M[r, c].sum() / len(labels))
        for k in (1, 3, 6):
            h = np.diff(fit_gmm(X, k, rng_for(seed, "mono")).history)
            monotone &= bool((h >= -1e-9).all())
    hits = sum(k == 3 for k in picked)
    ok = hits >= 8 and min(accs) >= 0.9 and monotone
    record(9, ok, f"k chosen={picked} (k=3 in {hits}/10) min accuracy={min(accs):.3f} "
                  f"EM monotone={monotone}")


def test_criterion_10_determinism(tmp_path):
    gen = ["--events", "20000", "--seed", "4"]
    assert cli.main(["generate", "--output-dir", str(tmp_path / "g1"), *gen]) == 0
    assert cli.main(["generate", "--output-dir", str(tmp_path / "g2"), *gen]) == 0
    same_log = (tmp_path / "g1" / "events.log").read_bytes() == (tmp_path / "g2" / "events.log").read_bytes()
    log = str(tmp_path / "g1" / "events.log")
    outs = {}
    for th in (1, 4):
        d = tmp_path / f"t{th}"
        assert cli.main(["pipeline", "--input", log, "--output-dir", str(d), "--threads", str(th)]) == 0
        outs[th] = {p.name: p.read_bytes() for p in d.iterdir()}
    diff = sorted(n for n in outs[1] if outs[1][n] != outs[4].get(n))
    ok = same_log and not diff and outs[1].keys() == outs[4].keys()
    record(10, ok, f"log identical={same_log} files={len(outs[1])} differing across threads={diff}")
