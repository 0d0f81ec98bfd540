import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from linkmix.generator import GeneratorConfig, StrategyMix, generate
from linkmix.netstate import LinkContext, ReplayOptions, replay
from linkmix.nullstats import (
    InconsistentCounts,
    UnusableLink,
    crossover,
    k_bins,
    lyapunov_diagnostic,
    null_probabilities,
    null_probability,
    rank_bias,
    z_by_indegree,
    z_score,
)
from oracles import brute_contexts


def make_ctx(link_index=10, k=3, pool=None, **kw):
    base = dict(
        link_index=link_index, creator=0, target=1, k=k,
        pool=link_index - k - 1 if pool is None else pool,
        n_g=0, n_o=0, n_tri=0, is_g=0, is_o=0, is_tri=0, seen_from_target=0,
        target_rank_pct_g=None, target_rank_pct_o=None, n_guo=0, is_guo=0,
        rank_ties_g=0, rank_ties_o=0, seq=link_index, time=link_index,
    )
    base.update(kw)
    return LinkContext(**base)


def test_null_probability_example():
    assert null_probability(make_ctx(n_g=2), "G") == pytest.approx(2 / 6)
    assert null_probability(make_ctx(), "G") == 0.0


def test_null_probability_errors():
    with pytest.raises(UnusableLink):
        null_probability(make_ctx(link_index=1, k=0), "G")
    with pytest.raises(InconsistentCounts):
        null_probability(make_ctx(n_tri=7), "Delta")
    with pytest.raises(ValueError):
        null_probability(make_ctx(), "X")


def test_null_probability_matches_brute_force(small_generation):
    _, ctx = replay(small_generation.events)
    brute = brute_contexts(small_generation.events)
    for c, b in zip(ctx, brute):
        if b.pool >= 1:
            assert null_probability(c, "G") == b.n_g / b.pool


def test_z_closed_form():
    ctxs = [make_ctx(link_index=i + 3, k=0, pool=2, n_g=1, is_g=1) for i in range(100)]
    r = z_score(ctxs, "G")
    assert (r.S, r.E, r.sigma, r.z) == (100.0, 50.0, 5.0, 10.0)
    assert r.n_links_used == 100 and r.n_excluded == 0


def test_z_zero_when_observed_equals_expected():
    ctxs = [make_ctx(pool=2, n_g=1, is_g=i % 2) for i in range(10)]
    assert z_score(ctxs, "G").z == 0.0


def test_z_undefined_without_variance():
    r = z_score([make_ctx(n_g=0), make_ctx(n_g=6, is_g=1)], "G")
    assert r.sigma == 0 and not r.defined and math.isnan(r.z)


def test_unusable_links_excluded_and_counted():
    ctxs = [make_ctx(link_index=1, k=0), make_ctx(pool=2, n_g=1, is_g=1)]
    r = z_score(ctxs, "G")
    assert r.n_excluded == 1 and r.n_links_used == 1


def test_lyapunov_closed_form():
    ctxs = [make_ctx(pool=2, n_g=1) for _ in range(100)]
    lc = lyapunov_diagnostic(ctxs, "G")
    np.testing.assert_allclose(lc.ratio, 1.0 / lc.n, rtol=1e-12)
    assert lc.final == pytest.approx(0.01)


def test_lyapunov_decreasing_on_generated_log(medium_generation):
    _, ctx = replay(medium_generation.events)
    lc = lyapunov_diagnostic(ctx, "Delta")
    assert lc.final < 0.05
    assert lc.ratio[-1] < lc.ratio[len(lc.ratio) // 10]


def test_bounds_and_batch_agreement(medium_generation):
    _, ctx = replay(medium_generation.events)
    for mech in ("G", "O", "Delta"):
        r = z_score(ctx, mech)
        assert 0 <= r.S <= r.n_links_used and 0 <= r.E <= r.n_links_used
        # second pass with plain Python sums
        field = "n_tri" if mech == "Delta" else f"n_{mech.lower()}"
        E = sum(getattr(c, field) / c.pool for c in ctx if c.pool >= 1)
        assert r.E == pytest.approx(E, rel=1e-9)


@given(st.permutations(range(60)))
def test_permutation_invariance(perm):
    rng = np.random.default_rng(0)
    ctxs = []
    for i in range(60):
        pool = int(rng.integers(1, 20))
        n = int(rng.integers(0, pool + 1))
        ctxs.append(make_ctx(pool=pool, n_tri=n, is_tri=int(n > 0 and rng.random() < 0.5)))
    a = z_score(ctxs, "Delta")
    b = z_score([ctxs[i] for i in perm], "Delta")
    assert a.z == pytest.approx(b.z, rel=1e-12)


def test_stratified_consistency(medium_generation):
    _, ctx = replay(medium_generation.events)
    for mech in ("G", "Delta"):
        g = z_by_indegree(ctx, mech, binning="exact", min_count=1)
        total = z_score(ctx, mech)
        parts = sum(b.report.S - b.report.E for b in g.bins)
        assert parts == pytest.approx(total.S - total.E, rel=1e-9, abs=1e-9)


def test_single_bin_when_all_k_zero():
    ctxs = [make_ctx(link_index=5, k=0, n_g=i % 3, is_g=i % 2) for i in range(40)]
    curve = z_by_indegree(ctxs, "G", min_count=1)
    assert len(curve.bins) == 1
    assert curve.bins[0].report.z == pytest.approx(z_score(ctxs, "G").z)


def test_small_bins_omitted():
    ctxs = [make_ctx(link_index=20, k=0, n_g=1, is_g=1)] * 40 + [make_ctx(link_index=20, k=1, n_g=1)] * 5
    curve = z_by_indegree(ctxs, "G", min_count=30)
    assert [(b.lo, b.hi) for b in curve.bins] == [(0, 0)]
    assert curve.omitted == [(1, 1, 5)]


def test_k_bins_cover_range():
    for mode in ("exact", "log", "mixed"):
        bins = k_bins(500, mode)
        assert bins[0][0] == 0 and bins[-1][1] >= 500
        assert all(b[0] == a[1] + 1 for a, b in zip(bins, bins[1:]))
    assert k_bins(150)[:100] == [(k, k) for k in range(100)]


def _bias_ctx(pct, ties, n):
    return make_ctx(link_index=100, k=0, n_g=n, is_g=1, target_rank_pct_g=pct, rank_ties_g=ties)


def test_rank_bias_most_seen_target():
    # rank 1 of 20 with no ties: mid-rank percentile 5, interval [0, 5]
    ctxs = [_bias_ctx(5.0, 1, 20) for _ in range(50)]
    rb = rank_bias(ctxs, "G")
    assert rb.density[0] * 5.0 == pytest.approx(1.0)
    assert rb.masses()[0] == pytest.approx(1.0)


def test_rank_bias_density_integrates_to_one(medium_generation):
    _, ctx = replay(medium_generation.events)
    rb = rank_bias(ctx, "G")
    assert (rb.density * np.diff(rb.edges)).sum() == pytest.approx(1.0)
    assert ((rb.percentiles > 0) & (rb.percentiles <= 100)).all()


def test_rank_bias_all_ties_is_flat():
    # every candidate tied: each follow spreads mass evenly over [0, 100]
    ctxs = [_bias_ctx(100.0 * (0 + (7 + 1) / 2) / 7, 7, 7) for _ in range(10)]
    rb = rank_bias(ctxs, "G")
    np.testing.assert_allclose(rb.density, 0.01)


def test_rank_bias_rejects_delta():
    with pytest.raises(ValueError):
        rank_bias([_bias_ctx(50.0, 1, 2)], "Delta")


def test_crossover_detection():
    rng = np.random.default_rng(2)
    ctxs = []
    for k in range(10):
        for _ in range(60):
            hit_g = k >= 5
            ctxs.append(make_ctx(link_index=200, k=k, n_g=10, n_tri=10,
                                 is_g=int(hit_g and rng.random() < 0.8),
                                 is_tri=int(not hit_g and rng.random() < 0.8)))
    zg = z_by_indegree(ctxs, "G", binning="exact")
    zd = z_by_indegree(ctxs, "Delta", binning="exact")
    assert crossover(zg, zd) == (5, 5)
    assert crossover(zd, zg) is None


def test_pure_random_logs_are_null():
    cfg = GeneratorConfig(seed=13, n_events=4000, rates=(0, 0.2, 0.3, 0.5), initial_users=50,
                          mix=StrategyMix(0, 0, 1), trace=False)
    _, ctx = replay(generate(cfg).events, ReplayOptions(pool_mode="users"))
    for mech in ("G", "O", "Delta"):
        assert abs(z_score(ctx, mech).z) < 4


def test_probability_arrays(medium_generation):
    _, ctx = replay(medium_generation.events)
    p, x, usable = null_probabilities(ctx, "GuO")
    assert p.shape == x.shape and usable.sum() == p.size
    assert ((p >= 0) & (p <= 1)).all()
