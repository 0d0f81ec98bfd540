import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from linkmix.generator import GeneratorConfig, StrategyMix, generate
from linkmix.likelihood import (
    COMPONENTS,
    FitError,
    StrategySpec,
    fit_all,
    fit_combined,
    fit_rand,
    fit_single,
    link_likelihood,
    loglik_combined,
    loglik_curve,
    loglik_single,
    loglik_surface,
    model_comparison,
    rand_baseline,
)
from linkmix.netstate import ReplayOptions, as_table, replay
from linkmix.nullstats import InconsistentCounts, UnusableLink
from oracles import exact_loglik, normalization_sums
from test_nullstats import make_ctx


def test_link_likelihood_examples():
    assert link_likelihood(make_ctx(pool=99), "Rand") == 1 / 99
    assert link_likelihood(make_ctx(n_tri=4, is_tri=1), "Delta") == 0.25
    assert link_likelihood(make_ctx(n_g=3), "G") == 0.0
    assert link_likelihood(make_ctx(n_guo=2, is_guo=1), "GuO") == 0.5


def test_link_likelihood_errors():
    with pytest.raises(UnusableLink):
        link_likelihood(make_ctx(pool=0), "Rand")
    with pytest.raises(InconsistentCounts):
        link_likelihood(make_ctx(is_o=1), "O")


def test_single_link_substitution():
    ctx = [make_ctx(pool=10, n_g=2, is_g=1)]
    assert loglik_single(ctx, "G", 0.5) == pytest.approx(math.log(0.3), rel=1e-12)


def test_normalization_over_all_targets():
    g = generate(GeneratorConfig(seed=21, n_events=300, rates=(0.05, 0.25, 0.3, 0.4)))
    checked = 0
    for base, sums in normalization_sums(g.events, link_likelihood):
        assert sums["Rand"] == pytest.approx(1.0)
        for comp, n_field in (("G", "n_g"), ("O", "n_o"), ("GuO", "n_guo"), ("Delta", "n_tri")):
            assert sums[comp] == pytest.approx(1.0 if getattr(base, n_field) else 0.0)
        checked += 1
    assert checked > 50


def test_baseline_anchoring_exact(medium_generation):
    _, ctx = replay(medium_generation.events)
    base = rand_baseline(ctx)
    for comp in COMPONENTS:
        assert loglik_single(ctx, comp, 0.0) == base
    for comp in ("G", "O", "GuO"):
        assert loglik_combined(ctx, comp, 0.0, 0.0) == base
    assert base == pytest.approx(sum(-math.log(c.pool) for c in ctx if c.pool >= 1))


def test_marginal_consistency(medium_generation):
    _, ctx = replay(medium_generation.events)
    for comp in ("G", "O", "GuO"):
        for p in (0.1, 0.37, 0.9):
            assert loglik_combined(ctx, comp, p, 0.0) == pytest.approx(
                loglik_single(ctx, comp, p), rel=1e-12)
        assert loglik_combined(ctx, comp, 0.0, 0.4) == pytest.approx(
            loglik_single(ctx, "Delta", 0.4), rel=1e-12)


def _fixture_contexts():
    # eight follows with overlapping shortcut and triadic indicators
    rows = [
        dict(pool=5, n_g=1, is_g=1, n_guo=2, is_guo=1, n_tri=2, is_tri=1),
        dict(pool=7, n_g=2, is_g=0, n_guo=3, is_guo=1, n_o=1, is_o=1, n_tri=3, is_tri=0),
        dict(pool=9, n_tri=4, is_tri=1),
        dict(pool=3),
        dict(pool=12, n_o=2, is_o=1, n_guo=2, is_guo=1),
        dict(pool=6, n_g=1, n_guo=1, n_tri=1, is_tri=1),
        dict(pool=4, n_g=2, is_g=1, n_o=2, is_o=1, n_guo=3, is_guo=1, n_tri=2, is_tri=1),
        dict(pool=20, n_tri=5),
    ]
    return [make_ctx(link_index=30 + i, **r) for i, r in enumerate(rows)]


@pytest.mark.parametrize("comp", COMPONENTS)
@pytest.mark.parametrize("p", [0.0, 0.25, 0.5, 0.83])
def test_single_exact_oracle(comp, p):
    ctx = _fixture_contexts()
    want = exact_loglik(ctx, {comp: p, "Rand": 1 - p})
    assert loglik_single(ctx, comp, p) == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("comp", ["G", "O", "GuO"])
@pytest.mark.parametrize("p1, p2", [(0.1, 0.7), (0.3, 0.3), (0.0, 0.5), (0.6, 0.0), (0.2, 0.8)])
def test_combined_exact_oracle(comp, p1, p2):
    ctx = _fixture_contexts()
    q = 1 - p1 - p2
    want = exact_loglik(ctx, {comp: p1, "Delta": p2, "Rand": q})
    assert loglik_combined(ctx, comp, p1, p2) == pytest.approx(want, rel=1e-12)


@given(st.floats(0, 1), st.floats(0, 1))
def test_combined_matches_oracle_property(a, b):
    p1, p2 = a * (1 - b), b
    if p1 + p2 > 1:
        return
    ctx = _fixture_contexts()
    want = exact_loglik(ctx, {"GuO": p1, "Delta": p2, "Rand": max(0.0, 1 - p1 - p2)})
    got = loglik_combined(ctx, "GuO", p1, p2)
    if math.isinf(want):
        assert got == -math.inf
    else:
        assert got == pytest.approx(want, rel=1e-9)


def test_minus_infinity_at_p_one():
    ctx = _fixture_contexts()
    assert loglik_single(ctx, "Delta", 1.0) == -math.inf
    assert loglik_combined(ctx, "G", 0.5, 0.5) == -math.inf


def test_probability_validation():
    ctx = _fixture_contexts()
    with pytest.raises(ValueError):
        loglik_single(ctx, "G", 1.5)
    with pytest.raises(ValueError):
        loglik_combined(ctx, "G", 0.7, 0.7)
    with pytest.raises(ValueError):
        loglik_combined(ctx, "Delta", 0.1, 0.1)
    with pytest.raises(ValueError):
        fit_single(ctx, "Delta", step=0.2)


def test_all_zero_indicators_fit_zero():
    ctx = [make_ctx(link_index=20 + i, n_tri=3, n_g=2, n_guo=2) for i in range(30)]
    f = fit_single(ctx, "Delta")
    assert f.params["p"] == 0.0 and f.boundary_flag
    assert f.loglik == rand_baseline(ctx)
    c = fit_combined(ctx, "G")
    assert c.params == {"p1": 0.0, "p2": 0.0}


def test_fit_needs_two_links():
    with pytest.raises(FitError):
        fit_single([make_ctx()], "G")


def test_fit_matches_dense_grid():
    ctx = _fixture_contexts()
    f = fit_single(ctx, "Delta")
    p = np.linspace(0, 1, 100_001)[:-1]
    dense = max(loglik_single(ctx, "Delta", x) for x in p[::10])
    assert f.loglik >= dense - 1e-9
    assert f.grid_resolution <= 1e-3
    assert f.loglik <= 0


def test_fit_combined_refines(medium_generation):
    _, ctx = replay(medium_generation.events)
    f = fit_combined(ctx, "GuO")
    p1, p2 = f.params["p1"], f.params["p2"]
    assert f.grid_resolution <= 1e-3
    assert p1 >= 0 and p2 >= 0 and p1 + p2 <= 1
    for d1, d2 in ((1e-3, 0), (-1e-3, 0), (0, 1e-3), (0, -1e-3)):
        a, b = p1 + d1, p2 + d2
        if a >= 0 and b >= 0 and a + b <= 1:
            assert loglik_combined(ctx, "GuO", a, b) <= f.loglik + 1e-9


def test_random_mix_fits_near_zero():
    # the random term must match the generator's uniform choice among users
    cfg = GeneratorConfig(seed=3, n_events=20_000, mix=StrategyMix(0, 0, 1))
    _, ctx = replay(generate(cfg).events, ReplayOptions(pool_mode="users"))
    f = fit_combined(ctx, "GuO")
    assert f.params["p1"] <= 0.02 and f.params["p2"] <= 0.02


def test_recovery_where_every_strategy_was_available():
    # fallbacks to random happen only when a candidate set is empty; on links
    # where both sets were available the planted weights are identifiable
    mix = StrategyMix(0.12, 0.71, 0.17)
    g = generate(GeneratorConfig(seed=2, n_events=60_000, mix=mix, rates=(0.01, 0.19, 0.3, 0.5)))
    _, ctx = replay(g.events, ReplayOptions(pool_mode="users"))
    sub = ctx.subset((ctx.n_guo > 0) & (ctx.n_tri > 0))
    f = fit_combined(sub, "GuO")
    assert abs(f.params["p1"] - 0.12) <= 0.03
    assert abs(f.params["p2"] - 0.71) <= 0.03


def test_model_comparison_ordering(medium_generation):
    _, ctx = replay(medium_generation.events)
    ranked = model_comparison(fit_all(ctx))
    names = [f.spec.name for f in ranked]
    assert names[-1] == "Rand"
    assert ranked[0].spec.kind == "Combined"
    assert [f.loglik for f in ranked] == sorted((f.loglik for f in ranked), reverse=True)
    assert model_comparison([ranked[0]]) == [ranked[0]]


def test_model_comparison_rejects_mixed_provenance(medium_generation, small_generation):
    _, a = replay(medium_generation.events)
    _, b = replay(small_generation.events)
    with pytest.raises(ValueError):
        model_comparison([fit_rand(a), fit_rand(b)])


def test_order_invariance(medium_generation):
    _, ctx = replay(medium_generation.events)
    rev = as_table(list(ctx)[::-1])
    for p1, p2 in ((0.1, 0.6), (0.3, 0.2)):
        assert loglik_combined(rev, "G", p1, p2) == pytest.approx(
            loglik_combined(ctx, "G", p1, p2), rel=1e-9)


def test_threads_agree(medium_generation):
    _, ctx = replay(medium_generation.events)
    p1, p2, a = loglik_surface(ctx, "GuO", step=0.05, threads=1)
    _, _, b = loglik_surface(ctx, "GuO", step=0.05, threads=3)
    np.testing.assert_allclose(a, b, rtol=1e-6)
    assert fit_combined(ctx, "G", threads=1) == fit_combined(ctx, "G", threads=3)


def test_curve_shape(medium_generation):
    _, ctx = replay(medium_generation.events)
    p, ll = loglik_curve(ctx, "Delta", step=0.01)
    assert p[0] == 0 and p[-1] == 1 and len(p) == 101
    assert ll[0] == rand_baseline(ctx)
    # concave: one interior peak
    d = np.diff(ll[np.isfinite(ll)])
    assert (np.diff(np.sign(d)) <= 0).all()


def test_strategy_spec():
    assert StrategySpec(()).name == "Rand" and StrategySpec(()).kind == "Baseline"
    assert StrategySpec(("Delta",)).kind == "Single"
    assert StrategySpec(("GuO", "Delta")).kind == "Combined"
    with pytest.raises(ValueError):
        StrategySpec(("G", "GuO"))


def test_pool_mode_changes_only_random_term(medium_generation):
    _, a = replay(medium_generation.events)
    _, b = replay(medium_generation.events, ReplayOptions(pool_mode="users"))
    assert rand_baseline(a) != rand_baseline(b)
