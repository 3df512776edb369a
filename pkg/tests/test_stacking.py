import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dlab.population import ContractError, Population, Predictor, disagreement, random_population
from dlab.stacking import (
    ExplicitMixture,
    ShardTrainer,
    SourceExhaustedError,
    build_tightness_instance,
    check_tightness_closed_forms,
    ols_span,
    random_mixture_source,
    run_stacking_pair,
    stacking_curve,
    tightness_closed_forms,
    verify_tightness,
)


def normal_equations_2x2(g1, g2, y, w):
    """Independent oracle: Cramer's rule on the weighted 2x2 normal equations, by loops."""
    a11 = a12 = a22 = b1 = b2 = 0.0
    for i in range(len(w)):
        for j in range(len(y[i])):
            a11 += w[i] * g1[i][j] * g1[i][j]
            a12 += w[i] * g1[i][j] * g2[i][j]
            a22 += w[i] * g2[i][j] * g2[i][j]
            b1 += w[i] * g1[i][j] * y[i][j]
            b2 += w[i] * g2[i][j] * y[i][j]
    det = a11 * a22 - a12 * a12
    return (b1 * a22 - b2 * a12) / det, (a11 * b2 - a12 * b1) / det


# -- least squares over a span ---------------------------------------------------------

def test_label_in_basis_gives_unit_coefficient(rng):
    P = random_population(rng, 8, d=2)
    fit = ols_span([P.label_predictor()], P)
    assert fit.coefficients[0] == pytest.approx(1.0, abs=1e-12)
    assert fit.risk == pytest.approx(0.0, abs=1e-24)


def test_two_basis_matches_normal_equations(rng):
    for _ in range(20):
        P = random_population(rng, 6, d=int(rng.integers(1, 3)))
        g1, g2 = rng.normal(size=P.Y.shape), rng.normal(size=P.Y.shape)
        fit = ols_span([g1, g2], P)
        c1, c2 = normal_equations_2x2(g1, g2, P.Y, P.w)
        assert fit.coefficients[0] == pytest.approx(c1, abs=1e-10)
        assert fit.coefficients[1] == pytest.approx(c2, abs=1e-10)


def test_compiled_equals_combination_and_min_norm(rng):
    P = random_population(rng, 10)
    g = rng.normal(size=P.Y.shape)
    h = rng.normal(size=P.Y.shape)
    fit = ols_span([g, h, g], P)
    np.testing.assert_allclose(fit.compiled.values,
                               sum(c * b.values for c, b in zip(fit.coefficients, fit.basis)), atol=1e-12)
    # the duplicated direction is split evenly by the minimum-norm solution
    assert fit.coefficients[0] == pytest.approx(fit.coefficients[2], abs=1e-10)
    single = ols_span([g, h], P)
    assert fit.coefficients[0] + fit.coefficients[2] == pytest.approx(single.coefficients[0], abs=1e-10)


def test_lower_bound_weights_match_closed_form():
    P, source, cf = build_tightness_instance(2, 0.5)
    for r in range(1, 5):
        fit = ols_span([source.models[i] for i in range(r)], P)
        np.testing.assert_allclose(fit.coefficients, 1.0 / (r + cf.sigma2), atol=1e-9)


def test_empty_basis_rejected(rng):
    with pytest.raises(ContractError):
        ols_span([], random_population(rng, 3))


# -- sources and single trials -----------------------------------------------------------

def test_mixture_validation_and_reproducible_draws(rng):
    with pytest.raises(ContractError):
        ExplicitMixture([Predictor([[0.0]])], probs=[0.5])
    P = random_population(rng, 5)
    src = random_mixture_source(rng, P, 6)
    a = src.draw_trial(11, (2, 3), 4)
    b = src.draw_trial(11, (2, 3), 4)
    assert a[2] == b[2]
    assert src.draw_trial(12, (2, 3), 4)[2] != a[2] or len(set(a[2])) == 1


def test_point_mass_source_gives_zero_disagreement(rng):
    P = random_population(rng, 7)
    src = ExplicitMixture([Predictor(rng.normal(size=P.Y.shape))])
    rec = run_stacking_pair(src, 3, P, (0, 3, 0))
    assert rec.D == 0.0
    assert rec.R_G == rec.R_Gprime == pytest.approx(rec.R_union, abs=1e-14)
    (_, row), = stacking_curve(src, [2], 5, P)
    assert row.D_hat == 0.0 and row.R_k_hat == pytest.approx(row.R_2k_hat, abs=1e-14)


def test_collision_free_trial_reproduces_closed_forms():
    k, eps = 2, 0.5
    P, source, cf = build_tightness_instance(k, eps)
    for t in range(20):
        rec = run_stacking_pair(source, k, P, (5, k, t))
        if len(set(rec.ids)) == 2 * k:
            assert rec.D == pytest.approx(cf.D0, abs=1e-12)
            assert 0.5 * (rec.R_G + rec.R_Gprime) - rec.R_union == pytest.approx(cf.Delta0, abs=1e-12)
            return
    pytest.fail("no collision-free draw in 20 trials")


def test_pointwise_slack_nonnegative_over_1000_trials(rng):
    P = random_population(rng, 16)
    src = random_mixture_source(rng, P, 12)
    (recs, _), = stacking_curve(src, [4], 1000, P, base_seed=3)
    assert min(r.pointwise_slack for r in recs) >= -1e-9


def test_curve_monotone_and_margin_within_three_stderr(rng):
    P = random_population(rng, 16)
    src = random_mixture_source(rng, P, 12)
    for _, row in stacking_curve(src, [1, 2, 4], 200, P, base_seed=1):
        assert row.R_2k_hat <= row.R_k_hat + 3 * max(row.se_R_k, row.se_R_2k)
        assert row.bound_margin >= -3 * row.stderr
        assert row.passes()


def test_disjoint_shards_exhaust_small_dataset(rng):
    data = random_population(rng, 30, p=2)
    src = ShardTrainer(data, shard_size=10, disjoint=True)
    with pytest.raises(SourceExhaustedError, match="disjoint shards"):
        src.draw_trial(0, (0,), 2)
    G, Gp, _ = src.draw_trial(0, (0,), 1)
    assert G[0].values.shape == data.Y.shape


# -- near-tightness ----------------------------------------------------------------------

def test_tightness_parameters_for_k3():
    cf = tightness_closed_forms(3, 0.5)
    assert cf.sigma2 == 0.1875
    assert cf.m == 5184


def test_ratio_closed_form_agrees_with_exact_arithmetic():
    for k in (1, 2, 3, 7):
        for eps in (Fraction(1, 2), Fraction(1, 10), Fraction(1)):
            s2 = eps * k / 8
            d0 = 2 * k * s2 / (k + s2) ** 2
            delta0 = s2 / (k + s2) - s2 / (2 * k + s2)
            cf = tightness_closed_forms(k, float(eps))
            assert d0 / delta0 == 4 - 2 * s2 / (k + s2)
            assert cf.ratio == pytest.approx(float(d0 / delta0), abs=1e-14)
            assert cf.D0 == pytest.approx(float(d0), abs=1e-15)
            assert cf.Delta0 == pytest.approx(float(delta0), abs=1e-15)
    # eps = 1/2 gives 4 - 2(1/2)/(8 + 1/2) = 66/17 for every k
    assert tightness_closed_forms(3, 0.5).ratio == pytest.approx(66 / 17, abs=1e-15)


@pytest.mark.parametrize("k", [1, 3])
def test_generic_solver_reproduces_closed_forms(k):
    checks = check_tightness_closed_forms(k, 0.5, seed=4)
    assert {c.quantity for c in checks} == {"weight", "risk", "D0", "Delta0", "ratio"}
    assert all(c.passed(1e-9) for c in checks), [c for c in checks if not c.passed(1e-9)]


def test_tightness_monte_carlo_k1():
    rep = verify_tightness(1, 0.5, 2000, base_seed=0)
    assert rep.ratio >= 3.5 - 3 * rep.stderr
    assert rep.ratio <= 4 + 3 * rep.stderr
    assert rep.passed


def test_invalid_tightness_parameters():
    with pytest.raises(ContractError):
        tightness_closed_forms(0, 0.5)
    with pytest.raises(ContractError):
        tightness_closed_forms(1, 1.5)


# -- properties -------------------------------------------------------------------------

@st.composite
def stacking_trial(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    n = draw(st.integers(2, 12))
    d = draw(st.integers(1, 3))
    P = random_population(rng, n, d=d)
    k = draw(st.integers(1, 5))
    G = [Predictor(rng.normal(size=P.Y.shape)) for _ in range(k)]
    Gp = [Predictor(rng.normal(size=P.Y.shape)) for _ in range(k)]
    return P, G, Gp


@given(stacking_trial())
def test_property_span_nesting_and_pointwise_bound(trial):
    P, G, Gp = trial
    h1, h2, hu = ols_span(G, P), ols_span(Gp, P), ols_span(G + Gp, P)
    assert hu.risk <= min(h1.risk, h2.risk) + 1e-10
    D = disagreement(h1.compiled, h2.compiled, P)
    assert 2 * (h1.risk - hu.risk) + 2 * (h2.risk - hu.risk) - D >= -1e-9


@given(stacking_trial())
def test_property_exchangeability(trial):
    P, G, Gp = trial
    hu, hu_swapped = ols_span(G + Gp, P), ols_span(Gp + G, P)
    assert hu.risk == pytest.approx(hu_swapped.risk, abs=1e-12)
    D = disagreement(ols_span(G, P).compiled, ols_span(Gp, P).compiled, P)
    Ds = disagreement(ols_span(Gp, P).compiled, ols_span(G, P).compiled, P)
    assert D == pytest.approx(Ds, abs=1e-12)


@given(stacking_trial(), st.data())
def test_property_multiset_robustness(trial, data):
    P, G, _ = trial
    j = data.draw(st.integers(0, len(G) - 1))
    base, dup = ols_span(G, P), ols_span(G + [G[j]], P)
    assert dup.risk == pytest.approx(base.risk, rel=1e-9, abs=1e-12)
    np.testing.assert_allclose(dup.compiled.values, base.compiled.values, rtol=1e-8, atol=1e-9)


def test_vector_label_bound_coincides_with_factor_four(rng):
    P = random_population(rng, 12, d=3)
    src = random_mixture_source(rng, P, 8)
    for recs, row in stacking_curve(src, [1, 2], 100, P, base_seed=9, mu=2.0):
        assert row.bound_rhs == pytest.approx(4 * (row.R_k_hat - row.R_2k_hat), rel=1e-15, abs=0)
        assert row.passes()
        assert all(r.pointwise_slack >= -1e-9 for r in recs)


def test_curve_requires_trials(rng):
    P = random_population(rng, 4)
    with pytest.raises(ContractError):
        stacking_curve(random_mixture_source(rng, P, 2), [1], 0, P)


def test_ratio_estimate_has_finite_stderr():
    rep = verify_tightness(1, 0.5, 50, base_seed=2)
    assert math.isfinite(rep.stderr) and rep.stderr > 0
