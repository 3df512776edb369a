import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dlab.boosting import (
    ClassInvariantError,
    NotInSpanError,
    OracleMode,
    SqOracle,
    WeakLearnerClass,
    atomic_norm,
    certify_gb_rate,
    certify_gb_two_run,
    gradient_boost,
    random_weak_class,
    select_atom,
    sq_query,
    tau_star,
)
from dlab.parallel import derive_rng
from dlab.population import Population, Predictor, disagreement, random_population, weighted_norm

MODES = list(OracleMode)


def unit_vectors(n):
    """Uniform population on ``n`` points with orthonormal indicator predictors."""
    P = Population(np.arange(n, dtype=float), np.zeros(n))
    E = [Predictor(np.sqrt(n) * np.eye(n)[i][:, None]) for i in range(n)]
    return P, E


def grid_min_l1(c0, null_dir):
    """Zooming grid search for ``min_z ||c0 + z n||_1`` (a convex piecewise-linear function)."""
    lo, hi = -10.0, 10.0
    best = None
    for _ in range(12):
        zs = np.linspace(lo, hi, 2001)
        vals = np.abs(c0[None, :] + zs[:, None] * null_dir[None, :]).sum(axis=1)
        i = int(np.argmin(vals))
        best = vals[i]
        step = (hi - lo) / 2000
        lo, hi = zs[i] - 2 * step, zs[i] + 2 * step
    return float(best)


# -- class invariants --------------------------------------------------------------------

def test_class_is_symmetric_and_normalised(rng):
    P = random_population(rng, 10, d=2)
    C = random_weak_class(rng, P, 6)
    m = C.n_base
    np.testing.assert_array_equal(C.atoms[:m], -C.atoms[m:])
    norms = [weighted_norm(C.atom(j), P) for j in range(len(C))]
    assert max(norms) <= 1 + 1e-12


def test_zero_atom_rejected(rng):
    P = random_population(rng, 4)
    with pytest.raises(ClassInvariantError, match="zero"):
        WeakLearnerClass([np.zeros((4, 1))], P)


def test_negated_duplicates_are_collapsed(rng):
    P = random_population(rng, 5)
    g = rng.normal(size=(5, 1))
    C = WeakLearnerClass([g, -g, g.copy()], P)
    assert C.n_base == 1 and len(C) == 2


# -- oracle ------------------------------------------------------------------------------

def test_zero_residual_makes_every_atom_feasible(rng):
    P = random_population(rng, 6)
    C = random_weak_class(rng, P, 4)
    corrs = C.correlations(P.zero_predictor())
    assert np.all(corrs == 0)
    for mode in MODES:
        j = select_atom(corrs, 0.0, mode, lambda: derive_rng(0))
        assert 0 <= j < len(C)


def test_exact_oracle_matches_scan(rng):
    P = random_population(rng, 12, d=2)
    C = random_weak_class(rng, P, 7)
    for _ in range(20):
        r = Predictor(rng.normal(size=P.Y.shape))
        scan = max(range(len(C)), key=lambda j: sum(P.w[i] * float(r.values[i] @ C.atoms[j][i])
                                                    for i in range(P.size)))
        j, corr = sq_query(SqOracle(), r, 1, C)
        assert j == scan


@pytest.mark.parametrize("mode", MODES)
def test_inexact_oracles_are_feasible(rng, mode):
    P = random_population(rng, 12)
    C = random_weak_class(rng, P, 9)
    for t in range(1, 30):
        r = Predictor(rng.normal(size=P.Y.shape))
        eps = float(rng.choice([0.0, 0.01, 0.5, 10.0]))
        j, corr = sq_query(SqOracle(mode, eps, seed=3), r, t, C)
        assert corr >= C.correlations(r).max() - eps


def test_eps_schedule_validation():
    from dlab.population import ContractError

    with pytest.raises(ContractError):
        SqOracle(eps_schedule=(-0.1,))
    o = SqOracle(eps_schedule=(0.1, 0.2))
    assert o.eps(2) == 0.2
    with pytest.raises(ContractError):
        o.eps(3)


# -- boosting runs -------------------------------------------------------------------------

def test_orthogonal_residual_leaves_predictor_unchanged():
    P, E = unit_vectors(3)
    P = Population(P.X, 2.0 * E[0].values, P.w)
    C = WeakLearnerClass([E[1]], P)
    f, trace = gradient_boost(C, P, 1, SqOracle())
    assert trace.steps[0].alpha == 0.0
    np.testing.assert_array_equal(f.values, 0.0)


def test_single_orthonormal_atom_projection():
    P, E = unit_vectors(4)
    c = -1.75
    P = Population(P.X, c * E[0].values, P.w)
    C = WeakLearnerClass([E[0]], P)
    f, trace = gradient_boost(C, P, 1, SqOracle())
    np.testing.assert_allclose(f.values, c * E[0].values, atol=1e-14)
    assert trace.steps[0].mse == pytest.approx(0.0, abs=1e-28)


def test_exact_trace_is_monotone_with_progress_floor(rng):
    P = random_population(rng, 20, d=2)
    C = random_weak_class(rng, P, 10)
    _, trace = gradient_boost(C, P, 40, SqOracle())
    for s in trace.steps:
        assert s.mse <= s.mse_prev
        assert s.progress >= s.progress_floor - 1e-10


# -- atomic norm and tau* ----------------------------------------------------------------

def test_atomic_norm_orthonormal_cases():
    P, E = unit_vectors(3)
    C = WeakLearnerClass(E[:2], P)
    assert atomic_norm(P.zero_predictor(), C) == 0.0
    assert atomic_norm(E[0], C) == pytest.approx(1.0, abs=1e-12)
    for a, b in [(0.3, -2.0), (-1.5, 0.0), (4.0, 4.0)]:
        f = Predictor(a * E[0].values + b * E[1].values)
        assert atomic_norm(f, C) == pytest.approx(abs(a) + abs(b), abs=1e-9)
    with pytest.raises(NotInSpanError):
        atomic_norm(E[2], C)


def test_atomic_norm_lp_matches_grid_search(rng):
    for _ in range(10):
        P = random_population(rng, 2)
        C = random_weak_class(rng, P, 3)
        f = Predictor(rng.normal(size=P.Y.shape))
        B = C.base.reshape(C.n_base, -1).T * np.sqrt(P.w)[:, None]
        b = f.values.reshape(-1) * np.sqrt(P.w)
        c0 = np.linalg.lstsq(B, b, rcond=None)[0]
        null_dir = np.linalg.svd(B)[2][-1]
        assert atomic_norm(f, C) == pytest.approx(grid_min_l1(c0, null_dir), abs=1e-6)


def test_tau_star_when_label_is_an_atom(rng):
    P = random_population(rng, 6)
    y = P.Y / weighted_norm(P.label_predictor(), P)
    P = Population(P.X, y, P.w)
    C = WeakLearnerClass([P.label_predictor()] + [rng.normal(size=P.Y.shape) for _ in range(2)], P)
    fstar, tau = tau_star(C)
    np.testing.assert_allclose(fstar.values, P.Y, atol=1e-10)
    assert tau == pytest.approx(1.0, abs=1e-9)


def test_tau_star_orthogonal_class():
    P, E = unit_vectors(5)
    y = 0.4 * E[0].values - 1.1 * E[1].values + 0.7 * E[4].values
    P = Population(P.X, y, P.w)
    C = WeakLearnerClass(E[:3], P)
    fstar, tau = tau_star(C)
    np.testing.assert_allclose(fstar.values, 0.4 * E[0].values - 1.1 * E[1].values, atol=1e-12)
    assert tau == pytest.approx(1.5, abs=1e-9)


def test_tau_star_matches_grid_search(rng):
    for _ in range(5):
        P = random_population(rng, 2)
        C = random_weak_class(rng, P, 3)
        fstar, tau = tau_star(C)
        B = C.base.reshape(C.n_base, -1).T * np.sqrt(P.w)[:, None]
        b = fstar.values.reshape(-1) * np.sqrt(P.w)
        c0 = np.linalg.lstsq(B, b, rcond=None)[0]
        assert tau == pytest.approx(grid_min_l1(c0, np.linalg.svd(B)[2][-1]), abs=1e-6)


# -- rates and two-run agreement ---------------------------------------------------------

def _instance(seed, n_base=6, n=16, d=1):
    rng = np.random.default_rng(seed)
    P = random_population(rng, n, d=d)
    C = random_weak_class(rng, P, n_base)
    return P, C, tau_star(C)[1]


def test_exact_first_step_within_8_tau_squared():
    P, C, tau = _instance(0)
    _, trace = gradient_boost(C, P, 1, SqOracle())
    assert trace.steps[0].E <= 8 * tau ** 2


@pytest.mark.parametrize("seed", range(3))
def test_zero_error_rate_all_steps(seed):
    P, C, tau = _instance(seed)
    _, trace = gradient_boost(C, P, 64, SqOracle())
    rep = certify_gb_rate(trace, tau)
    assert rep.passed
    assert all(s.E <= 8 * tau ** 2 / s.t + 1e-9 for s in trace.steps)


@pytest.mark.parametrize("mode", MODES)
def test_injected_error_rate(mode):
    P, C, tau = _instance(7, d=2)
    _, trace = gradient_boost(C, P, 64, SqOracle(mode, 0.01, seed=5))
    rep = certify_gb_rate(trace, tau)
    assert rep.rate_ok and rep.progress_ok and rep.dual_ok and rep.recurrence_ok


def test_identical_exact_runs_agree():
    P, C, tau = _instance(3)
    f1, t1 = gradient_boost(C, P, 10, SqOracle())
    f2, t2 = gradient_boost(C, P, 10, SqOracle())
    assert disagreement(f1, f2, P) == 0.0
    assert certify_gb_two_run(f1, t1, f2, t2, tau, P).passed


def test_adversarial_vs_exact_two_run():
    P, C, tau = _instance(4, d=2)
    f1, t1 = gradient_boost(C, P, 32, SqOracle())
    f2, t2 = gradient_boost(C, P, 32, SqOracle(OracleMode.ADVERSARIAL_FLOOR, 0.01))
    rep = certify_gb_two_run(f1, t1, f2, t2, tau, P)
    assert rep.passed and rep.anchor.passed and rep.rate_slack >= 0
    # anchor form never looser than the identity value
    assert rep.identity_value <= rep.anchor.rhs + 1e-9


# -- properties -------------------------------------------------------------------------

@st.composite
def boosting_case(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    P = random_population(rng, draw(st.integers(2, 14)), d=draw(st.integers(1, 3)))
    C = random_weak_class(rng, P, draw(st.integers(1, 8)))
    mode = draw(st.sampled_from(MODES))
    eps = draw(st.sampled_from([0.0, 0.01, 0.1]))
    return P, C, SqOracle(mode, eps, seed=seed % 1000)


@given(boosting_case())
def test_property_step_progress_dual_and_feasibility(case):
    P, C, oracle = case
    tau = tau_star(C)[1]
    _, trace = gradient_boost(C, P, 12, oracle)
    for s in trace.steps:
        exact = s.corr ** 2 / s.g_norm_sq
        assert abs(s.progress - exact) <= 1e-10 * max(1.0, exact, s.mse_prev)
        assert s.corr >= s.M_exact - s.eps
        if tau > 0:
            assert s.M_exact >= s.E_prev / (2 * tau) - 1e-9


@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_property_atomic_norm_is_a_norm(seed, a, b):
    rng = np.random.default_rng(seed)
    P = random_population(rng, 3)
    C = random_weak_class(rng, P, 4)
    f, g = C.combine(rng.normal(size=4)), C.combine(rng.normal(size=4))
    nf, ng = atomic_norm(f, C), atomic_norm(g, C)
    assert atomic_norm(a * f, C) == pytest.approx(abs(a) * nf, abs=1e-8, rel=1e-8)
    assert atomic_norm(f + g, C) <= nf + ng + 1e-8
    assert atomic_norm(a * f + b * g, C) <= abs(a) * nf + abs(b) * ng + 1e-8


def test_property_two_run_bound_over_mode_pairs():
    P, C, tau = _instance(11, d=2)
    for (m1, e1), (m2, e2) in itertools.product(itertools.product(MODES, [0.0, 0.01, 0.05]), repeat=2):
        f1, t1 = gradient_boost(C, P, 16, SqOracle(m1, e1, seed=1))
        f2, t2 = gradient_boost(C, P, 16, SqOracle(m2, e2, seed=2))
        assert certify_gb_two_run(f1, t1, f2, t2, tau, P).passed
