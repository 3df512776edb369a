"""Frank-Wolfe boosting over the atomic-norm ball ``K_tau = tau * conv(C)``.

Iterates are convex combinations of rescaled atoms, so they never leave
``K_tau``.  The anchor risk ``R(K_tau)`` is computed by a constrained solve
whose suboptimality is certified by the Frank-Wolfe duality gap; each bound
check uses whichever end of the resulting risk interval makes it stricter.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .boosting import SqOracle, WeakLearnerClass, atomic_norm, select_atom
from .losses import SmoothStronglyConvexLoss, SquaredLoss
from .parallel import derive_rng
from .population import (
    DEFAULT_ATOL,
    ContractError,
    Population,
    Predictor,
    as_predictor,
    check_anchor_bound,
    disagreement,
    midpoint,
)

FEAS_TOL = 1e-8
RATE_TOL = 1e-8
GAP_TARGET = 1e-8


def fw_gap(f, C: WeakLearnerClass, tau: float, loss: SmoothStronglyConvexLoss,
           P: Population) -> tuple[float, float]:
    """``(G(f), M(f))``.

    The supremum over ``K_tau`` of the linear functional is attained at a
    vertex ``+-tau * atom``, so ``G(f) = E<grad, f> + tau * max_atom E<-grad, g>``.
    """
    v = as_predictor(f).values
    grad = loss.gradient(P.Y, v)
    corr = C.correlations(-grad)
    M = float(np.max(np.abs(corr)))
    return float(P.w @ np.einsum("ij,ij->i", grad, v)) + tau * float(corr.max()), M


def fw_linear_oracle(C: WeakLearnerClass, grad_field, eps: float, mode, rng_factory=None) -> int:
    """Atom index whose correlation with ``-grad`` is within ``eps`` of the best."""
    corrs = C.correlations(-as_predictor(grad_field).values)
    return select_atom(corrs, eps, SqOracle(mode).mode, rng_factory or (lambda: derive_rng(0)))


# -- the algorithm ------------------------------------------------------------------

@dataclass(frozen=True)
class FwStep:
    t: int
    atom: int
    atom_name: str
    scale: float
    alpha: float
    risk_prev: float
    risk: float
    gap_prev: float
    M_prev: float
    eps: float
    atomic_norm: float
    coef_l1: float


@dataclass
class FwTrace:
    tau: float
    steps: list[FwStep] = field(default_factory=list)
    risk0: float = float("nan")
    coefficients: np.ndarray | None = None

    @property
    def eps(self) -> list[float]:
        return [s.eps for s in self.steps]


def frank_wolfe(C: WeakLearnerClass, P: Population, tau: float, k: int,
                loss: SmoothStronglyConvexLoss, oracle: SqOracle, check_norm: bool = True):
    """Run ``k`` Frank-Wolfe steps with ``alpha_t = 2/(t+1)``; returns ``(f_k, trace)``.

    ``g_t = tau * s_t / ||s_t||_A`` with the atomic norm of the chosen atom
    computed by the LP (it can be below 1 when an atom is a cheap combination
    of others).  With ``check_norm`` the atomic norm of every iterate is
    recomputed by LP for the feasibility certificate.
    """
    if tau < 0 or k < 1:
        raise ContractError("need tau >= 0 and k >= 1")
    loss.validate_labels(P.Y)
    f = np.zeros_like(P.Y)
    coef = np.zeros(C.n_base)
    trace = FwTrace(tau=tau, risk0=loss.risk(f, P))
    cur = trace.risk0
    for t in range(1, k + 1):
        grad = loss.gradient(P.Y, f)
        corrs = C.correlations(-grad)
        eps = oracle.eps(t)
        j = select_atom(corrs, eps, oracle.mode, lambda: derive_rng(oracle.seed, t))
        gap = float(P.w @ np.einsum("ij,ij->i", grad, f)) + tau * float(corrs.max())
        scale = tau / C.atom_atomic_norm(j) if tau > 0 else 0.0
        alpha = 2.0 / (t + 1)
        f = f + alpha * (scale * C.atoms[j] - f)
        coef *= (1.0 - alpha)
        coef[j % C.n_base] += alpha * scale * (1.0 if j < C.n_base else -1.0)
        new = loss.risk(f, P)
        anorm = atomic_norm(Predictor(f), C) if check_norm else float(np.abs(coef).sum())
        trace.steps.append(FwStep(t, j, C.names[j], scale, alpha, cur, new, gap,
                                  float(np.max(np.abs(corrs))), eps, anorm, float(np.abs(coef).sum())))
        cur = new
    trace.coefficients = coef
    return Predictor(f), trace


# -- anchor risk over K_tau -----------------------------------------------------------

@dataclass(frozen=True)
class KtauSolution:
    predictor: Predictor
    coefficients: np.ndarray
    risk_upper: float
    gap: float
    converged: bool

    @property
    def risk_lower(self) -> float:
        """Certified lower bound ``R(f) - G(f) <= R(K_tau)``."""
        return self.risk_upper - max(self.gap, 0.0)


def _risk_and_grad(beta, Bf, P, loss):
    F = np.tensordot(beta, Bf, axes=1)
    val = float(P.w @ loss.value(P.Y, F))
    g = loss.gradient(P.Y, F) * P.w[:, None]
    return val, np.einsum("ajd,jd->a", Bf, g), F


def _polish(beta, Bf, P, loss, tau, iters=30):
    """Newton iterations on the active face of the l1 ball."""
    try:
        loss.hessian(P.Y, np.tensordot(beta, Bf, axes=1))
    except NotImplementedError:
        return beta
    thresh = 1e-9 * max(tau, 1.0)
    S = np.flatnonzero(np.abs(beta) > thresh)
    if S.size == 0:
        return beta
    sgn = np.sign(beta[S])
    on_boundary = np.abs(beta).sum() >= tau * (1 - 1e-7)
    b = beta.copy()
    for _ in range(iters):
        _, g, F = _risk_and_grad(b, Bf, P, loss)
        H_pts = loss.hessian(P.Y, F)
        BS = Bf[S]
        H = np.einsum("j,ajd,jde,bje->ab", P.w, BS, H_pts, BS)
        gS = g[S]
        if on_boundary:
            K = np.zeros((S.size + 1, S.size + 1))
            K[:-1, :-1] = H
            K[:-1, -1] = sgn
            K[-1, :-1] = sgn
            rhs = np.concatenate([-gS, [tau - sgn @ b[S]]])
            step = np.linalg.lstsq(K, rhs, rcond=None)[0][:-1]
        else:
            step = np.linalg.lstsq(H, -gS, rcond=None)[0]
        b_new = b.copy()
        b_new[S] += step
        if np.any(np.sign(b_new[S]) != sgn) or np.abs(b_new).sum() > tau * (1 + 1e-12):
            break
        b = b_new
        if np.linalg.norm(step) <= 1e-15 * max(1.0, np.linalg.norm(b)):
            break
    return b


def risk_over_Ktau(C: WeakLearnerClass, tau: float, loss: SmoothStronglyConvexLoss,
                   P: Population, maxiter: int = 2000) -> KtauSolution:
    """``min_{f in K_tau} R(f)`` with a duality-gap certificate.

    Solved in coefficient space ``{beta : ||beta||_1 <= tau}`` (the atomic
    unit ball of a symmetric finite class is ``conv(C)``) by SLSQP on the
    split variables, followed by Newton polishing on the active face.
    """
    if tau < 0:
        raise ContractError("tau must be >= 0")
    loss.validate_labels(P.Y)
    m = C.n_base
    Bf = C.base
    if tau == 0:
        f0 = np.zeros_like(P.Y)
        gap, _ = fw_gap(f0, C, 0.0, loss, P)
        return KtauSolution(Predictor(f0), np.zeros(m), loss.risk(f0, P), gap, True)

    def obj(x):
        val, g, _ = _risk_and_grad(x[:m] - x[m:], Bf, P, loss)
        return val, np.concatenate([g, -g])

    cons = [{"type": "ineq", "fun": lambda x: tau - x.sum(), "jac": lambda x: -np.ones(2 * m)}]
    res = minimize(obj, np.zeros(2 * m), jac=True, method="SLSQP", bounds=[(0, None)] * (2 * m),
                   constraints=cons, options={"ftol": 1e-16, "maxiter": maxiter})
    beta = res.x[:m] - res.x[m:]
    l1 = np.abs(beta).sum()
    if l1 > tau:
        beta *= tau / l1
    best = beta
    best_gap = fw_gap(C.combine(beta), C, tau, loss, P)[0]
    polished = _polish(beta, Bf, P, loss, tau)
    pol_gap = fw_gap(C.combine(polished), C, tau, loss, P)[0]
    if pol_gap < best_gap:
        best, best_gap = polished, pol_gap
    f = C.combine(best)
    best.setflags(write=False)
    return KtauSolution(f, best, loss.risk(f, P), best_gap, best_gap <= GAP_TARGET)


# -- certification ----------------------------------------------------------------------

@dataclass(frozen=True)
class FwStepCheck:
    t: int
    E: float
    progress_slack: float
    recurrence_slack: float
    rate_rhs: float
    rate_slack: float
    feasibility_slack: float
    gap_vs_M_slack: float
    dual_slack: float


@dataclass(frozen=True)
class FwRateReport:
    rows: tuple[FwStepCheck, ...]
    atol: float = DEFAULT_ATOL

    @property
    def progress_ok(self) -> bool:
        return all(r.progress_slack >= -self.atol for r in self.rows)

    @property
    def recurrence_ok(self) -> bool:
        return all(r.recurrence_slack >= -self.atol for r in self.rows)

    @property
    def rate_ok(self) -> bool:
        return all(r.rate_slack >= -RATE_TOL for r in self.rows)

    @property
    def feasible(self) -> bool:
        return all(r.feasibility_slack >= -FEAS_TOL for r in self.rows)

    @property
    def gap_bound_ok(self) -> bool:
        return all(r.gap_vs_M_slack >= -self.atol for r in self.rows)

    @property
    def dual_ok(self) -> bool:
        return all(r.dual_slack >= -self.atol for r in self.rows)

    @property
    def passed(self) -> bool:
        return (self.progress_ok and self.recurrence_ok and self.rate_ok and self.feasible
                and self.gap_bound_ok and self.dual_ok)


def certify_fw_trace(trace: FwTrace, loss: SmoothStronglyConvexLoss, anchor: KtauSolution,
                     atol: float = DEFAULT_ATOL) -> FwRateReport:
    """Per-step progress, gap recurrence, rate and feasibility checks.

    Gaps ``E_t`` are measured against the certified lower end of ``R(K_tau)``,
    which can only make every check here stricter.
    """
    tau, Lc = trace.tau, loss.smoothness_L
    R_lo = anchor.risk_lower
    rows, cum = [], 0.0
    for s in trace.steps:
        cum += s.eps
        a = s.alpha
        quad = 2.0 * Lc * tau ** 2 * a ** 2
        E_prev, E = s.risk_prev - R_lo, s.risk - R_lo
        drop = s.risk_prev - s.risk
        rate = 8 * Lc * tau ** 2 / (s.t + 1) + 2 * tau / (s.t + 1) * cum
        rows.append(FwStepCheck(
            s.t, E,
            drop - (a * (s.gap_prev - tau * s.eps) - quad),
            drop - (a * (E_prev - tau * s.eps) - quad),
            rate, rate - E,
            tau - s.atomic_norm,
            2 * tau * s.M_prev - s.gap_prev,
            2 * tau * s.M_prev - E_prev,
        ))
    return FwRateReport(tuple(rows), atol)


@dataclass(frozen=True)
class FwAgreementReport:
    D: float
    sc_anchor_rhs: float
    rate_rhs: float
    squared_form_rhs: float | None
    atol: float = DEFAULT_ATOL

    @property
    def anchor_ok(self) -> bool:
        return self.D <= self.sc_anchor_rhs + self.atol

    @property
    def rate_ok(self) -> bool:
        return self.D <= self.rate_rhs + self.atol

    @property
    def coincidence_err(self) -> float:
        if self.squared_form_rhs is None:
            return 0.0
        return abs(self.sc_anchor_rhs - self.squared_form_rhs) / (1.0 + abs(self.squared_form_rhs))

    @property
    def passed(self) -> bool:
        return self.anchor_ok and self.rate_ok and self.coincidence_err <= 1e-10


def certify_fw_agreement(run1, run2, tau: float, k: int, loss: SmoothStronglyConvexLoss,
                         P: Population, anchor: KtauSolution, atol: float = DEFAULT_ATOL) -> FwAgreementReport:
    """Strongly convex anchor bound with ``H = K_tau`` and the explicit-rate bound.

    The anchor bound uses the upper end of the ``R(K_tau)`` interval, which is
    the stricter side for an upper bound on ``D``.
    """
    (f1, tr1), (f2, tr2) = run1, run2
    if len(tr1.steps) != k or len(tr2.steps) != k:
        raise ContractError("both runs must have exactly k steps")
    D = disagreement(f1, f2, P)
    RH = anchor.risk_upper
    c = 4.0 / loss.mu
    sc_rhs = c * (loss.risk(f1, P) - RH) + c * (loss.risk(f2, P) - RH)
    rate = (64 * loss.smoothness_L * tau ** 2 / (loss.mu * (k + 1))
            + 8 * tau / (loss.mu * (k + 1)) * (sum(tr1.eps) + sum(tr2.eps)))
    sq = None
    if isinstance(loss, SquaredLoss):
        sq = check_anchor_bound(f1, f2, RH, P, atol).rhs
    return FwAgreementReport(D, sc_rhs, rate, sq, atol)


def midpoint_in_Ktau(f1, f2, C: WeakLearnerClass, tau: float) -> bool:
    return atomic_norm(midpoint(f1, f2), C) <= tau + FEAS_TOL


__all__ = [
    "FwAgreementReport", "FwRateReport", "FwStep", "FwStepCheck", "FwTrace", "KtauSolution",
    "certify_fw_agreement", "certify_fw_trace", "frank_wolfe", "fw_gap", "fw_linear_oracle",
    "midpoint_in_Ktau", "risk_over_Ktau",
]
