"""Gradient boosting over a finite symmetric weak-learner class.

The weak learner is modelled as an SQ-style oracle that may return any atom
whose residual correlation is within ``eps_t`` of the class maximum.  Since
the class is finite, the maximum is an exact scan, so every progress, dual
and rate inequality can be checked deterministically along a trace.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .parallel import derive_rng
from .population import (
    DEFAULT_ATOL,
    AnchorCertificate,
    ContractError,
    Population,
    Predictor,
    as_predictor,
    check_anchor_bound,
    disagreement,
    midpoint,
    mse,
)

SPAN_TOL = 1e-9


class ClassInvariantError(ContractError):
    """A weak-learner class invariant (symmetry, normalisation, non-degeneracy) failed."""


class NotInSpanError(ContractError):
    """The predictor is not representable by the atoms on the support."""


class WeakLearnerClass:
    """Finite class ``C`` closed under negation, normalised to ``||g|| <= 1``.

    ``base`` holds one representative per ``{g, -g}`` pair; the full class is
    ``base`` followed by its negations, so atom ``j`` and atom ``j + m`` are
    negatives of each other.  Each representative is divided by
    ``max(||g||, 1)`` at construction.
    """

    def __init__(self, atoms: Sequence, P: Population, names: Sequence[str] | None = None,
                 normalize: bool = True):
        names = list(names) if names is not None else [f"g{i}" for i in range(len(atoms))]
        if len(names) != len(atoms):
            raise ContractError("names and atoms differ in length")
        reps: list[np.ndarray] = []
        rep_names: list[str] = []
        sw = np.sqrt(P.w)[:, None]
        for a, name in zip(atoms, names):
            v = as_predictor(a).values
            if v.shape != P.Y.shape:
                raise ContractError(f"atom {name} has shape {v.shape}, population {P.Y.shape}")
            nrm = math.sqrt(float(np.sum((sw * v) ** 2)))
            if nrm <= 1e-14:
                raise ClassInvariantError(f"atom {name} is the zero predictor")
            if normalize:
                v = v / max(nrm, 1.0)
            elif nrm > 1.0 + 1e-12:
                raise ClassInvariantError(f"atom {name} has norm {nrm} > 1")
            if any(np.array_equal(v, r) or np.array_equal(v, -r) for r in reps):
                continue
            reps.append(v)
            rep_names.append(name)
        if not reps:
            raise ContractError("weak-learner class is empty")
        self.P = P
        base = np.stack(reps)
        base.setflags(write=False)
        self.base = base
        full = np.concatenate([base, -base])
        full.setflags(write=False)
        self.atoms = full
        self.names = tuple(["+" + n for n in rep_names] + ["-" + n for n in rep_names])

    def __len__(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_base(self) -> int:
        return self.base.shape[0]

    def __repr__(self) -> str:
        return f"WeakLearnerClass(atoms={len(self)}, N={self.P.size}, d={self.P.label_dim})"

    def atom(self, j: int) -> Predictor:
        return Predictor(self.atoms[j])

    def correlations(self, field_values) -> np.ndarray:
        """``E<u(x), g(x)>`` for every atom ``g``."""
        u = as_predictor(field_values).values
        return np.einsum("j,ajd,jd->a", self.P.w, self.atoms, u)

    def atom_norms_sq(self) -> np.ndarray:
        return np.einsum("j,ajd,ajd->a", self.P.w, self.atoms, self.atoms)

    def combine(self, coef) -> Predictor:
        """``sum_j coef_j base_j``."""
        return Predictor(np.tensordot(np.asarray(coef, dtype=float), self.base, axes=1))

    @cached_property
    def span_model(self):
        from .stacking import ols_span

        return ols_span([Predictor(b) for b in self.base], self.P)

    @property
    def span_risk(self) -> float:
        """``R(V(C))``, the least-squares risk over the span of the class."""
        return self.span_model.risk

    @cached_property
    def _atom_anorms(self) -> np.ndarray:
        return np.array([atomic_norm(Predictor(b), self) for b in self.base])

    def atom_atomic_norm(self, j: int) -> float:
        return float(self._atom_anorms[j % self.n_base])


def atomic_norm(f, C: WeakLearnerClass, P: Population | None = None) -> float:
    """``inf { sum |a_j| : f = sum a_j g_j }`` over the atoms of ``C``.

    The coefficient set is the affine space ``c0 + null(B)`` where ``c0`` is
    the minimum-norm representation; the infimum of ``||c0 + N z||_1`` is a
    small linear program (skipped when the representation is unique).
    """
    P = P or C.P
    v = as_predictor(f).values
    if v.shape != P.Y.shape:
        raise ContractError(f"predictor shape {v.shape} does not match population {P.Y.shape}")
    sw = np.repeat(np.sqrt(P.w), P.label_dim)
    A = (C.base.reshape(C.n_base, -1) * sw).T
    b = v.reshape(-1) * sw
    U, s, Vt = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(s > max(A.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)))
    c0 = Vt[:rank].T @ ((U[:, :rank].T @ b) / s[:rank])
    resid = float(np.linalg.norm(A @ c0 - b))
    if resid > SPAN_TOL * max(1.0, float(np.linalg.norm(b))):
        raise NotInSpanError(f"predictor lies outside span(C): projection residual {resid:.3e}")
    m = C.n_base
    if rank == m:
        return float(np.abs(c0).sum())
    N = Vt[rank:].T
    q = N.shape[1]
    # variables [z (free, q), t (>= 0, m)]; minimise sum t with |c0 + N z| <= t
    cost = np.concatenate([np.zeros(q), np.ones(m)])
    A_ub = np.block([[N, -np.eye(m)], [-N, -np.eye(m)]])
    b_ub = np.concatenate([-c0, c0])
    bounds = [(None, None)] * q + [(0, None)] * m
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"atomic-norm LP failed: {res.message}")
    alpha = c0 + N @ res.x[:q]
    return float(np.abs(alpha).sum())


def tau_star(C: WeakLearnerClass) -> tuple[Predictor, float]:
    """Span-optimal predictor ``f*`` and its atomic norm ``tau*``."""
    fstar = C.span_model.compiled
    return fstar, atomic_norm(fstar, C)


# -- SQ oracle ------------------------------------------------------------------------

class OracleMode(str, Enum):
    EXACT = "exact"
    ADVERSARIAL_FLOOR = "adversarial_floor"
    RANDOM_FEASIBLE = "random_feasible"


@dataclass(frozen=True)
class SqOracle:
    mode: OracleMode = OracleMode.EXACT
    eps_schedule: tuple[float, ...] | float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", OracleMode(self.mode))
        if not isinstance(self.eps_schedule, (int, float)):
            object.__setattr__(self, "eps_schedule", tuple(float(e) for e in self.eps_schedule))
        if any(e < 0 for e in self.schedule(1)):
            raise ContractError("oracle errors must be non-negative")

    def eps(self, t: int) -> float:
        if isinstance(self.eps_schedule, (int, float)):
            return float(self.eps_schedule)
        if t > len(self.eps_schedule):
            raise ContractError(f"eps schedule has {len(self.eps_schedule)} entries; step {t} requested")
        return self.eps_schedule[t - 1]

    def schedule(self, k: int) -> list[float]:
        if isinstance(self.eps_schedule, (int, float)):
            return [float(self.eps_schedule)] * k
        return list(self.eps_schedule[:k]) if k <= len(self.eps_schedule) else list(self.eps_schedule)


def select_atom(corrs: np.ndarray, eps: float, mode: OracleMode, rng_factory) -> int:
    """Pick an atom index with ``corr >= max corr - eps`` according to ``mode``."""
    M = corrs.max()
    if mode is OracleMode.EXACT:
        return int(np.argmax(corrs))
    feasible = np.flatnonzero(corrs >= M - eps)
    if mode is OracleMode.ADVERSARIAL_FLOOR:
        return int(feasible[np.argmin(corrs[feasible])])
    return int(rng_factory().choice(feasible))


def sq_query(oracle: SqOracle, r, t: int, C: WeakLearnerClass, P: Population | None = None):
    """Return ``(atom index, corr)`` for residual ``r`` at step ``t``."""
    corrs = C.correlations(r)
    j = select_atom(corrs, oracle.eps(t), oracle.mode, lambda: derive_rng(oracle.seed, t))
    return j, float(corrs[j])


# -- boosting run ---------------------------------------------------------------------

@dataclass(frozen=True)
class BoostStep:
    t: int
    atom: int
    atom_name: str
    corr: float
    alpha: float
    g_norm_sq: float
    mse_prev: float
    mse: float
    E_prev: float
    E: float
    M_exact: float
    eps: float

    @property
    def progress(self) -> float:
        return self.mse_prev - self.mse

    @property
    def progress_floor(self) -> float:
        return self.corr ** 2


@dataclass
class BoostTrace:
    steps: list[BoostStep] = field(default_factory=list)
    span_risk: float = float("nan")
    mse0: float = float("nan")
    coefficients: np.ndarray | None = None

    @property
    def eps(self) -> list[float]:
        return [s.eps for s in self.steps]

    def rows(self, tau: float | None = None) -> list[dict]:
        out, cum = [], 0.0
        for s in self.steps:
            cum += s.eps ** 2
            row = {"t": s.t, "atom": s.atom_name, "corr": s.corr, "alpha": s.alpha,
                   "mse": s.mse, "E_t": s.E}
            if tau is not None:
                row["bound_rhs"] = 8 * tau ** 2 / s.t + cum
            out.append(row)
        return out


def gradient_boost(C: WeakLearnerClass, P: Population, k: int, oracle: SqOracle):
    """Stagewise boosting with exact line search; returns ``(f_k, trace)``."""
    if k < 1:
        raise ContractError("k must be >= 1")
    norms_sq = C.atom_norms_sq()
    R = C.span_risk
    coef = np.zeros(C.n_base)
    f = np.zeros_like(P.Y)
    cur = mse(f, P)
    trace = BoostTrace(span_risk=R, mse0=cur)
    for t in range(1, k + 1):
        r = P.Y - f
        corrs = C.correlations(r)
        eps = oracle.eps(t)
        j = select_atom(corrs, eps, oracle.mode, lambda: derive_rng(oracle.seed, t))
        nsq = float(norms_sq[j])
        if nsq <= 0.0:
            raise ClassInvariantError(f"atom {C.names[j]} has zero norm")
        corr = float(corrs[j])
        alpha = corr / nsq
        f = f + alpha * C.atoms[j]
        coef[j % C.n_base] += alpha if j < C.n_base else -alpha
        new = mse(f, P)
        trace.steps.append(BoostStep(t, j, C.names[j], corr, alpha, nsq, cur, new,
                                     cur - R, new - R, float(corrs.max()), eps))
        cur = new
    trace.coefficients = coef
    return Predictor(f), trace


# -- certification --------------------------------------------------------------------

@dataclass(frozen=True)
class RateRow:
    t: int
    E: float
    rate_rhs: float
    rate_slack: float
    recurrence_slack: float
    progress_rel_err: float
    progress_slack: float
    dual_slack: float


@dataclass(frozen=True)
class GbRateReport:
    tau_star: float
    rows: tuple[RateRow, ...]
    atol: float = DEFAULT_ATOL

    @property
    def max_violation(self) -> float:
        worst = 0.0
        for r in self.rows:
            worst = max(worst, -r.rate_slack, -r.recurrence_slack, -r.dual_slack, -r.progress_slack)
        return worst

    @property
    def progress_ok(self) -> bool:
        return all(r.progress_rel_err <= 1e-10 and r.progress_slack >= -1e-10 for r in self.rows)

    @property
    def dual_ok(self) -> bool:
        return all(r.dual_slack >= -self.atol for r in self.rows)

    @property
    def rate_ok(self) -> bool:
        return all(r.rate_slack >= -self.atol for r in self.rows)

    @property
    def recurrence_ok(self) -> bool:
        return all(r.recurrence_slack >= -self.atol for r in self.rows)

    @property
    def passed(self) -> bool:
        return self.progress_ok and self.dual_ok and self.rate_ok and self.recurrence_ok


def certify_gb_rate(trace: BoostTrace, tau: float, atol: float = DEFAULT_ATOL) -> GbRateReport:
    """Check progress, dual, recurrence and ``8 tau^2 / t + sum eps^2`` along a trace."""
    rows, cum = [], 0.0
    for s in trace.steps:
        cum += s.eps ** 2
        exact_progress = s.corr ** 2 / s.g_norm_sq
        rel = abs(s.progress - exact_progress) / max(1.0, abs(exact_progress), s.mse_prev)
        if tau > 0:
            rate_rhs = 8 * tau ** 2 / s.t + cum
            rec_rhs = max(s.E_prev / (2 * tau) - s.eps, 0.0) ** 2
            dual_slack = s.M_exact - s.E_prev / (2 * tau)
        else:
            # f* = 0: only the oracle error term remains and the gap must already vanish
            rate_rhs = cum
            rec_rhs = 0.0
            dual_slack = -max(s.E_prev, 0.0)
        rows.append(RateRow(s.t, s.E, rate_rhs, rate_rhs - s.E, (s.E_prev - s.E) - rec_rhs, rel,
                            s.progress - s.progress_floor, dual_slack))
    return GbRateReport(tau, tuple(rows), atol)


@dataclass(frozen=True)
class TwoRunReport:
    anchor: AnchorCertificate
    identity_value: float
    rate_rhs: float
    D: float
    atol: float = DEFAULT_ATOL

    @property
    def rate_slack(self) -> float:
        return self.rate_rhs - self.D

    @property
    def ordering_ok(self) -> bool:
        return (self.identity_value <= self.anchor.rhs + self.atol
                and self.anchor.rhs <= self.rate_rhs + self.atol)

    @property
    def passed(self) -> bool:
        return self.anchor.passed and self.rate_slack >= -self.atol and self.ordering_ok


def certify_gb_two_run(f1, trace1: BoostTrace, f2, trace2: BoostTrace, tau: float,
                       P: Population, atol: float = DEFAULT_ATOL) -> TwoRunReport:
    """Anchor-form and explicit-rate disagreement bounds for two boosting runs.

    Both runs are linear combinations of atoms, so their midpoint lies in
    ``V(C)`` and the anchor risk is ``R(V(C))``.
    """
    k1, k2 = len(trace1.steps), len(trace2.steps)
    if k1 != k2:
        raise ContractError("both runs must use the same number of iterations")
    R = trace1.span_risk
    cert = check_anchor_bound(f1, f2, R, P, atol)
    ident = 2.0 * (mse(f1, P) + mse(f2, P) - 2.0 * mse(midpoint(f1, f2), P))
    rhs = 32 * tau ** 2 / k1 + 2.0 * (sum(e ** 2 for e in trace1.eps) + sum(e ** 2 for e in trace2.eps))
    return TwoRunReport(cert, ident, rhs, disagreement(f1, f2, P), atol)


def random_weak_class(rng: np.random.Generator, P: Population, n_base: int,
                      include_label: bool = False) -> WeakLearnerClass:
    """Random Gaussian atoms (optionally including the label direction)."""
    atoms = [Predictor(rng.normal(size=P.Y.shape)) for _ in range(n_base)]
    if include_label:
        atoms[0] = P.label_predictor()
    return WeakLearnerClass(atoms, P)


__all__ = [
    "BoostStep", "BoostTrace", "ClassInvariantError", "GbRateReport", "NotInSpanError",
    "OracleMode", "SqOracle", "TwoRunReport", "WeakLearnerClass", "atomic_norm",
    "certify_gb_rate", "certify_gb_two_run", "gradient_boost", "random_weak_class",
    "select_atom", "sq_query", "tau_star",
]
