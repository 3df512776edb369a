"""Learning-curve agreement certificates for classes closed under midpoints.

A class closed under averaging (depth-d trees into depth-2d trees, size-n
networks into size-2n networks) gives ``D <= 4(R_n - R_2n + eps)``.  Tree
certificates use exact optimal risks and can pass.  Network certificates use
best-found risks, which only upper-bound the class infima, so they can only be
*consistent*.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Mapping

import numpy as np

from .networks import nn_eval, nn_midpoint, train_nn
from .population import (
    AnchorCertificate,
    Population,
    check_local_curve_bound,
    check_midpoint_identity,
    disagreement,
    mse,
)
from .trees import greedy_tree, optimal_tree_levels, tree_midpoint, validate_tree_labels

ATOL = 1e-9
CLOSURE_ATOL = 1e-9


class RiskTag(str, Enum):
    EXACT = "exact"
    PROXY = "upper-bound-proxy"


class Verdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    CONSISTENT = "consistent"
    INCONSISTENT = "inconsistent"


@dataclass(frozen=True)
class CurveCertificate:
    family: str
    level: int
    risk_n: float
    risk_2n: float
    tag_n: RiskTag
    tag_2n: RiskTag
    eps_1: float
    eps_2: float
    D: float
    bound_rhs: float
    verdict: Verdict
    mse_1: float
    mse_2: float
    identity: AnchorCertificate
    closure_max_err: float
    midpoint_complexity: int
    complexity_limit: int
    sc_form_rhs: float
    curve_check: AnchorCertificate
    details: Mapping[str, Any] = field(default_factory=dict)

    @property
    def eps(self) -> float:
        return max(self.eps_1, self.eps_2, 0.0)

    @property
    def slack(self) -> float:
        return self.bound_rhs - self.D

    @property
    def exact(self) -> bool:
        return self.tag_n is RiskTag.EXACT and self.tag_2n is RiskTag.EXACT

    @property
    def closure_ok(self) -> bool:
        return (self.closure_max_err <= CLOSURE_ATOL
                and self.midpoint_complexity <= self.complexity_limit
                and self.identity.passed)

    def as_row(self) -> dict:
        row = {k: v for k, v in asdict(self).items() if k not in ("identity", "curve_check", "details")}
        row["tag_n"] = self.tag_n.value
        row["tag_2n"] = self.tag_2n.value
        row["verdict"] = self.verdict.value
        row["identity_slack"] = self.identity.slack
        row["closure_ok"] = self.closure_ok
        return row


def _verdict(D: float, rhs: float, exact: bool) -> Verdict:
    ok = D <= rhs + ATOL
    if exact:
        return Verdict.PASS if ok else Verdict.FAIL
    return Verdict.CONSISTENT if ok else Verdict.INCONSISTENT


def certify_tree_agreement(P: Population, depth: int, trainer_config: Mapping | None = None,
                           mu: float = 2.0) -> CurveCertificate:
    """Two greedy depth-``depth`` trees against exact optima at ``depth`` and ``2 depth``.

    ``trainer_config`` keys: ``seeds`` (pair), ``restarts``, ``top_k``.
    """
    cfg = {"seeds": (0, 1), "restarts": 4, "top_k": 3, **(trainer_config or {})}
    validate_tree_labels(P)
    levels = optimal_tree_levels(P, 2 * depth)
    R_d, R_2d = levels.risk(depth), levels.risk(2 * depth)
    s1, s2 = cfg["seeds"]
    t1 = greedy_tree(P, depth, seed=s1, restarts=cfg["restarts"], top_k=cfg["top_k"])
    t2 = greedy_tree(P, depth, seed=s2, restarts=cfg["restarts"], top_k=cfg["top_k"])
    f1, f2 = t1.compile(P), t2.compile(P)
    m1, m2 = mse(f1, P), mse(f2, P)
    eps = max(m1 - R_d, m2 - R_d, 0.0)
    D = disagreement(f1, f2, P)
    mid = tree_midpoint(t1, t2)
    closure_err = float(np.abs(mid.predict(P.X) - 0.5 * (f1.values + f2.values)).max())
    rhs = 4.0 * (R_d - R_2d + eps)
    return CurveCertificate(
        family="tree", level=depth, risk_n=R_d, risk_2n=R_2d,
        tag_n=RiskTag.EXACT, tag_2n=RiskTag.EXACT, eps_1=m1 - R_d, eps_2=m2 - R_d,
        D=D, bound_rhs=rhs, verdict=_verdict(D, rhs, True),
        mse_1=m1, mse_2=m2, identity=check_midpoint_identity(f1, f2, P),
        closure_max_err=closure_err, midpoint_complexity=mid.depth, complexity_limit=2 * depth,
        sc_form_rhs=(8.0 / mu) * (R_d - R_2d + eps),
        curve_check=check_local_curve_bound(f1, f2, R_d, R_2d, eps, P),
        details={"trees": (t1.to_dict(), t2.to_dict()), "midpoint_mse": mse(mid.compile(P), P)},
    )


def certify_nn_agreement(P: Population, size: int, trainer_config: Mapping | None = None,
                         mu: float = 2.0) -> CurveCertificate:
    """Two size-``size`` networks checked against best-found risks at sizes n and 2n.

    The level-2n proxy is the better of a fresh size-2n fit and the midpoint
    network itself, which lies in the size-2n class.  ``trainer_config`` keys:
    ``seeds`` (pair), ``restarts``, ``steps``, ``lr``, ``seed_2n``.
    """
    cfg = {"seeds": (0, 1), "restarts": 1, "steps": 5000, "lr": 1e-2, "seed_2n": 2,
           **(trainer_config or {})}
    train = {k: cfg[k] for k in ("restarts", "steps", "lr")}
    s1, s2 = cfg["seeds"]
    n1, r1 = train_nn(P, size, seed=s1, **train)
    n2, r2 = train_nn(P, size, seed=s2, **train)
    _, r_big = train_nn(P, 2 * size, seed=cfg["seed_2n"], **train)
    f1, f2 = n1.compile(P), n2.compile(P)
    mid = nn_midpoint(n1, n2)
    r_mid = mse(mid.compile(P), P)
    R_n = min(r1, r2)
    R_2n = min(r_big, r_mid, R_n)
    eps = max(r1 - R_n, r2 - R_n, 0.0)
    D = disagreement(f1, f2, P)
    closure_err = float(np.abs(nn_eval(mid, P.X) - 0.5 * (f1.values + f2.values)).max())
    rhs = 4.0 * (R_n - R_2n + eps)
    return CurveCertificate(
        family="nn", level=size, risk_n=R_n, risk_2n=R_2n,
        tag_n=RiskTag.PROXY, tag_2n=RiskTag.PROXY, eps_1=r1 - R_n, eps_2=r2 - R_n,
        D=D, bound_rhs=rhs, verdict=_verdict(D, rhs, False),
        mse_1=r1, mse_2=r2, identity=check_midpoint_identity(f1, f2, P),
        closure_max_err=closure_err, midpoint_complexity=mid.size, complexity_limit=2 * size,
        sc_form_rhs=(8.0 / mu) * (R_n - R_2n + eps),
        curve_check=check_local_curve_bound(f1, f2, R_n, R_2n, eps, P),
        details={"size_1": n1.size, "size_2": n2.size, "risk_2n_fit": r_big, "risk_midpoint": r_mid},
    )
