"""Smooth, strongly convex losses over vector predictions, with probe certificates.

A loss acts row-wise: ``value(Y, Pm)`` takes ``(N, d)`` labels and predictions
and returns ``N`` losses.  Any loss used by the Frank-Wolfe experiments must
pass :func:`certify_loss` first; the constants ``mu`` and ``L`` are what the
agreement and rate bounds are evaluated with.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from .population import ContractError, Population, as_predictor


class SmoothStronglyConvexLoss:
    name = "loss"
    mu: float
    smoothness_L: float

    def value(self, Y: np.ndarray, Pm: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, Y: np.ndarray, Pm: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, Y: np.ndarray, Pm: np.ndarray) -> np.ndarray:
        """Per-row Hessians ``(N, d, d)``; optional, used to polish constrained solves."""
        raise NotImplementedError

    def validate_labels(self, Y: np.ndarray) -> None:
        pass

    def sample_labels(self, rng: np.random.Generator, n: int, d: int) -> np.ndarray:
        return rng.normal(size=(n, d))

    def risk(self, f, P: Population) -> float:
        return float(P.w @ self.value(P.Y, as_predictor(f).values))

    def __repr__(self) -> str:
        return f"{type(self).__name__}(mu={self.mu}, L={self.smoothness_L})"


class SquaredLoss(SmoothStronglyConvexLoss):
    """``||y - p||^2``; Hessian ``2 I`` so ``mu = L = 2``."""

    name = "squared"
    mu = 2.0
    smoothness_L = 2.0

    def value(self, Y, Pm):
        r = Y - Pm
        return np.einsum("ij,ij->i", r, r)

    def gradient(self, Y, Pm):
        return 2.0 * (Pm - Y)

    def hessian(self, Y, Pm):
        n, d = Pm.shape
        return np.broadcast_to(2.0 * np.eye(d), (n, d, d))


class RidgeSoftmaxCrossEntropy(SmoothStronglyConvexLoss):
    """Softmax cross-entropy over logits plus ``(mu0/2)||p||^2``.

    Labels must be probability vectors.  The log-sum-exp Hessian is
    ``diag(s) - s s^T`` whose Gershgorin row bound ``2 s_i (1 - s_i)`` never
    exceeds 1/2, so ``L = mu0 + 1/2``.
    """

    name = "ridge_softmax_ce"
    LSE_HESSIAN_BOUND = 0.5

    def __init__(self, mu0: float = 0.5):
        if mu0 <= 0:
            raise ContractError("mu0 must be positive")
        self.mu0 = float(mu0)
        self.mu = self.mu0
        self.smoothness_L = self.mu0 + self.LSE_HESSIAN_BOUND

    def validate_labels(self, Y):
        if np.any(Y < -1e-12) or np.any(np.abs(Y.sum(axis=1) - 1.0) > 1e-9):
            raise ContractError("cross-entropy labels must be probability vectors")

    def sample_labels(self, rng, n, d):
        return rng.dirichlet(np.ones(d), size=n)

    def value(self, Y, Pm):
        return -np.einsum("ij,ij->i", Y, log_softmax(Pm, axis=1)) + 0.5 * self.mu0 * np.einsum("ij,ij->i", Pm, Pm)

    def gradient(self, Y, Pm):
        return Y.sum(axis=1, keepdims=True) * softmax(Pm, axis=1) - Y + self.mu0 * Pm

    def hessian(self, Y, Pm):
        s = softmax(Pm, axis=1)
        n, d = Pm.shape
        H = np.einsum("i,ij,jk->ijk", Y.sum(axis=1), s, np.eye(d)) - Y.sum(axis=1)[:, None, None] * np.einsum("ij,ik->ijk", s, s)
        return H + self.mu0 * np.eye(d)


def builtin_losses(mu0: float = 0.5) -> dict[str, SmoothStronglyConvexLoss]:
    return {"squared": SquaredLoss(), "ridge_softmax_ce": RidgeSoftmaxCrossEntropy(mu0)}


def get_loss(name: str, **params) -> SmoothStronglyConvexLoss:
    if name == "squared":
        return SquaredLoss()
    if name == "ridge_softmax_ce":
        return RidgeSoftmaxCrossEntropy(**params)
    raise ContractError(f"unknown loss {name!r}; built-ins: squared, ridge_softmax_ce")


@dataclass(frozen=True)
class LossCertificate:
    loss: str
    probes: int
    strong_convexity_min_slack: float
    smoothness_min_slack: float
    fd_max_rel_err: float
    sc_midpoint_min_slack: float
    fd_tol: float = 1e-6
    atol: float = 1e-9

    @property
    def passed(self) -> bool:
        return (self.strong_convexity_min_slack >= -self.atol
                and self.smoothness_min_slack >= -self.atol
                and self.fd_max_rel_err <= self.fd_tol
                and self.sc_midpoint_min_slack >= -self.atol)


def finite_difference_gradient(loss: SmoothStronglyConvexLoss, y: np.ndarray, p: np.ndarray,
                               h: float = 1e-5) -> np.ndarray:
    """Central differences of ``p -> loss(y, p)`` for a single row."""
    d = p.size
    E = np.eye(d) * h
    Yr = np.repeat(y[None, :], d, axis=0)
    plus = loss.value(Yr, p[None, :] + E)
    minus = loss.value(Yr, p[None, :] - E)
    return (plus - minus) / (2 * h)


def certify_loss(loss: SmoothStronglyConvexLoss, rng: np.random.Generator, probes: int = 1000,
                 d: int = 3, scale: float = 3.0, fd_tol: float = 1e-6) -> LossCertificate:
    """Probe strong convexity, smoothness, gradients and the pointwise midpoint anchor.

    Finite-difference agreement is measured as ``||fd - g|| / (1 + ||g||)``.
    """
    Y = loss.sample_labels(rng, probes, d)
    P1 = scale * rng.normal(size=(probes, d))
    P2 = scale * rng.normal(size=(probes, d))
    v1, v2 = loss.value(Y, P1), loss.value(Y, P2)
    g1, g2 = loss.gradient(Y, P1), loss.gradient(Y, P2)
    diff = P1 - P2
    dsq = np.einsum("ij,ij->i", diff, diff)
    sc = v1 - (v2 + np.einsum("ij,ij->i", g2, diff) + 0.5 * loss.mu * dsq)
    sm = loss.smoothness_L * np.sqrt(dsq) - np.linalg.norm(g1 - g2, axis=1)
    fd_err = 0.0
    for i in range(probes):
        fd = finite_difference_gradient(loss, Y[i], P1[i])
        fd_err = max(fd_err, float(np.linalg.norm(fd - g1[i]) / (1.0 + np.linalg.norm(g1[i]))))
    vm = loss.value(Y, 0.5 * (P1 + P2))
    mid = (4.0 / loss.mu) * (v1 + v2 - 2.0 * vm) - dsq
    return LossCertificate(loss.name, probes, float(sc.min()), float(sm.min()), fd_err,
                           float(mid.min()), fd_tol)


def sc_midpoint_pointwise_slack(loss: SmoothStronglyConvexLoss, Y, F1, F2) -> np.ndarray:
    """Per-point slack of ``||p1 - p2||^2 <= (4/mu)(L1 + L2 - 2 L(mid))``."""
    F1, F2 = as_predictor(F1).values, as_predictor(F2).values
    diff = F1 - F2
    return ((4.0 / loss.mu) * (loss.value(Y, F1) + loss.value(Y, F2) - 2.0 * loss.value(Y, 0.5 * (F1 + F2)))
            - np.einsum("ij,ij->i", diff, diff))
