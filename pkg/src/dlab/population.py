"""Exact population arithmetic over finite weighted supports.

Every expectation in this package is a finite weighted sum over the support
points of a :class:`Population`.  Models are compiled once to a
:class:`Predictor` (one prediction vector per support point), so norms, risks
and disagreements are evaluated without sampling error.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

WEIGHT_SUM_TOL = 1e-9
DEFAULT_ATOL = 1e-9
DEFAULT_RTOL = 1e-10


def _restore(cls, state: dict):
    """Rebuild an immutable slotted object from pickled state, bit for bit."""
    obj = object.__new__(cls)
    for name, value in state.items():
        if isinstance(value, np.ndarray):
            value.setflags(write=False)
        object.__setattr__(obj, name, value)
    return obj


class Immutable:
    """Mixin for slotted value objects: no attribute writes, pickles without revalidation."""

    __slots__ = ()

    def __setattr__(self, name, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    def __reduce__(self):
        return _restore, (type(self), {name: getattr(self, name) for name in self.__slots__})


class ContractError(ValueError):
    """Raised when inputs violate a shape or domain precondition."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


class Population(Immutable):
    """Finite weighted support of ``(x, y)`` pairs.

    ``X`` has shape ``(N, p)``, ``Y`` has shape ``(N, d)`` and ``w`` is a
    probability vector of length ``N``.  Weights are validated to sum to one
    within 1e-9 and then renormalised exactly.
    """

    __slots__ = ("X", "Y", "w")

    def __init__(self, X, Y, w=None):
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.ndim == 1:
            X = X[:, None]
        if Y.ndim != 2 or Y.shape[1] < 1:
            raise ContractError(f"labels must be (N, d) with d >= 1, got shape {Y.shape}")
        n = Y.shape[0]
        if n < 1:
            raise ContractError("population needs at least one support point")
        if X.ndim != 2 or X.shape[0] != n:
            raise ContractError(f"features shape {X.shape} does not match {n} labels")
        if w is None:
            w = np.full(n, 1.0 / n)
        w = np.asarray(w, dtype=np.float64).reshape(-1)
        if w.shape != (n,):
            raise ContractError(f"weights shape {w.shape} does not match {n} points")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ContractError("all weights must be finite and strictly positive")
        total = math.fsum(w)
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ContractError(f"weights sum to {total!r}, not 1 within {WEIGHT_SUM_TOL}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ContractError("features and labels must be finite")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "Y", _frozen(Y))
        object.__setattr__(self, "w", _frozen(w / total))

    @property
    def size(self) -> int:
        return self.Y.shape[0]

    @property
    def label_dim(self) -> int:
        return self.Y.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        return f"Population(N={self.size}, p={self.feature_dim}, d={self.label_dim})"

    def label_predictor(self) -> "Predictor":
        """The labels themselves, viewed as a predictor."""
        return Predictor(self.Y)

    def zero_predictor(self) -> "Predictor":
        return Predictor(np.zeros_like(self.Y))

    def constant_predictor(self, c) -> "Predictor":
        c = np.broadcast_to(np.asarray(c, dtype=np.float64), (self.label_dim,))
        return Predictor(np.tile(c, (self.size, 1)))

    def compile(self, fn) -> "Predictor":
        """Evaluate ``fn(x) -> R^d`` at every support point."""
        return Predictor(np.array([np.atleast_1d(fn(x)) for x in self.X], dtype=np.float64))

    # -- serialisation -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "points": [
                {"x": x.tolist(), "y": y.tolist(), "w": float(w)}
                for x, y, w in zip(self.X, self.Y, self.w)
            ]
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Population":
        try:
            points = doc["points"]
            X = [p["x"] for p in points]
            Y = [p["y"] for p in points]
            w = [p["w"] for p in points]
        except (KeyError, TypeError) as exc:
            raise ContractError(f"malformed population document: missing {exc}") from exc
        if not points:
            raise ContractError("population document has no points")
        dims = {len(np.atleast_1d(y)) for y in Y}
        if len(dims) != 1:
            raise ContractError(f"labels have inconsistent dimensions {sorted(dims)}")
        return cls(np.atleast_2d(np.array(X, dtype=float).reshape(len(X), -1)),
                   np.array(Y, dtype=float).reshape(len(Y), -1), w)


def load_population(path) -> Population:
    with open(path, encoding="utf-8") as fh:
        return Population.from_dict(json.load(fh))


def dump_population(P: Population, path) -> None:
    Path(path).write_text(json.dumps(P.to_dict(), indent=1) + "\n", encoding="utf-8")


class Predictor(Immutable):
    """Immutable prediction table: one ``d``-vector per support point."""

    __slots__ = ("values",)

    def __init__(self, values):
        v = np.asarray(values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ContractError(f"predictor values must be (N, d), got shape {v.shape}")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __len__(self) -> int:
        return self.values.shape[0]

    def __repr__(self) -> str:
        return f"Predictor(shape={self.shape})"

    def _other(self, other) -> np.ndarray:
        o = other.values if isinstance(other, Predictor) else np.asarray(other, dtype=np.float64)
        if isinstance(other, Predictor) and o.shape != self.values.shape:
            raise ContractError(f"shape mismatch {self.values.shape} vs {o.shape}")
        return o

    def __add__(self, other):
        return Predictor(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Predictor(self.values - self._other(other))

    def __rsub__(self, other):
        return Predictor(self._other(other) - self.values)

    def __mul__(self, c):
        return Predictor(self.values * float(c))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return Predictor(self.values / float(c))

    def __neg__(self):
        return Predictor(-self.values)


def as_predictor(f) -> Predictor:
    return f if isinstance(f, Predictor) else Predictor(f)


def _check(P: Population, *fs) -> list[np.ndarray]:
    out = []
    for f in fs:
        v = as_predictor(f).values
        if v.shape != P.Y.shape:
            raise ContractError(f"predictor shape {v.shape} does not match population {P.Y.shape}")
        out.append(v)
    return out


def _wsum_sq(diff: np.ndarray, w: np.ndarray) -> float:
    return float(w @ np.einsum("ij,ij->i", diff, diff))


def inner(f, g, P: Population) -> float:
    """Population inner product ``E<f(x), g(x)>``."""
    a, b = _check(P, f, g)
    return float(P.w @ np.einsum("ij,ij->i", a, b))


def weighted_norm(f, P: Population) -> float:
    (a,) = _check(P, f)
    return math.sqrt(_wsum_sq(a, P.w))


def mse(f, P: Population) -> float:
    (a,) = _check(P, f)
    return _wsum_sq(P.Y - a, P.w)


def disagreement(f1, f2, P: Population) -> float:
    a, b = _check(P, f1, f2)
    return _wsum_sq(a - b, P.w)


def midpoint(f1, f2) -> Predictor:
    a, b = as_predictor(f1).values, as_predictor(f2).values
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch {a.shape} vs {b.shape}")
    return Predictor(0.5 * (a + b))


# -- certificates ---------------------------------------------------------------

class BoundName(str, Enum):
    MIDPOINT_IDENTITY = "midpoint_identity"
    ANCHOR = "midpoint_anchor"
    LOCAL_CURVE = "local_learning_curve"
    STRONGLY_CONVEX_ANCHOR = "strongly_convex_midpoint_anchor"


@dataclass(frozen=True)
class AnchorCertificate:
    mse1: float
    mse2: float
    mse_mid: float
    disagreement: float
    rhs: float
    slack: float
    bound_name: BoundName
    passed: bool
    tolerance: float = DEFAULT_ATOL

    def as_row(self) -> dict:
        return {
            "bound": self.bound_name.value,
            "mse1": self.mse1,
            "mse2": self.mse2,
            "mse_mid": self.mse_mid,
            "D": self.disagreement,
            "rhs": self.rhs,
            "slack": self.slack,
            "passed": self.passed,
        }


def _risks(f1, f2, P):
    """``(MSE1, MSE2, MSE(midpoint), D)`` accumulated in extended precision.

    The identity subtracts risks that can exceed ``D`` by many orders of
    magnitude; double-precision risks alone would leave rounding error above
    the 1e-10 relative tolerance.  Where ``longdouble`` is plain double this
    degrades gracefully to ordinary accuracy.
    """
    a, b = _check(P, f1, f2)
    ext = np.longdouble
    Y, A, B, w = P.Y.astype(ext), a.astype(ext), b.astype(ext), P.w.astype(ext)

    def wsq(diff):
        return w @ np.einsum("ij,ij->i", diff, diff)

    return wsq(Y - A), wsq(Y - B), wsq(Y - (A + B) / 2), wsq(A - B)


def _certificate(m1, m2, mm, D, rhs, name, passed, tol) -> AnchorCertificate:
    return AnchorCertificate(float(m1), float(m2), float(mm), float(D), float(rhs), float(rhs - D),
                             name, bool(passed), tol)


def check_midpoint_identity(f1, f2, P: Population, rtol: float = DEFAULT_RTOL) -> AnchorCertificate:
    """Check ``D = 2(MSE1 + MSE2 - 2 MSE(midpoint))`` as an equality."""
    m1, m2, mm, D = _risks(f1, f2, P)
    rhs = 2 * (m1 + m2 - 2 * mm)
    return _certificate(m1, m2, mm, D, rhs, BoundName.MIDPOINT_IDENTITY,
                        abs(rhs - D) <= rtol * (1 + abs(D)), rtol)


def check_anchor_bound(f1, f2, risk_of_anchor_class: float, P: Population,
                       atol: float = DEFAULT_ATOL) -> AnchorCertificate:
    """Check ``D <= 2(MSE1 - R(H)) + 2(MSE2 - R(H))``.

    The caller guarantees that the midpoint lies in ``H``.  A negative slack
    is reported through ``passed``, never raised.
    """
    m1, m2, mm, D = _risks(f1, f2, P)
    R = np.longdouble(risk_of_anchor_class)
    rhs = 2 * (m1 - R) + 2 * (m2 - R)
    return _certificate(m1, m2, mm, D, rhs, BoundName.ANCHOR, rhs - D >= -atol, atol)


def check_local_curve_bound(f1, f2, risk_n: float, risk_2n: float, eps: float,
                            P: Population, atol: float = DEFAULT_ATOL) -> AnchorCertificate:
    """Check ``D <= 4(R(F_n) - R(F_2n) + eps)`` for eps-suboptimal level-n models."""
    m1, m2, mm, D = _risks(f1, f2, P)
    rhs = 4 * (np.longdouble(risk_n) - np.longdouble(risk_2n) + np.longdouble(eps))
    return _certificate(m1, m2, mm, D, rhs, BoundName.LOCAL_CURVE, rhs - D >= -atol, atol)


def merge_duplicates(P: Population, *fs) -> tuple[Population, list[Predictor]]:
    """Merge support points with identical ``(x, y, f(x)...)`` rows.

    Used by the invariance tests: merging or splitting points must leave all
    population quantities unchanged.
    """
    vals = [as_predictor(f).values for f in fs]
    keys: dict[tuple, int] = {}
    rows: list[list] = []
    for i in range(P.size):
        key = (tuple(P.X[i]), tuple(P.Y[i])) + tuple(tuple(v[i]) for v in vals)
        if key in keys:
            rows[keys[key]][1] += P.w[i]
        else:
            keys[key] = len(rows)
            rows.append([i, P.w[i]])
    idx = [r[0] for r in rows]
    w = np.array([r[1] for r in rows])
    return Population(P.X[idx], P.Y[idx], w), [Predictor(v[idx]) for v in vals]


def random_population(rng: np.random.Generator, n: int, d: int = 1, p: int = 1,
                      label_scale: float = 1.0) -> Population:
    """Random population with Dirichlet weights, used by tests and the self-test."""
    X = rng.normal(size=(n, p))
    Y = label_scale * rng.normal(size=(n, d))
    w = rng.dirichlet(np.ones(n))
    w = np.maximum(w, 1e-6)
    return Population(X, Y, w / w.sum())


def stack_predictors(fs: Iterable) -> np.ndarray:
    """Stack predictors into an ``(k, N, d)`` array."""
    return np.stack([as_predictor(f).values for f in fs])


__all__: Sequence[str] = [
    "AnchorCertificate", "BoundName", "ContractError", "Population", "Predictor",
    "as_predictor", "check_anchor_bound", "check_local_curve_bound", "check_midpoint_identity",
    "disagreement", "dump_population", "inner", "load_population", "merge_duplicates",
    "midpoint", "mse", "random_population", "stack_predictors", "weighted_norm",
]
