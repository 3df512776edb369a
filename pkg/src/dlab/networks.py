"""ReLU networks on directed acyclic graphs, their midpoint closure and a small trainer.

Values are indexed globally: ``0 .. n_in-1`` are input coordinates and
``n_in + j`` is internal node ``j``.  Node ``j`` may read only from indices
below ``n_in + j``, so storage order is a topological order.  The output layer
is an affine map of every input coordinate and every internal node.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from graphlib import CycleError, TopologicalSorter
from typing import Mapping, Sequence

import numpy as np

from .parallel import derive_rng
from .population import ContractError, Immutable, Population, Predictor, mse


@dataclass(frozen=True)
class ReluNode:
    sources: tuple[int, ...]
    weights: tuple[float, ...]
    bias: float = 0.0

    def __post_init__(self):
        if len(self.sources) != len(self.weights):
            raise ContractError("node sources and weights differ in length")
        object.__setattr__(self, "sources", tuple(int(s) for s in self.sources))
        object.__setattr__(self, "weights", tuple(float(a) for a in self.weights))
        object.__setattr__(self, "bias", float(self.bias))


class ReluNetwork(Immutable):
    __slots__ = ("n_in", "nodes", "out_weights", "out_bias")

    def __init__(self, n_in: int, nodes: Sequence[ReluNode], out_weights, out_bias):
        nodes = tuple(nodes)
        n_in = int(n_in)
        if n_in < 1:
            raise ContractError("networks need at least one input coordinate")
        for j, node in enumerate(nodes):
            for s in node.sources:
                if not 0 <= s < n_in + j:
                    raise ContractError(f"node {j} reads index {s}; only indices below {n_in + j} "
                                        "are available (nodes must be topologically ordered)")
        W = np.array(out_weights, dtype=float, ndmin=2)
        b = np.atleast_1d(np.array(out_bias, dtype=float))
        if W.shape != (b.size, n_in + len(nodes)):
            raise ContractError(f"output weights must be ({b.size}, {n_in + len(nodes)}), got {W.shape}")
        W.setflags(write=False)
        b.setflags(write=False)
        for name, value in (("n_in", n_in), ("nodes", nodes), ("out_weights", W), ("out_bias", b)):
            object.__setattr__(self, name, value)

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def n_out(self) -> int:
        return self.out_bias.size

    def __repr__(self) -> str:
        return f"ReluNetwork(n_in={self.n_in}, size={self.size}, n_out={self.n_out})"

    def predict(self, X) -> np.ndarray:
        return nn_eval(self, X)

    def compile(self, P: Population) -> Predictor:
        return Predictor(nn_eval(self, P.X))

    @classmethod
    def from_dag(cls, n_in: int, nodes: Mapping[str, tuple[Mapping[str, float], float]],
                 output: tuple[Mapping[str, Sequence[float]], Sequence[float]]) -> "ReluNetwork":
        """Build from named nodes in any order.

        Sources are node names or ``"x0"``, ``"x1"``...; ``output`` is
        ``({source: per-output weights}, bias)``.  Cycles raise
        :class:`ContractError`.
        """
        inputs = [f"x{i}" for i in range(n_in)]
        graph = {}
        for name, (srcs, _) in nodes.items():
            for s in srcs:
                if s not in nodes and s not in inputs:
                    raise ContractError(f"node {name!r} reads unknown source {s!r}")
            graph[name] = [s for s in srcs if s in nodes]
        try:
            order = [n for n in TopologicalSorter(graph).static_order() if n in nodes]
        except CycleError as exc:
            raise ContractError(f"network graph has a cycle: {exc.args[1]}") from exc
        index = {x: i for i, x in enumerate(inputs)}
        index.update({name: n_in + j for j, name in enumerate(order)})
        built = [ReluNode(tuple(index[s] for s in nodes[n][0]), tuple(nodes[n][0].values()), nodes[n][1])
                 for n in order]
        out_w, out_b = output
        out_b = np.atleast_1d(np.asarray(out_b, dtype=float))
        W = np.zeros((out_b.size, n_in + len(order)))
        for s, ws in out_w.items():
            if s not in index:
                raise ContractError(f"output reads unknown source {s!r}")
            W[:, index[s]] = ws
        return cls(n_in, built, W, out_b)

    def to_dict(self) -> dict:
        return {
            "kind": "relu_network",
            "n_in": self.n_in,
            "nodes": [{"id": self.n_in + j, "sources": list(n.sources), "weights": list(n.weights),
                       "bias": n.bias} for j, n in enumerate(self.nodes)],
            "output": {"weights": self.out_weights.tolist(), "bias": self.out_bias.tolist()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ReluNetwork":
        try:
            n_in = int(doc["n_in"])
            raw = sorted(doc["nodes"], key=lambda n: int(n["id"]))
            if [int(n["id"]) for n in raw] != list(range(n_in, n_in + len(raw))):
                raise ContractError("network node ids must be consecutive from n_in")
            nodes = [ReluNode(tuple(n["sources"]), tuple(n["weights"]), n["bias"]) for n in raw]
            return cls(n_in, nodes, doc["output"]["weights"], doc["output"]["bias"])
        except (KeyError, TypeError) as exc:
            raise ContractError(f"malformed network document: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def nn_eval(net: ReluNetwork, X) -> np.ndarray:
    """Evaluate in storage (topological) order; returns ``(N, n_out)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if net.n_in == 1 else X[None, :]
    if X.shape[1] != net.n_in:
        raise ContractError(f"network expects {net.n_in} inputs, got {X.shape[1]}")
    H = np.empty((X.shape[0], net.n_in + net.size))
    H[:, :net.n_in] = X
    for j, node in enumerate(net.nodes):
        pre = H[:, list(node.sources)] @ np.asarray(node.weights) + node.bias
        H[:, net.n_in + j] = np.maximum(pre, 0.0)
    return H @ net.out_weights.T + net.out_bias


def nn_midpoint(n1: ReluNetwork, n2: ReluNetwork) -> ReluNetwork:
    """Disjoint union of both graphs whose output is half of each original output."""
    if n1.n_in != n2.n_in or n1.n_out != n2.n_out:
        raise ContractError("networks differ in input or output dimension")
    shift = n1.size
    moved = [ReluNode(tuple(s if s < n2.n_in else s + shift for s in n.sources), n.weights, n.bias)
             for n in n2.nodes]
    W = np.hstack([0.5 * (n1.out_weights[:, :n1.n_in] + n2.out_weights[:, :n2.n_in]),
                   0.5 * n1.out_weights[:, n1.n_in:], 0.5 * n2.out_weights[:, n2.n_in:]])
    return ReluNetwork(n1.n_in, list(n1.nodes) + moved, W, 0.5 * (n1.out_bias + n2.out_bias))


def random_dag(rng: np.random.Generator, n_in: int, size: int, n_out: int = 1,
               fan_in: int = 3, scale: float = 1.0) -> ReluNetwork:
    nodes = []
    for j in range(size):
        avail = n_in + j
        k = int(rng.integers(1, min(fan_in, avail) + 1))
        src = tuple(sorted(rng.choice(avail, size=k, replace=False).tolist()))
        nodes.append(ReluNode(src, tuple(scale * rng.normal(size=k)), scale * rng.normal()))
    return ReluNetwork(n_in, nodes, scale * rng.normal(size=(n_out, n_in + size)),
                       scale * rng.normal(size=n_out))


# -- training on a single-hidden-layer template ---------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    lr: float = 1e-2
    restarts: int = 1


def _refit_output(H: np.ndarray, P: Population) -> tuple[np.ndarray, np.ndarray]:
    """Weighted least-squares output layer over ``[1, H]`` (minimum norm)."""
    A = np.hstack([np.ones((H.shape[0], 1)), H])
    sw = np.sqrt(P.w)[:, None]
    coef, *_ = np.linalg.lstsq(sw * A, sw * P.Y, rcond=None)
    return coef[1:].T, coef[0]


def _train_once(P: Population, size: int, rng: np.random.Generator, cfg: TrainConfig) -> ReluNetwork:
    X, Y, w = P.X, P.Y, P.w[:, None]
    p, d = X.shape[1], Y.shape[1]
    W1 = rng.normal(size=(size, p)) * np.sqrt(2.0 / p)
    b1 = 0.1 * rng.normal(size=size)
    W2 = rng.normal(size=(d, size)) * np.sqrt(1.0 / size)
    V = np.zeros((d, p))
    c = Y.T @ P.w
    for _ in range(cfg.steps):
        pre = X @ W1.T + b1
        H = np.maximum(pre, 0.0)
        out = H @ W2.T + X @ V.T + c
        G = 2.0 * w * (out - Y)                 # d risk / d out, per point
        gH = (G @ W2) * (pre > 0)
        W2 -= cfg.lr * (G.T @ H)
        V -= cfg.lr * (G.T @ X)
        c -= cfg.lr * G.sum(axis=0)
        W1 -= cfg.lr * (gH.T @ X)
        b1 -= cfg.lr * gH.sum(axis=0)
    H = np.maximum(X @ W1.T + b1, 0.0)
    Wout, bout = _refit_output(np.hstack([X, H]), P)
    nodes = [ReluNode(tuple(range(p)), tuple(W1[j]), b1[j]) for j in range(size)]
    return ReluNetwork(p, nodes, Wout, bout)


def train_nn(P: Population, size_budget: int, seed: int = 0, restarts: int = 1,
             steps: int = 5000, lr: float = 1e-2) -> tuple[ReluNetwork, float]:
    """Best-of-restarts one-hidden-layer network with ``size_budget`` ReLU units.

    Full-batch gradient descent on the population risk, then an exact
    least-squares refit of the output layer (which also sees the raw inputs),
    so the result is never worse than the best affine predictor.
    """
    if size_budget < 1:
        raise ContractError("size budget must be at least 1")
    cfg = TrainConfig(steps, lr, restarts)
    best, best_risk = None, np.inf
    for r in range(max(1, restarts)):
        net = _train_once(P, size_budget, derive_rng(seed, r), cfg)
        risk = mse(net.compile(P), P)
        if risk < best_risk:
            best, best_risk = net, risk
    return best, float(best_risk)
