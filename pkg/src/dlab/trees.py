"""Axis-aligned regression trees: exact optimization, a greedy trainer and midpoint grafting.

Trees route ``x`` left iff ``x[coord] <= threshold``; leaves carry constant
vectors in ``[0, 1]^d``.  :func:`optimal_tree` is an exact dynamic program over
boxes of per-coordinate index intervals; its inner recurrence runs in the
compiled kernel when available (see :mod:`dlab.kernels`).
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import kernels
from .population import ContractError, Immutable, Population, Predictor, mse

MAX_DP_ENTRIES = 20_000_000
LEAF_RANGE = (0.0, 1.0)


class TreeBudgetError(MemoryError):
    """The box dynamic program would exceed :data:`MAX_DP_ENTRIES` table entries."""


@dataclass(frozen=True)
class Leaf:
    value: tuple[float, ...]

    def __post_init__(self):
        v = np.asarray(self.value, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ContractError("leaf value must be a non-empty vector")
        if np.any(v < LEAF_RANGE[0]) or np.any(v > LEAF_RANGE[1]):
            raise ContractError(f"leaf value {tuple(v)} outside [0, 1]")
        object.__setattr__(self, "value", tuple(float(a) for a in v))


@dataclass(frozen=True)
class Split:
    coord: int
    threshold: float
    left: "Node"
    right: "Node"

    def __post_init__(self):
        if self.coord < 0:
            raise ContractError("split coordinate must be non-negative")


Node = Union[Leaf, Split]


def _depth(node: Node) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(_depth(node.left), _depth(node.right))


def _leaves(node: Node):
    if isinstance(node, Leaf):
        yield node
    else:
        yield from _leaves(node.left)
        yield from _leaves(node.right)


def _max_coord(node: Node) -> int:
    if isinstance(node, Leaf):
        return -1
    return max(node.coord, _max_coord(node.left), _max_coord(node.right))


class RegressionTree(Immutable):
    """Immutable wrapper around a node structure, with vectorised prediction."""

    __slots__ = ("root", "depth", "label_dim")

    def __init__(self, root: Node):
        dims = {len(leaf.value) for leaf in _leaves(root)}
        if len(dims) != 1:
            raise ContractError("all leaves must share one label dimension")
        object.__setattr__(self, "root", root)
        object.__setattr__(self, "depth", _depth(root))
        object.__setattr__(self, "label_dim", dims.pop())

    def __eq__(self, other):
        return isinstance(other, RegressionTree) and self.root == other.root

    def __hash__(self):
        return hash(self.root)

    def __repr__(self):
        return f"RegressionTree(depth={self.depth}, leaves={self.n_leaves})"

    @property
    def n_leaves(self) -> int:
        return sum(1 for _ in _leaves(self.root))

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if _max_coord(self.root) >= X.shape[1]:
            raise ContractError("split coordinate exceeds feature dimension")
        out = np.empty((X.shape[0], self.label_dim))
        stack = [(self.root, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if isinstance(node, Leaf):
                out[idx] = node.value
                continue
            go_left = X[idx, node.coord] <= node.threshold
            stack.append((node.left, idx[go_left]))
            stack.append((node.right, idx[~go_left]))
        return out

    def compile(self, P: Population) -> Predictor:
        return Predictor(self.predict(P.X))

    def to_dict(self) -> dict:
        nodes: list[dict] = []

        def visit(node: Node) -> int:
            i = len(nodes)
            nodes.append({})
            if isinstance(node, Leaf):
                nodes[i] = {"id": i, "value": list(node.value)}
            else:
                left = visit(node.left)
                right = visit(node.right)
                nodes[i] = {"id": i, "coord": node.coord, "threshold": node.threshold,
                            "left": left, "right": right}
            return i

        visit(self.root)
        return {"kind": "regression_tree", "depth": self.depth, "nodes": nodes}

    @classmethod
    def from_dict(cls, doc: dict) -> "RegressionTree":
        try:
            table = {int(n["id"]): n for n in doc["nodes"]}
        except (KeyError, TypeError) as exc:
            raise ContractError(f"malformed tree document: {exc}") from exc

        def build(i: int, seen: frozenset) -> Node:
            if i in seen or i not in table:
                raise ContractError(f"tree node {i} missing or revisited")
            n = table[i]
            if "value" in n:
                return Leaf(tuple(n["value"]))
            seen = seen | {i}
            return Split(int(n["coord"]), float(n["threshold"]),
                         build(int(n["left"]), seen), build(int(n["right"]), seen))

        return cls(build(0, frozenset()))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def tree_eval(tree: RegressionTree, x) -> np.ndarray:
    """Prediction at a single feature vector by walking from the root."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    node = tree.root
    while isinstance(node, Split):
        if node.coord >= x.size:
            raise ContractError("split coordinate exceeds feature dimension")
        node = node.left if x[node.coord] <= node.threshold else node.right
    return np.array(node.value)


def constant_tree(value) -> RegressionTree:
    return RegressionTree(Leaf(tuple(np.atleast_1d(value))))


def clamp_leaf(mean: np.ndarray) -> np.ndarray:
    return np.clip(mean, *LEAF_RANGE)


def validate_tree_labels(P: Population, atol: float = 0.0) -> None:
    if np.any(P.Y < LEAF_RANGE[0] - atol) or np.any(P.Y > LEAF_RANGE[1] + atol):
        raise ContractError("tree populations need labels in [0, 1]^d")


# -- exact optimum by box dynamic programming ------------------------------------

@dataclass(frozen=True)
class _Grid:
    values: tuple[np.ndarray, ...]   # sorted distinct values per coordinate
    W: np.ndarray                    # (n_0, ..., n_{D-1}) cell weights
    SY: np.ndarray                   # (..., d) weighted label sums
    SYY: np.ndarray                  # weighted squared-norm sums


def _grid(P: Population) -> _Grid:
    values, ranks = [], []
    for c in range(P.feature_dim):
        v, r = np.unique(P.X[:, c], return_inverse=True)
        values.append(v)
        ranks.append(r.reshape(-1))
    shape = tuple(v.size for v in values)
    W = np.zeros(shape)
    SY = np.zeros(shape + (P.label_dim,))
    SYY = np.zeros(shape)
    cell = tuple(ranks)
    np.add.at(W, cell, P.w)
    np.add.at(SY, cell, P.w[:, None] * P.Y)
    np.add.at(SYY, cell, P.w * np.einsum("ij,ij->i", P.Y, P.Y))
    return _Grid(tuple(values), W, SY, SYY)


def _check_budget(shape: tuple[int, ...], depth: int) -> None:
    entries = int(np.prod([n * n for n in shape], dtype=float)) * (depth + 1)
    if entries > MAX_DP_ENTRIES:
        c = int(np.argmax(shape))
        raise TreeBudgetError(
            f"tree DP needs {entries} entries (limit {MAX_DP_ENTRIES}): coordinate {c} has "
            f"{shape[c]} distinct values across {len(shape)} coordinates at depth {depth}")


def _box_sums(A: np.ndarray, D: int) -> np.ndarray:
    """All box sums of a cell array over its first ``D`` axes.

    Output axes are ``(lo_0, hi_0, ..., lo_{D-1}, hi_{D-1}, *rest)``; entries
    with some ``lo > hi`` are meaningless.
    """
    C = A
    for c in range(D):
        pad = [(0, 0)] * C.ndim
        pad[c] = (1, 0)
        C = np.pad(np.cumsum(C, axis=c), pad)
    shape = A.shape[:D]
    rest = A.shape[D:]
    out = np.zeros(tuple(n for n in shape for _ in range(2)) + rest)
    for corner in itertools.product((0, 1), repeat=D):
        idx = []
        for c, take_hi in enumerate(corner):
            n = shape[c]
            lo_shape = [1] * (2 * D)
            hi_shape = [1] * (2 * D)
            lo_shape[2 * c] = n
            hi_shape[2 * c + 1] = n
            if take_hi:
                idx.append(np.arange(1, n + 1).reshape(hi_shape))
            else:
                idx.append(np.arange(n).reshape(lo_shape))
        sign = (-1) ** (D - sum(corner))
        out = out + sign * C[tuple(idx)]
    return out


def _leaf_tables(g: _Grid):
    D = len(g.values)
    W = _box_sums(g.W, D)
    SY = _box_sums(g.SY, D)
    SYY = _box_sums(g.SYY, D)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(W[..., None] > 0, SY / W[..., None], 0.0)
    val = clamp_leaf(mean)
    sse = SYY - 2 * np.einsum("...j,...j->...", val, SY) + W * np.einsum("...j,...j->...", val, val)
    sse = np.where(W > 0, np.maximum(sse, 0.0), 0.0)
    return sse, val


@dataclass(frozen=True)
class TreeDPResult:
    """Exact optimal risks for every depth up to ``max_depth`` plus the trees."""

    risks: tuple[float, ...]
    trees: tuple[RegressionTree, ...]

    def risk(self, depth: int) -> float:
        return self.risks[depth]

    def tree(self, depth: int) -> RegressionTree:
        return self.trees[depth]


def optimal_tree_levels(P: Population, max_depth: int, backend=None) -> TreeDPResult:
    """Solve the box dynamic program once and read off the optimum at each depth."""
    if max_depth < 0:
        raise ContractError("depth must be non-negative")
    g = _grid(P)
    shape = g.W.shape
    _check_budget(shape, max_depth)
    sse, val = _leaf_tables(g)
    dp = backend or kernels.box_dp
    cost, argc, args = dp(np.ascontiguousarray(sse.reshape(-1)),
                          np.asarray(shape, dtype=np.int64), int(max_depth))
    box_shape = sse.shape
    val = val.reshape(box_shape + (P.label_dim,))
    root = tuple(x for n in shape for x in (0, n - 1))

    def build(box: tuple[int, ...], t: int) -> Node:
        flat = np.ravel_multi_index(box, box_shape)
        # -1 above level 0 means no split beat the level below: inherit that optimum
        while t > 0 and argc[t, flat] < 0:
            t -= 1
        c = int(argc[t, flat])
        if c < 0:
            return Leaf(tuple(val[box]))
        s = int(args[t, flat])
        thr = 0.5 * (g.values[c][s] + g.values[c][s + 1])
        left = list(box)
        left[2 * c + 1] = s
        right = list(box)
        right[2 * c] = s + 1
        return Split(c, float(thr), build(tuple(left), t - 1), build(tuple(right), t - 1))

    root_flat = np.ravel_multi_index(root, box_shape)
    risks = tuple(float(cost[t, root_flat]) for t in range(max_depth + 1))
    trees = tuple(RegressionTree(build(root, t)) for t in range(max_depth + 1))
    return TreeDPResult(risks, trees)


def optimal_tree(P: Population, depth: int) -> tuple[RegressionTree, float]:
    res = optimal_tree_levels(P, depth)
    return res.tree(depth), res.risk(depth)


# -- greedy trainer -------------------------------------------------------------------

def _leaf_cost(w: np.ndarray, Y: np.ndarray) -> tuple[float, np.ndarray]:
    W = w.sum()
    if W <= 0:
        return 0.0, np.zeros(Y.shape[1])
    c = clamp_leaf((w @ Y) / W)
    r = Y - c
    return float(w @ np.einsum("ij,ij->i", r, r)), c


def _candidate_splits(X, Y, w):
    """Every (coord, threshold) that splits the node's points, with its child cost."""
    out = []
    for c in range(X.shape[1]):
        vals = np.unique(X[:, c])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (a + b)
            m = X[:, c] <= thr
            cost = _leaf_cost(w[m], Y[m])[0] + _leaf_cost(w[~m], Y[~m])[0]
            out.append((cost, c, float(thr)))
    return out


def _grow(X, Y, w, depth, rng, top_k) -> Node:
    here, value = _leaf_cost(w, Y)
    if depth == 0 or here <= 0.0:
        return Leaf(tuple(value))
    cands = _candidate_splits(X, Y, w)
    if not cands:
        return Leaf(tuple(value))
    cands.sort(key=lambda t: (t[0], t[1], t[2]))
    pool = cands[:max(1, top_k)]
    cost, c, thr = pool[int(rng.integers(len(pool)))] if len(pool) > 1 else pool[0]
    if len(pool) == 1 and cost >= here:
        return Leaf(tuple(value))
    m = X[:, c] <= thr
    return Split(c, thr, _grow(X[m], Y[m], w[m], depth - 1, rng, top_k),
                 _grow(X[~m], Y[~m], w[~m], depth - 1, rng, top_k))


def greedy_tree(P: Population, depth: int, seed: int = 0, restarts: int = 1,
                top_k: int = 1) -> RegressionTree:
    """CART-style greedy tree, best of ``restarts`` randomised growths.

    With ``top_k = 1`` growth is plain greedy and deterministic.  With
    ``top_k > 1`` each node picks uniformly among its ``top_k`` cheapest splits.
    """
    if depth < 0:
        raise ContractError("depth must be non-negative")
    rng = np.random.default_rng(seed)
    best, best_risk = None, np.inf
    for _ in range(max(1, restarts)):
        tree = RegressionTree(_grow(P.X, P.Y, P.w, depth, rng, top_k))
        r = mse(tree.compile(P), P)
        if r < best_risk:
            best, best_risk = tree, r
    return best


# -- midpoint closure -----------------------------------------------------------------

def _graft(node2: Node, left_value: np.ndarray) -> Node:
    if isinstance(node2, Leaf):
        return Leaf(tuple(0.5 * (left_value + np.asarray(node2.value))))
    return Split(node2.coord, node2.threshold, _graft(node2.left, left_value),
                 _graft(node2.right, left_value))


def _graft_all(node1: Node, root2: Node) -> Node:
    if isinstance(node1, Leaf):
        return _graft(root2, np.asarray(node1.value))
    return Split(node1.coord, node1.threshold, _graft_all(node1.left, root2),
                 _graft_all(node1.right, root2))


def tree_midpoint(t1: RegressionTree, t2: RegressionTree) -> RegressionTree:
    """Tree computing ``(t1 + t2) / 2`` everywhere: a copy of ``t2`` hangs under each leaf of ``t1``."""
    if t1.label_dim != t2.label_dim:
        raise ContractError("trees predict different label dimensions")
    return RegressionTree(_graft_all(t1.root, t2.root))


def random_tree(rng: np.random.Generator, depth: int, feature_dim: int, label_dim: int = 1,
                low: float = 0.0, high: float = 1.0, split_prob: float = 0.8) -> RegressionTree:
    def grow(t):
        if t == 0 or rng.random() > split_prob:
            return Leaf(tuple(rng.random(label_dim)))
        return Split(int(rng.integers(feature_dim)), float(rng.uniform(low, high)), grow(t - 1), grow(t - 1))
    return RegressionTree(grow(depth))
