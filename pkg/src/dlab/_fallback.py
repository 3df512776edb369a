"""Numpy implementation of the box dynamic program (used when the extension is absent).

Same recurrence, same flattening and same tie-breaking as ``_kernels.pyx``:
for every box the candidates are visited in (coordinate, split) order and a
candidate replaces the incumbent only if strictly better.
"""
from __future__ import annotations

import numpy as np


def box_dp(cost0: np.ndarray, nvals: np.ndarray, depth: int):
    nvals = [int(n) for n in nvals]
    D = len(nvals)
    shape = tuple(n for n in nvals for _ in range(2))
    S = cost0.shape[0]
    cost = np.empty((depth + 1, S))
    argc = np.full((depth + 1, S), -1, dtype=np.int8)
    args = np.zeros((depth + 1, S), dtype=np.int16)
    cost[0] = cost0
    grids = []
    for c, n in enumerate(nvals):
        idx = np.arange(n)
        lo_shape = [1] * (2 * D)
        hi_shape = [1] * (2 * D)
        lo_shape[2 * c] = n
        hi_shape[2 * c + 1] = n
        grids.append((idx.reshape(lo_shape), idx.reshape(hi_shape)))
    valid = np.ones(shape, dtype=bool)
    for lo, hi in grids:
        valid &= lo <= hi
    for t in range(1, depth + 1):
        prev = cost[t - 1].reshape(shape)
        best = prev.copy()
        bc = np.full(shape, -1, dtype=np.int8)
        bs = np.zeros(shape, dtype=np.int16)
        for c, n in enumerate(nvals):
            lo, hi = grids[c]
            for s in range(n - 1):
                left = np.take(prev, [s], axis=2 * c + 1)
                right = np.take(prev, [s + 1], axis=2 * c)
                v = left + right
                upd = valid & (lo <= s) & (hi > s) & (v < best)
                best = np.where(upd, v, best)
                bc[upd] = c
                bs[upd] = s
        cost[t] = best.reshape(-1)
        argc[t] = bc.reshape(-1)
        args[t] = bs.reshape(-1)
    return cost, argc, args
