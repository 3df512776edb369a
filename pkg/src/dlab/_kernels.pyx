# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled box dynamic program for optimal axis-aligned regression trees.

Boxes are products of per-coordinate index intervals ``[lo_c, hi_c]`` over the
sorted distinct feature values, flattened C-order over axes
``(lo_0, hi_0, lo_1, hi_1, ...)``.  ``cost[t, b]`` is the least squared risk
of a depth-``<= t`` subtree on box ``b``; ties keep the first candidate in
(coordinate, split) order, exactly as the numpy fallback does.  ``argc[t, b]
= -1`` means no split beat ``cost[t - 1, b]`` (a leaf when ``t = 0``).
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def box_dp(double[::1] cost0, cnp.int64_t[::1] nvals, int depth):
    cdef Py_ssize_t S = cost0.shape[0]
    cdef int D = nvals.shape[0]
    cdef int t, c
    cdef Py_ssize_t b, rem, pair, left, right
    cdef long s, n
    cdef double best, v
    cdef signed char bc
    cdef short bs
    cdef cnp.int64_t[::1] pstride = np.ones(D, dtype=np.int64)
    cdef cnp.int64_t[::1] lo = np.zeros(D, dtype=np.int64)
    cdef cnp.int64_t[::1] hi = np.zeros(D, dtype=np.int64)
    cdef bint valid

    for c in range(D - 2, -1, -1):
        pstride[c] = pstride[c + 1] * nvals[c + 1] * nvals[c + 1]

    cost_np = np.empty((depth + 1, S), dtype=np.float64)
    argc_np = np.full((depth + 1, S), -1, dtype=np.int8)
    args_np = np.zeros((depth + 1, S), dtype=np.int16)
    cdef double[:, ::1] cost = cost_np
    cdef signed char[:, ::1] argc = argc_np
    cdef short[:, ::1] args = args_np
    cost[0, :] = cost0

    for t in range(1, depth + 1):
        for b in range(S):
            rem = b
            valid = True
            for c in range(D - 1, -1, -1):
                n = nvals[c]
                pair = rem % (n * n)
                rem = rem // (n * n)
                lo[c] = pair // n
                hi[c] = pair % n
                if lo[c] > hi[c]:
                    valid = False
            best = cost[t - 1, b]
            bc = -1
            bs = 0
            if valid:
                for c in range(D):
                    n = nvals[c]
                    for s in range(lo[c], hi[c]):
                        left = b + (s - hi[c]) * pstride[c]
                        right = b + (s + 1 - lo[c]) * n * pstride[c]
                        v = cost[t - 1, left] + cost[t - 1, right]
                        if v < best:
                            best = v
                            bc = <signed char>c
                            bs = <short>s
            cost[t, b] = best
            argc[t, b] = bc
            args[t, b] = bs
    return cost_np, argc_np, args_np
