# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: tiled online-softmax attention and LCS length.

Mirrors ``pybackend`` exactly; loop order is fixed so accumulation is
deterministic and both backends agree to float rounding.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, INFINITY

cnp.import_array()


def attention_tiled(double[:, ::1] q, double[:, ::1] k, double[:, ::1] v,
                    bint causal, Py_ssize_t block_size, stats=None):
    """Exact attention, streamed over key/value tiles per query block.

    Only one ``block x block`` score tile is live at any time; ``stats``
    (optional dict) receives ``peak_score_rows`` and ``score_tiles``.
    """
    cdef Py_ssize_t n = q.shape[0]
    cdef Py_ssize_t h = q.shape[1]
    cdef double scale = 1.0 / sqrt(<double> h)
    out_arr = np.empty((n, h), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] tile = np.empty((block_size, block_size), dtype=np.float64)
    cdef double[:, ::1] acc = np.empty((block_size, h), dtype=np.float64)
    cdef double[::1] m = np.empty(block_size, dtype=np.float64)
    cdef double[::1] denom = np.empty(block_size, dtype=np.float64)

    cdef Py_ssize_t i0, j0, bq, bk, r, c, t, gi, limit
    cdef Py_ssize_t peak_rows = 0, tiles = 0
    cdef double dot, s, row_max, m_new, corr, psum, p

    for i0 in range(0, n, block_size):
        bq = block_size if i0 + block_size <= n else n - i0
        for r in range(bq):
            m[r] = -INFINITY
            denom[r] = 0.0
            for t in range(h):
                acc[r, t] = 0.0
        for j0 in range(0, n, block_size):
            if causal and j0 > i0 + bq - 1:
                break
            bk = block_size if j0 + block_size <= n else n - j0
            tiles += 1
            if bq > peak_rows:
                peak_rows = bq
            for r in range(bq):
                gi = i0 + r
                limit = bk
                if causal and gi - j0 + 1 < bk:
                    limit = gi - j0 + 1
                if limit <= 0:
                    continue  # row fully masked within this tile
                row_max = -INFINITY
                for c in range(limit):
                    dot = 0.0
                    for t in range(h):
                        dot += q[gi, t] * k[j0 + c, t]
                    s = dot * scale
                    tile[r, c] = s
                    if s > row_max:
                        row_max = s
                m_new = m[r] if m[r] > row_max else row_max
                corr = exp(m[r] - m_new)  # exp(-inf) == 0 on first live tile
                psum = 0.0
                for c in range(limit):
                    p = exp(tile[r, c] - m_new)
                    tile[r, c] = p
                    psum += p
                denom[r] = denom[r] * corr + psum
                for t in range(h):
                    acc[r, t] = acc[r, t] * corr
                for c in range(limit):
                    p = tile[r, c]
                    for t in range(h):
                        acc[r, t] += p * v[j0 + c, t]
                m[r] = m_new
        for r in range(bq):
            for t in range(h):
                out[i0 + r, t] = acc[r, t] / denom[r]

    if stats is not None:
        stats["peak_score_rows"] = peak_rows
        stats["score_tiles"] = tiles
    return out_arr


def lcs_length_ids(int[::1] a, int[::1] b):
    """Longest common subsequence length of two int32 id sequences."""
    cdef Py_ssize_t la = a.shape[0]
    cdef Py_ssize_t lb = b.shape[0]
    if la == 0 or lb == 0:
        return 0
    prev_arr = np.zeros(lb + 1, dtype=np.int64)
    cur_arr = np.zeros(lb + 1, dtype=np.int64)
    cdef long long[::1] prev = prev_arr
    cdef long long[::1] cur = cur_arr
    cdef long long[::1] tmp
    cdef Py_ssize_t i, j
    cdef int ai
    cdef long long up, left
    for i in range(la):
        ai = a[i]
        for j in range(lb):
            if ai == b[j]:
                cur[j + 1] = prev[j] + 1
            else:
                up = prev[j + 1]
                left = cur[j]
                cur[j + 1] = up if up >= left else left
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[lb])
