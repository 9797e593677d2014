"""Pure-NumPy implementations of the hot kernels.

Used when the compiled extension is unavailable or when
``EXTSUM_PURE_PYTHON=1`` forces it off.  Both backends compute the same
functions; the compiled one is just faster on small tiles and long DPs.
"""

import math

import numpy as np


def attention_tiled(q, k, v, causal, block_size, stats=None):
    """Exact attention via the online-softmax recurrence over key/value tiles.

    Queries are processed in row blocks of ``block_size``; for each query
    block the key/value sequence is streamed in blocks of the same size,
    maintaining a running row max, running denominator and a rescaled output
    accumulator.  Only one ``block x block`` score tile is ever alive, so the
    full ``n x n`` score matrix is never formed.

    ``stats``, when given a dict, receives ``peak_score_rows`` (max rows of
    any live score tile) and ``score_tiles`` (number of tiles formed).
    """
    n, head_dim = q.shape
    scale = 1.0 / math.sqrt(head_dim)
    out = np.empty((n, head_dim), dtype=np.float64)
    peak_rows = 0
    tiles = 0
    for i0 in range(0, n, block_size):
        i1 = min(i0 + block_size, n)
        qb = q[i0:i1] * scale
        m = np.full(i1 - i0, -np.inf)
        denom = np.zeros(i1 - i0)
        acc = np.zeros((i1 - i0, head_dim))
        for j0 in range(0, n, block_size):
            j1 = min(j0 + block_size, n)
            if causal and j0 > i1 - 1:
                break  # tile lies entirely above the diagonal
            s = qb @ k[j0:j1].T
            tiles += 1
            peak_rows = max(peak_rows, s.shape[0])
            if causal and j1 - 1 > i0:
                rows = np.arange(i0, i1)[:, None]
                cols = np.arange(j0, j1)[None, :]
                s = np.where(cols > rows, -np.inf, s)
            m_new = np.maximum(m, s.max(axis=1))
            # Rows still fully masked keep m == -inf; exp against 0 keeps
            # their weights and correction at exactly zero.
            safe_m = np.where(np.isneginf(m_new), 0.0, m_new)
            p = np.exp(s - safe_m[:, None])
            corr = np.exp(m - safe_m)
            denom = denom * corr + p.sum(axis=1)
            acc = acc * corr[:, None] + p @ v[j0:j1]
            m = m_new
        out[i0:i1] = acc / denom[:, None]
    if stats is not None:
        stats["peak_score_rows"] = peak_rows
        stats["score_tiles"] = tiles
    return out


def lcs_length_ids(a, b):
    """Longest common subsequence length over two int id arrays (two-row DP)."""
    la, lb = len(a), len(b)
    if la == 0 or lb == 0:
        return 0
    prev = [0] * (lb + 1)
    cur = [0] * (lb + 1)
    for i in range(la):
        ai = a[i]
        for j in range(lb):
            if ai == b[j]:
                cur[j + 1] = prev[j] + 1
            else:
                up = prev[j + 1]
                left = cur[j]
                cur[j + 1] = up if up >= left else left
        prev, cur = cur, prev
    return prev[lb]
