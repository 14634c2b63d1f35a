"""Pure-NumPy implementations of the hot kernels.

Used when the compiled extension is unavailable (or forced off via the
CCEMBED_FORCE_PYTHON environment variable).  Must agree numerically with
ccembed._ckern: same recurrence, same tolerances.
"""

import numpy as np


def legendre_series(x, coeffs):
    """Evaluate sum_l coeffs[l] * P_l(x) entrywise via upward recurrence."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    acc = np.full(x.shape, coeffs[0])
    if coeffs.shape[0] > 1:
        p_prev = np.ones_like(x)
        p_cur = x.copy()
        acc += coeffs[1] * x
        for l in range(2, coeffs.shape[0]):
            p_next = ((2.0 * l - 1.0) * x * p_cur - (l - 1.0) * p_prev) / l
            acc += coeffs[l] * p_next
            p_prev = p_cur
            p_cur = p_next
    return acc


def locate_walk(points, invmats, neighbors, seeds, tol, max_steps):
    """Walk-based point location; NumPy per-point loop.

    Matches the compiled variant: returns (tri_idx, bary) with tri_idx -1
    for points that did not settle (resolved by the caller's full scan).
    """
    points = np.asarray(points, dtype=np.float64)
    npt = points.shape[0]
    tri_out = np.full(npt, -1, dtype=np.int64)
    bary_out = np.zeros((npt, 3), dtype=np.float64)
    for i in range(npt):
        p = points[i]
        cur = int(seeds[i])
        for _ in range(max_steps):
            b = invmats[cur] @ p
            worst = int(np.argmin(b))
            if b[worst] >= -tol:
                tri_out[i] = cur
                bary_out[i] = b
                break
            nxt = neighbors[cur, worst]
            if nxt < 0:
                break
            cur = int(nxt)
    return tri_out, bary_out
