# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: Legendre series evaluation and barycentric walk.

Semantics must match ccembed._kernels_py exactly (same recurrences, same
tolerances); only the execution strategy differs.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def legendre_series(double[:, ::1] x, double[::1] coeffs):
    """Evaluate sum_l coeffs[l] * P_l(x) entrywise via upward recurrence."""
    cdef Py_ssize_t nrow = x.shape[0]
    cdef Py_ssize_t ncol = x.shape[1]
    cdef Py_ssize_t nterm = coeffs.shape[0]
    out_arr = np.empty((nrow, ncol), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, l
    cdef double xi, p_prev, p_cur, p_next, acc
    with nogil:
        for i in range(nrow):
            for j in range(ncol):
                xi = x[i, j]
                acc = coeffs[0]
                if nterm > 1:
                    p_prev = 1.0
                    p_cur = xi
                    acc += coeffs[1] * xi
                    for l in range(2, nterm):
                        p_next = ((2.0 * l - 1.0) * xi * p_cur
                                  - (l - 1.0) * p_prev) / l
                        acc += coeffs[l] * p_next
                        p_prev = p_cur
                        p_cur = p_next
                out[i, j] = acc
    return out_arr


def locate_walk(double[:, ::1] points,
                double[:, :, ::1] invmats,
                int[:, ::1] neighbors,
                long[::1] seeds,
                double tol,
                long max_steps):
    """Walk-based point location on a closed spherical triangulation.

    For each point, starts at the seed triangle and repeatedly moves across
    the edge opposite the most negative barycentric coordinate.  Entries
    that fail to settle within ``max_steps`` get triangle index -1 (caller
    falls back to an exhaustive scan).
    """
    cdef Py_ssize_t npt = points.shape[0]
    tri_arr = np.empty(npt, dtype=np.int64)
    bary_arr = np.zeros((npt, 3), dtype=np.float64)
    cdef long[::1] tri_out = tri_arr
    cdef double[:, ::1] bary_out = bary_arr
    cdef Py_ssize_t i, step
    cdef long cur, nxt
    cdef int worst
    cdef double b0, b1, b2, px, py, pz, bmin
    with nogil:
        for i in range(npt):
            px = points[i, 0]
            py = points[i, 1]
            pz = points[i, 2]
            cur = seeds[i]
            tri_out[i] = -1
            for step in range(max_steps):
                b0 = (invmats[cur, 0, 0] * px + invmats[cur, 0, 1] * py
                      + invmats[cur, 0, 2] * pz)
                b1 = (invmats[cur, 1, 0] * px + invmats[cur, 1, 1] * py
                      + invmats[cur, 1, 2] * pz)
                b2 = (invmats[cur, 2, 0] * px + invmats[cur, 2, 1] * py
                      + invmats[cur, 2, 2] * pz)
                bmin = b0
                worst = 0
                if b1 < bmin:
                    bmin = b1
                    worst = 1
                if b2 < bmin:
                    bmin = b2
                    worst = 2
                if bmin >= -tol:
                    tri_out[i] = cur
                    bary_out[i, 0] = b0
                    bary_out[i, 1] = b1
                    bary_out[i, 2] = b2
                    break
                nxt = neighbors[cur, worst]
                if nxt < 0:
                    break
                cur = nxt
    return tri_arr, bary_arr
