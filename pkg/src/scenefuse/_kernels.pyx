# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled lane of the hot kernels.

Same contracts as ``_kernels_py``; each function fuses what numpy would do
in several passes with temporaries into one pass over memory.
"""

from libc.math cimport exp, log1p

import numpy as np


def gap_pool(const double[:, ::1] maps):
    """Mean of each row of a (depth, h*w) map matrix."""
    cdef Py_ssize_t d = maps.shape[0]
    cdef Py_ssize_t hw = maps.shape[1]
    out = np.empty(d, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t j, i
    cdef double s
    for j in range(d):
        s = 0.0
        for i in range(hw):
            s += maps[j, i]
        o[j] = s / hw
    return out


def threshold_scale(const double[::1] v):
    """Zero out entries below the vector mean, scale survivors by the max.

    A zero maximum yields the all-zero vector (the only consistent limit).
    """
    cdef Py_ssize_t n = v.shape[0]
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t j
    cdef double s = 0.0
    cdef double mx = v[0]
    for j in range(n):
        s += v[j]
        if v[j] > mx:
            mx = v[j]
    cdef double m = s / n
    if mx == 0.0:
        return out
    for j in range(n):
        if v[j] >= m:
            o[j] = v[j] / mx
    return out


def logistic_terms(const double[::1] margins):
    """Per-sample logistic-loss pieces for margins m_i = y_i * (w . x_i).

    Returns ``(loss_sum, sneg, curv)``; see the numpy lane for the
    definitions. One exp per element, overflow-safe.
    """
    cdef Py_ssize_t n = margins.shape[0]
    sneg = np.empty(n, dtype=np.float64)
    curv = np.empty(n, dtype=np.float64)
    cdef double[::1] sn = sneg
    cdef double[::1] cv = curv
    cdef Py_ssize_t i
    cdef double m, e, s, loss_sum = 0.0
    for i in range(n):
        m = margins[i]
        if m >= 0.0:
            e = exp(-m)
            loss_sum += log1p(e)
            s = e / (1.0 + e)
        else:
            e = exp(m)
            loss_sum += log1p(e) - m
            s = 1.0 / (1.0 + e)
        sn[i] = s
        cv[i] = s * (1.0 - s)
    return loss_sum, sneg, curv
