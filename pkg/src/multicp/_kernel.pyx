# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled segment-cost kernels; contract documented in multicp.kernels."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, INFINITY

cnp.import_array()

DEF GAUSS = 0
DEF EXPO = 1
DEF POISSON = 2


cdef inline double _clip(double x, double lo, double hi) noexcept nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


cdef double _cost(int kind, Py_ssize_t s, Py_ssize_t t,
                  const double[:, ::1] P1, const double[::1] P2, const double[::1] P0,
                  const long long[::1] Pbad, const double[::1] lo, const double[::1] hi) noexcept nogil:
    cdef double m = <double>(t - s)
    cdef double a, b, c, th, dot, sq
    cdef Py_ssize_t q, d
    if t <= s or Pbad[t] - Pbad[s] > 0:
        return -INFINITY
    c = P0[t] - P0[s]
    if kind == GAUSS:
        q = P1.shape[1]
        dot = 0.0
        sq = 0.0
        for d in range(q):
            a = P1[t, d] - P1[s, d]
            th = _clip(a / m, lo[d], hi[d])
            dot += th * a
            sq += th * th
        b = P2[t] - P2[s]
        return c - 0.5 * (b - 2.0 * dot + m * sq)
    elif kind == EXPO:
        a = P1[t, 0] - P1[s, 0]
        if a > 0:
            th = _clip(m / a, lo[0], hi[0])
        else:
            th = hi[0]
        return m * log(th) - th * a
    else:
        a = P1[t, 0] - P1[s, 0]
        th = _clip(a / m, lo[0], hi[0])
        return c + a * log(th) - m * th


def interval_costs(int kind, const double[:, ::1] P1, const double[::1] P2, const double[::1] P0,
                   const long long[::1] Pbad, const double[::1] lo, const double[::1] hi,
                   const long long[::1] starts, const long long[::1] ends):
    if kind < 0 or kind > 2:
        raise ValueError(f"unknown kernel kind {kind}")
    cdef Py_ssize_t i, m = starts.shape[0]
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(m):
            o[i] = _cost(kind, starts[i], ends[i], P1, P2, P0, Pbad, lo, hi)
    return out


def suffix_max(int kind, const double[:, ::1] P1, const double[::1] P2, const double[::1] P0,
               const long long[::1] Pbad, const double[::1] lo, const double[::1] hi,
               const double[::1] next_E, Py_ssize_t s_lo, Py_ssize_t s_hi, Py_ssize_t t_hi,
               Py_ssize_t min_len):
    if kind < 0 or kind > 2:
        raise ValueError(f"unknown kernel kind {kind}")
    cdef Py_ssize_t n = P2.shape[0] - 1
    out = np.full(n + 1, -np.inf)
    cdef double[::1] o = out
    cdef Py_ssize_t s, t
    cdef double best, v
    with nogil:
        for s in range(s_lo, s_hi + 1):
            if s + min_len > t_hi:
                continue
            best = -INFINITY
            for t in range(s + min_len, t_hi + 1):
                v = _cost(kind, s, t, P1, P2, P0, Pbad, lo, hi) + next_E[t]
                if v > best:
                    best = v
            o[s] = best
    return out


def suffix_max_dense(const double[:, ::1] cost, const double[::1] next_E, Py_ssize_t s_lo,
                     Py_ssize_t s_hi, Py_ssize_t t_hi, Py_ssize_t min_len):
    cdef Py_ssize_t n = cost.shape[0] - 1
    out = np.full(n + 1, -np.inf)
    cdef double[::1] o = out
    cdef Py_ssize_t s, t
    cdef double best, v
    with nogil:
        for s in range(s_lo, s_hi + 1):
            if s + min_len > t_hi:
                continue
            best = -INFINITY
            for t in range(s + min_len, t_hi + 1):
                v = cost[s, t] + next_E[t]
                if v > best:
                    best = v
            o[s] = best
    return out
