"""Pure numpy implementation of the segment-cost kernels.

Mirrors ``_kernel.pyx`` exactly; see :mod:`multicp.kernels` for the contract.
"""

from __future__ import annotations

import numpy as np

GAUSS = 0
EXPO = 1
POISSON = 2


def interval_costs(kind, P1, P2, P0, Pbad, lo, hi, starts, ends):
    starts = np.asarray(starts, dtype=np.int64)
    ends = np.asarray(ends, dtype=np.int64)
    m = (ends - starts).astype(float)
    A = P1[ends] - P1[starts]
    C = P0[ends] - P0[starts]
    bad = (Pbad[ends] - Pbad[starts]) > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == GAUSS:
            B = P2[ends] - P2[starts]
            theta = np.clip(A / m[:, None], lo, hi)
            cost = C - 0.5 * (B - 2.0 * np.sum(theta * A, axis=1) + m * np.sum(theta * theta, axis=1))
        elif kind == EXPO:
            a = A[:, 0]
            theta = np.where(a > 0, m / np.where(a > 0, a, 1.0), np.inf)
            theta = np.clip(theta, lo[0], hi[0])
            cost = m * np.log(theta) - theta * a
        elif kind == POISSON:
            a = A[:, 0]
            theta = np.clip(a / m, lo[0], hi[0])
            cost = C + a * np.log(theta) - m * theta
        else:
            raise ValueError(f"unknown kernel kind {kind}")
    cost = np.where(bad | (m <= 0), -np.inf, cost)
    return cost


def suffix_max(kind, P1, P2, P0, Pbad, lo, hi, next_E, s_lo, s_hi, t_hi, min_len):
    n = P2.shape[0] - 1
    out = np.full(n + 1, -np.inf)
    for s in range(s_lo, s_hi + 1):
        t0 = s + min_len
        if t0 > t_hi:
            continue
        t = np.arange(t0, t_hi + 1, dtype=np.int64)
        c = interval_costs(kind, P1, P2, P0, Pbad, lo, hi, np.full(t.size, s, dtype=np.int64), t)
        out[s] = np.max(c + next_E[t])
    return out


def suffix_max_dense(cost, next_E, s_lo, s_hi, t_hi, min_len):
    n = cost.shape[0] - 1
    out = np.full(n + 1, -np.inf)
    for s in range(s_lo, s_hi + 1):
        t0 = s + min_len
        if t0 > t_hi:
            continue
        out[s] = np.max(cost[s, t0 : t_hi + 1] + next_E[t0 : t_hi + 1])
    return out
