"""Safeguarded projected Newton ascent on a box."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import OptimizationError

MAX_ITER = 100
GRAD_TOL = 1e-10
# accepted when the line search stalls at floating-point resolution
STALL_TOL = 1e-6


def projected_gradient(x, g, lo, hi, eps=0.0):
    at_lo = (x <= lo + eps) & (g < 0)
    at_hi = (x >= hi - eps) & (g > 0)
    pg = np.where(at_lo | at_hi, 0.0, g)
    return pg, ~(at_lo | at_hi)


def maximize_box(
    func: Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]],
    x0,
    lo,
    hi,
    max_iter: int = MAX_ITER,
    tol: float = GRAD_TOL,
) -> tuple[np.ndarray, float, dict]:
    """Maximize ``func`` over the box ``[lo, hi]``.

    ``func(x)`` returns ``(value, gradient, hessian)``. Variables sitting on a
    bound whose gradient points outward are held fixed; Newton steps are taken
    on the remaining coordinates with step halving until the value increases.
    A non-negative-definite Hessian falls back to a scaled gradient step.

    Returns ``(x, value, info)`` with ``info`` holding iteration count and the
    final projected-gradient norm.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    F, g, H = func(x)
    if not np.isfinite(F):
        raise OptimizationError("objective is not finite at the starting point", best=x)
    trace = [F]
    for it in range(max_iter):
        pg, free = projected_gradient(x, g, lo, hi)
        gnorm = float(np.linalg.norm(pg))
        if gnorm <= tol * (1.0 + abs(F)):
            return x, F, {"iterations": it, "grad_norm": gnorm, "trace": trace}
        d = np.zeros_like(x)
        gf = g[free]
        Hf = H[np.ix_(free, free)]
        try:
            c = np.linalg.cholesky(-Hf)
            d[free] = np.linalg.solve(c.T, np.linalg.solve(c, gf))
        except np.linalg.LinAlgError:
            scale = max(1.0, float(np.max(np.abs(np.diag(Hf)))) if Hf.size else 1.0)
            d[free] = gf / scale
        step = 1.0
        improved = False
        for _ in range(60):
            xn = np.clip(x + step * d, lo, hi)
            Fn, gn, Hn = func(xn)
            if np.isfinite(Fn) and Fn > F:
                improved = True
                break
            step *= 0.5
        if not improved:
            if gnorm <= STALL_TOL * (1.0 + abs(F)):
                return x, F, {"iterations": it, "grad_norm": gnorm, "trace": trace}
            raise OptimizationError("line search failed to increase the objective", best=x, grad_norm=gnorm, trace=trace)
        x, F, g, H = xn, Fn, gn, Hn
        trace.append(F)
    pg, _ = projected_gradient(x, g, lo, hi)
    gnorm = float(np.linalg.norm(pg))
    if gnorm <= STALL_TOL * (1.0 + abs(F)):
        return x, F, {"iterations": max_iter, "grad_norm": gnorm, "trace": trace}
    raise OptimizationError(f"no convergence after {max_iter} iterations", best=x, grad_norm=gnorm, trace=trace)
