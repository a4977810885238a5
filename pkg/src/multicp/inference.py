"""Plug-in information matrix, standard errors and Wald intervals.

The information estimate is the outer product of per-observation score
vectors evaluated at the fitted parameters over the fitted segments.
Coordinates are packed as ``(psi, theta_1, ..., theta_{k+1})``; an
observation in segment ``j`` contributes only to the ``psi`` and ``theta_j``
rows and columns, so the theta part is block diagonal by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from .errors import ArgumentError, InferenceError, NumericError
from .families import _as_psi
from .model import Dataset, ModelSpec

JITTER = 1e-10


@dataclass(frozen=True, eq=False)
class InfoMatrix:
    """Assembled information matrix with views onto its blocks."""

    full: np.ndarray
    dims: tuple[int, ...]

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.dims)])

    def block(self, a: int, b: int) -> np.ndarray:
        """Block ``(a, b)`` where index 0 is psi and ``j >= 1`` is ``theta_j``."""
        o = self.offsets
        return self.full[o[a] : o[a + 1], o[b] : o[b + 1]]

    @property
    def psi_psi(self) -> np.ndarray:
        return self.block(0, 0)

    def psi_theta(self, j: int) -> np.ndarray:
        """Cross block between psi and ``theta_j`` (``j`` is 1-based)."""
        return self.block(0, j)

    def theta_theta(self, j: int) -> np.ndarray:
        return self.block(j, j)


def _scores(spec: ModelSpec, data: Dataset, cps, params) -> list[tuple[int, np.ndarray]]:
    """Per-segment score arrays ``(m_j, d + d_j)`` at the given parameters."""
    out = []
    for j, ((s, t), fam, theta) in enumerate(zip(cps.segments(), spec.families, params.thetas)):
        psi = _as_psi(fam, params.psi)
        x = data.slice(s, t)
        lp = np.atleast_1d(fam.logpdf(x, psi, theta))
        if not np.all(np.isfinite(lp)):
            bad = s + int(np.flatnonzero(~np.isfinite(lp))[0]) + 1
            raise NumericError(f"log-density is not finite at observation {bad} (segment {j + 1})")
        g = np.asarray(fam.grad(x, psi, theta), dtype=float).reshape(x.shape[0], -1)
        if not np.all(np.isfinite(g)):
            bad = s + int(np.flatnonzero(~np.all(np.isfinite(g), axis=1))[0]) + 1
            raise NumericError(f"score is not finite at observation {bad} (segment {j + 1})")
        out.append((j, g))
    return out


PAIRWISE_BLOCK = 1024  # rows per block; a power of two keeps the reduction tree fixed


def _pairwise_sum(P: np.ndarray) -> np.ndarray:
    """Sum along axis 0 by combining neighbours level by level (odd tail carried up)."""
    while P.shape[0] > 1:
        m = P.shape[0]
        head = P[0 : m - (m % 2) : 2] + P[1 : m - (m % 2) : 2]
        P = np.concatenate([head, P[m - 1 :]]) if m % 2 else head
    return P[0]


def outer_product_sum(g: np.ndarray) -> np.ndarray:
    """``sum_i g_i g_i^T`` over a fixed pairwise reduction tree.

    The tree does not depend on how rows are blocked, so results are
    bit-stable, and repeating every row in place doubles the sum exactly.
    """
    g = np.asarray(g, dtype=float)
    a = g.shape[1]
    if g.shape[0] == 0:
        return np.zeros((a, a))
    blocks = [
        _pairwise_sum(g[i : i + PAIRWISE_BLOCK, :, None] * g[i : i + PAIRWISE_BLOCK, None, :])
        for i in range(0, g.shape[0], PAIRWISE_BLOCK)
    ]
    return _pairwise_sum(np.stack(blocks))


def plugin_info(spec: ModelSpec, data: Dataset, fit) -> InfoMatrix:
    """Outer-product-of-gradients information at a fitted result.

    Parameters
    ----------
    spec, data
        Model and observations the fit was computed from.
    fit
        Anything with ``change_points`` and ``params`` attributes, usually a
        :class:`~multicp.estimator.FitResult`.

    Returns
    -------
    InfoMatrix
        Blocks are sums of ``g g^T`` with ``g`` the score in ``(psi, theta_j)``.
    """
    cps, params = fit.change_points, fit.params
    spec.check_config(cps, data.n)
    spec.check_params(params)
    d = spec.common_dim
    dims = spec.dims
    off = np.concatenate([[0], np.cumsum(dims)])
    D = int(off[-1])
    M = np.zeros((D, D))
    for j, g in _scores(spec, data, cps, params):
        fam = spec.families[j]
        th = np.arange(off[j + 1], off[j + 2])
        if fam.psi_dim:
            idx = np.concatenate([np.arange(d), th])
        else:
            g = g[:, fam.psi_dim :]
            idx = th
        M[np.ix_(idx, idx)] += outer_product_sum(g)
    M = 0.5 * (M + M.T)
    return InfoMatrix(M, dims)


def naive_info(spec: ModelSpec, data: Dataset, fit) -> np.ndarray:
    """Per-observation loop building padded score vectors; used as a reference."""
    cps, params = fit.change_points, fit.params
    dims = spec.dims
    off = np.concatenate([[0], np.cumsum(dims)])
    D = int(off[-1])
    M = np.zeros((D, D))
    for j, (s, t) in enumerate(cps.segments()):
        fam = spec.families[j]
        psi = _as_psi(fam, params.psi)
        for i in range(s, t):
            g = np.asarray(fam.grad(data.values[i : i + 1], psi, params.thetas[j]), dtype=float).ravel()
            full = np.zeros(D)
            if fam.psi_dim:
                full[: spec.common_dim] = g[: fam.psi_dim]
            full[off[j + 1] : off[j + 2]] = g[fam.psi_dim :]
            M += np.outer(full, full)
    return M


def hessian_info(spec: ModelSpec, data: Dataset, fit) -> np.ndarray:
    """Negative summed Hessian, reported next to the outer-product form for comparison."""
    cps, params = fit.change_points, fit.params
    dims = spec.dims
    off = np.concatenate([[0], np.cumsum(dims)])
    d = spec.common_dim
    M = np.zeros((int(off[-1]),) * 2)
    for j, (s, t) in enumerate(cps.segments()):
        fam = spec.families[j]
        H = np.sum(fam.hessian(data.slice(s, t), _as_psi(fam, params.psi), params.thetas[j]), axis=0)
        th = np.arange(off[j + 1], off[j + 2])
        if fam.psi_dim:
            idx = np.concatenate([np.arange(d), th])
        else:
            idx = th
        M[np.ix_(idx, idx)] -= H
    return 0.5 * (M + M.T)


def invert_info(info) -> tuple[np.ndarray, float]:
    """Inverse of the information via Cholesky, with a small diagonal jitter if needed.

    Returns the inverse and the 2-norm condition number. Raises
    :class:`InferenceError` when the matrix is not positive definite even
    after jitter.
    """
    M = info.full if isinstance(info, InfoMatrix) else np.asarray(info, dtype=float)
    if M.size == 0:
        return M.copy(), 1.0
    ev = np.linalg.eigvalsh(M)
    cond = float(ev[-1] / ev[0]) if ev[0] > 0 else float("inf")
    scale = max(float(np.max(np.abs(np.diag(M)))), 1.0)
    # numerically rank deficient: jitter would only manufacture huge standard errors
    rank_tol = M.shape[0] * np.finfo(float).eps * max(float(ev[-1]), 0.0)
    attempts = () if ev[0] <= rank_tol else (0.0, JITTER * scale)
    for jitter in attempts:
        try:
            c = linalg.cho_factor(M + jitter * np.eye(M.shape[0]), lower=True, check_finite=True)
        except linalg.LinAlgError:
            continue
        inv = linalg.cho_solve(c, np.eye(M.shape[0]))
        return 0.5 * (inv + inv.T), cond
    raise InferenceError(
        f"information matrix is singular (condition number {cond:.3g}); "
        "check boundary flags and whether neighbouring segments are distinguishable"
    )


def standard_errors(info) -> np.ndarray:
    inv, _ = invert_info(info)
    return np.sqrt(np.clip(np.diag(inv), 0.0, None))


@dataclass(frozen=True)
class WaldInterval:
    name: str
    estimate: float
    std_error: float
    lower: float
    upper: float


def coordinate_names(spec: ModelSpec) -> list[str]:
    names = [f"psi[{c}]" for c in range(spec.common_dim)]
    for j, fam in enumerate(spec.families):
        names += [f"theta_{j + 1}[{c}]" for c in range(fam.theta_dim)]
    return names


def wald_intervals(fit, info, level: float = 0.95, spec: ModelSpec | None = None) -> list[WaldInterval]:
    """Per-coordinate intervals ``phi_c +- z * sqrt([info^-1]_cc)``."""
    if not 0.0 < level < 1.0:
        raise ArgumentError(f"level must lie in (0, 1), got {level}")
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    est = fit.params.packed()
    se = standard_errors(info)
    if se.size != est.size:
        raise ArgumentError("information matrix does not match the parameter vector")
    names = coordinate_names(spec) if spec is not None else [f"phi[{c}]" for c in range(est.size)]
    return [WaldInterval(nm, float(e), float(s), float(e - z * s), float(e + z * s)) for nm, e, s in zip(names, est, se)]
