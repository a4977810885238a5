"""Log-likelihood, the KL functional ``v``, overlap counts and the J decomposition.

Notation: candidate segments are indexed by ``j`` and use boundaries
``cps``; true segments are indexed by ``i`` and use ``true_cps``.
``v(psi, theta_j; psi0, theta_i0)`` is the expected log-density ratio of the
candidate segment-``j`` density against the true segment-``i`` density
under the latter, i.e. a negative Kullback-Leibler divergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate

from .errors import ArgumentError, ChangePointError, DomainError, IntegrationError
from .families import SegmentFamily, _as_psi
from .model import ChangePointConfig, Dataset, ModelSpec, ParameterState
from .rng import stream

QUAD_TOL = 1e-11
MC_DRAWS = 1_000_000


def full_loglik(spec: ModelSpec, data: Dataset, cps: ChangePointConfig, params: ParameterState) -> float:
    """Sum over segments of the segment log-likelihoods.

    Raises the family's :class:`DomainError` (with segment index attached) for
    out-of-support observations.
    """
    spec.check_config(cps, data.n)
    spec.check_params(params)
    total = 0.0
    for j, ((s, t), fam, theta) in enumerate(zip(cps.segments(), spec.families, params.thetas)):
        psi = _as_psi(fam, params.psi)
        x = data.slice(s, t)
        try:
            fam.check_params(psi, theta)
        except ChangePointError as exc:
            raise type(exc)(f"segment {j + 1}: {exc}") from exc
        ok = fam.in_support(x)
        if not np.all(ok):
            raise DomainError(fam.family_id, s + int(np.flatnonzero(~ok)[0]) + 1, f"segment {j + 1}")
        total += float(np.sum(fam.logpdf(x, psi, theta)))
    return total


def segment_logliks(spec: ModelSpec, data: Dataset, cps: ChangePointConfig, params: ParameterState) -> np.ndarray:
    return np.array(
        [
            float(np.sum(fam.logpdf(data.slice(s, t), _as_psi(fam, params.psi), th)))
            for (s, t), fam, th in zip(cps.segments(), spec.families, params.thetas)
        ]
    )


# ---------------------------------------------------------------------------
# expectations and v
# ---------------------------------------------------------------------------


class KLValue(NamedTuple):
    value: float
    stderr: float
    method: str


def _same(fam_j, psi, theta_j, fam_i, psi0, theta_i0) -> bool:
    return (
        fam_j == fam_i
        and np.array_equal(_as_psi(fam_j, psi), _as_psi(fam_i, psi0))
        and np.array_equal(np.atleast_1d(theta_j), np.atleast_1d(theta_i0))
    )


def _check_compatible(fam_j: SegmentFamily, fam_i: SegmentFamily) -> None:
    if fam_j.discrete != fam_i.discrete:
        raise DomainError(fam_j.family_id, -1, f"cannot compare against {fam_i.family_id!r}: mixed discrete/continuous support")
    if fam_j.obs_dim != fam_i.obs_dim:
        raise DomainError(fam_j.family_id, -1, f"observation dimension differs from {fam_i.family_id!r}")


def expected_log_density(fam_j, psi, theta_j, fam_i, psi0, theta_i0, *, method: str = "auto") -> KLValue:
    """``E[log f_j(psi, theta_j; X)]`` with ``X ~ f_i(psi0, theta_i0)``.

    ``method`` is ``"auto"`` (closed form when available), ``"closed"``,
    ``"quad"`` (adaptive quadrature or exact summation for counts) or ``"mc"``.
    """
    _check_compatible(fam_j, fam_i)
    psi_j = _as_psi(fam_j, psi)
    psi_i = _as_psi(fam_i, psi0)
    theta_j = np.atleast_1d(np.asarray(theta_j, dtype=float))
    theta_i0 = np.atleast_1d(np.asarray(theta_i0, dtype=float))
    if method in ("auto", "closed"):
        val = fam_j.expected_logpdf(psi_j, theta_j, fam_i, psi_i, theta_i0)
        if val is not None:
            return KLValue(float(val), 0.0, "closed")
        if method == "closed":
            raise ArgumentError(f"no closed form for {fam_j.family_id} under {fam_i.family_id}")
    if method == "mc" or (method == "auto" and fam_i.obs_dim > 1):
        return _expect_mc(lambda x: fam_j.logpdf(x, psi_j, theta_j), fam_i, psi_i, theta_i0)
    return _expect_quad(lambda x: fam_j.logpdf(x, psi_j, theta_j), fam_i, psi_i, theta_i0)


def _expect_quad(logf, fam_i, psi_i, theta_i) -> KLValue:
    if fam_i.obs_dim > 1:
        raise ArgumentError("quadrature is only available for univariate families")
    if fam_i.discrete:
        lo, hi = fam_i.count_range(psi_i, theta_i)
        k = np.arange(lo, hi + 1, dtype=float)
        w = np.exp(fam_i.logpdf(k, psi_i, theta_i))
        vals = logf(k)
        mask = w > 0
        if np.any(np.isneginf(vals[mask])):
            return KLValue(-math.inf, 0.0, "sum")
        return KLValue(float(math.fsum(w[mask] * vals[mask])), 0.0, "sum")

    def integrand(t):
        lp = fam_i.logpdf(np.array([t]), psi_i, theta_i)[0]
        if lp == -np.inf:
            return 0.0
        return float(np.exp(lp) * logf(np.array([t]))[0])

    a, b = fam_i.quad_bounds(psi_i, theta_i)
    # density mass outside the candidate support makes the expectation -inf
    probe = np.linspace(a, b, 257)
    dens = np.exp(fam_i.logpdf(probe, psi_i, theta_i))
    if np.any(np.isneginf(logf(probe)[dens > 0])):
        return KLValue(-math.inf, 0.0, "quad")
    m = fam_i.moments(psi_i, theta_i)
    points = None
    if m is not None and a < m["mean"] < b:
        sd = math.sqrt(m["var"])
        points = sorted({float(np.clip(m["mean"] + c * sd, a, b)) for c in (-8, -4, -2, -1, 0, 1, 2, 4, 8)} - {a, b})
    val, err = integrate.quad(integrand, a, b, points=points, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=500)
    if not np.isfinite(val) or err > 1e-8:
        raise IntegrationError("quadrature of the expected log-density did not converge", err)
    return KLValue(float(val), float(err), "quad")


def _expect_mc(logf, fam_i, psi_i, theta_i, draws: int = MC_DRAWS, seed: int = 7) -> KLValue:
    x = fam_i.sample(psi_i, theta_i, draws, stream(seed, 0))
    vals = logf(x)
    if np.any(np.isneginf(vals)):
        return KLValue(-math.inf, 0.0, "mc")
    return KLValue(float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(draws)), "mc")


def kl_v_detailed(fam_j, psi, theta_j, fam_i, psi0, theta_i0, *, method: str = "auto") -> KLValue:
    """``v`` together with its Monte Carlo standard error (0 for closed form or quadrature)."""
    if _same(fam_j, psi, theta_j, fam_i, psi0, theta_i0):
        return KLValue(0.0, 0.0, "identical")
    _check_compatible(fam_j, fam_i)
    psi_j, psi_i = _as_psi(fam_j, psi), _as_psi(fam_i, psi0)
    th_j = np.atleast_1d(np.asarray(theta_j, dtype=float))
    th_i = np.atleast_1d(np.asarray(theta_i0, dtype=float))
    if method in ("auto", "closed"):
        cross = fam_j.expected_logpdf(psi_j, th_j, fam_i, psi_i, th_i)
        own = fam_i.expected_logpdf(psi_i, th_i, fam_i, psi_i, th_i)
        if cross is not None and own is not None:
            if cross == -math.inf:
                return KLValue(-math.inf, 0.0, "closed")
            return KLValue(float(cross) - float(own), 0.0, "closed")
        if method == "closed":
            raise ArgumentError(f"no closed form for {fam_j.family_id} under {fam_i.family_id}")

    def log_ratio(x):
        return fam_j.logpdf(x, psi_j, th_j) - fam_i.logpdf(x, psi_i, th_i)

    # paired evaluation so the entropy term cancels draw by draw / node by node
    if method == "mc" or fam_i.obs_dim > 1:
        return _expect_mc(log_ratio, fam_i, psi_i, th_i)
    return _expect_quad(log_ratio, fam_i, psi_i, th_i)


def kl_v(fam_j, psi, theta_j, fam_i, psi0, theta_i0, *, method: str = "auto") -> float:
    """``v(psi, theta_j; psi0, theta_i0) = E_i[log f_j - log f_i] <= 0``.

    Closed form for built-in pairs; adaptive quadrature for other univariate
    pairs; Monte Carlo (``1e6`` draws, see :func:`kl_v_detailed` for the
    standard error) for other multivariate pairs. Identical family and
    parameters return exactly ``0.0``.
    """
    return kl_v_detailed(fam_j, psi, theta_j, fam_i, psi0, theta_i0, method=method).value


def kl_v_quadrature(fam_j, psi, theta_j, fam_i, psi0, theta_i0) -> float:
    """Direct numerical integration of ``(log f_j - log f_i) f_i`` (independent of any closed form)."""
    _check_compatible(fam_j, fam_i)
    psi_j, psi_i = _as_psi(fam_j, psi), _as_psi(fam_i, psi0)
    th_j = np.atleast_1d(np.asarray(theta_j, dtype=float))
    th_i = np.atleast_1d(np.asarray(theta_i0, dtype=float))
    return _expect_quad(lambda x: fam_j.logpdf(x, psi_j, th_j) - fam_i.logpdf(x, psi_i, th_i), fam_i, psi_i, th_i).value


# ---------------------------------------------------------------------------
# overlaps and the J functional
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OverlapMatrix:
    """``counts[j, i]`` = size of candidate segment ``j`` intersected with true segment ``i``."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def overlap_counts(n: int, cps: ChangePointConfig, true_cps: ChangePointConfig) -> OverlapMatrix:
    if cps.n != n or true_cps.n != n:
        raise ArgumentError(f"configurations are for n={cps.n} and n={true_cps.n}, expected n={n}")
    a, b = cps.segments(), true_cps.segments()
    counts = np.zeros((len(a), len(b)), dtype=np.int64)
    for j, (s, t) in enumerate(a):
        for i, (u, w) in enumerate(b):
            counts[j, i] = max(0, min(t, w) - max(s, u))
    return OverlapMatrix(counts)


def _v_matrix(spec: ModelSpec, params: ParameterState, true_spec: ModelSpec, true_params: ParameterState, mask=None):
    K, Ki = spec.n_segments, true_spec.n_segments
    V = np.zeros((K, Ki))
    for j in range(K):
        for i in range(Ki):
            if mask is not None and not mask[j, i]:
                continue
            V[j, i] = kl_v(
                spec.families[j], params.psi, params.thetas[j], true_spec.families[i], true_params.psi, true_params.thetas[i]
            )
    return V


def j1(spec, cps, params, true_params, true_cps, *, true_spec: ModelSpec | None = None) -> float:
    """Weighted sum of ``v`` over overlap cells: ``sum_ji (n_ji / n) v(...)``."""
    true_spec = true_spec or spec
    n = cps.n
    ov = overlap_counts(n, cps, true_cps).counts
    V = _v_matrix(spec, params, true_spec, true_params, mask=ov > 0)
    return float(np.sum(np.where(ov > 0, ov * V, 0.0)) / n)


def _expect_matrix(spec, params, true_spec, true_params, mask):
    K, Ki = spec.n_segments, true_spec.n_segments
    E = np.zeros((K, Ki))
    for j in range(K):
        for i in range(Ki):
            if mask[j, i]:
                E[j, i] = expected_log_density(
                    spec.families[j], params.psi, params.thetas[j], true_spec.families[i], true_params.psi, true_params.thetas[i]
                ).value
    return E


def j2(spec, data, cps, params, true_cps, true_params, *, true_spec: ModelSpec | None = None) -> float:
    """Difference of centered log-likelihood sums (candidate minus truth), divided by n."""
    true_spec = true_spec or spec
    n = data.n
    ov = overlap_counts(n, cps, true_cps).counts
    E_cand = _expect_matrix(spec, params, true_spec, true_params, ov > 0)
    diag = np.eye(true_spec.n_segments, dtype=bool)
    E_true = _expect_matrix(true_spec, true_params, true_spec, true_params, diag)
    cand = 0.0
    for j, (s, t) in enumerate(cps.segments()):
        fam = spec.families[j]
        lp = float(np.sum(fam.logpdf(data.slice(s, t), _as_psi(fam, params.psi), params.thetas[j])))
        cand += lp - float(np.sum(ov[j] * E_cand[j]))
    true = 0.0
    for i, (u, w) in enumerate(true_cps.segments()):
        fam = true_spec.families[i]
        lp = float(np.sum(fam.logpdf(data.slice(u, w), _as_psi(fam, true_params.psi), true_params.thetas[i])))
        true += lp - (w - u) * E_true[i, i]
    return (cand - true) / n


def j2_regrouped(spec, data, cps, params, true_cps, true_params, *, true_spec: ModelSpec | None = None) -> float:
    """Same quantity as :func:`j2`, accumulated cell by cell over the overlap sets."""
    true_spec = true_spec or spec
    n = data.n
    ov = overlap_counts(n, cps, true_cps).counts
    E_cand = _expect_matrix(spec, params, true_spec, true_params, ov > 0)
    E_true = _expect_matrix(true_spec, true_params, true_spec, true_params, np.eye(true_spec.n_segments, dtype=bool))
    total = 0.0
    for j, (s, t) in enumerate(cps.segments()):
        fj = spec.families[j]
        for i, (u, w) in enumerate(true_cps.segments()):
            lo, hi = max(s, u), min(t, w)
            if hi <= lo:
                continue
            x = data.slice(lo, hi)
            fi = true_spec.families[i]
            a = float(np.sum(fj.logpdf(x, _as_psi(fj, params.psi), params.thetas[j]))) - (hi - lo) * E_cand[j, i]
            b = float(np.sum(fi.logpdf(x, _as_psi(fi, true_params.psi), true_params.thetas[i]))) - (hi - lo) * E_true[i, i]
            total += a - b
    return total / n


def j_direct(spec, data, cps, params, true_cps, true_params, *, true_spec: ModelSpec | None = None) -> float:
    """``(l(params at cps) - l(true params at true cps)) / n``."""
    true_spec = true_spec or spec
    return (full_loglik(spec, data, cps, params) - full_loglik(true_spec, data, true_cps, true_params)) / data.n
