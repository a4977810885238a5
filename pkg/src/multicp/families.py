"""Segment families and the model-core operations on them.

Each built-in family is an exponential family, so segment log-likelihoods at
fixed common parameter reduce to prefix sums of sufficient statistics (see
:meth:`SegmentFamily.kernel_stats`). User families can subclass
:class:`SegmentFamily` and implement only :meth:`~SegmentFamily.logpdf`; the
gradient, Hessian and inner maximizer then fall back to finite differences
and projected Newton.

All observation arguments are ``(m, p)`` arrays; univariate families use
column 0.
"""

from __future__ import annotations

import math
from functools import cached_property

import numpy as np
from scipy import linalg, special, stats

from .errors import DomainError, ParameterError
from .kernels import EXPO, GAUSS, POISSON, KernelStats
from .optimize import maximize_box
from .rng import as_generator

LOG_2PI = math.log(2.0 * math.pi)


def _col(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1)
    if x.ndim == 2:
        return x[:, 0]
    return x


def _rows(x, p: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if p == 1 else x.reshape(1, -1)
    if x.shape[1] != p:
        raise ParameterError(f"observations have {x.shape[1]} columns, family expects {p}")
    return x


def _span(x) -> tuple[float, float, float]:
    lo, hi = float(np.min(x)), float(np.max(x))
    r = hi - lo
    return lo, hi, (r if r > 0 else 1.0)


class SegmentFamily:
    """Parametric density ``f(psi, theta; x)`` for one segment.

    Subclasses set ``family_id``, ``theta_dim``, ``psi_dim``, ``psi_role``,
    ``obs_dim`` and ``support`` (one of ``"real"``, ``"positive"``,
    ``"count"``) and implement :meth:`logpdf` and :meth:`sample`.
    """

    family_id = "abstract"
    theta_dim = 1
    psi_dim = 0
    psi_role: str | None = None
    obs_dim = 1
    support = "real"

    @property
    def discrete(self) -> bool:
        return self.support == "count"

    @property
    def key(self) -> tuple:
        return (self.family_id,)

    def __eq__(self, other):
        return isinstance(other, SegmentFamily) and type(self) is type(other) and self.key == other.key

    def __hash__(self):
        return hash((type(self).__name__, self.key))

    def __repr__(self):
        extra = ", ".join(f"{v}" for v in self.key[1:])
        return f"{type(self).__name__}({extra})"

    def describe(self) -> dict:
        return {"name": self.family_id}

    # -- densities ---------------------------------------------------------
    def logpdf(self, x, psi, theta) -> np.ndarray:
        """Log-density per row; ``-inf`` outside the support."""
        raise NotImplementedError

    def in_support(self, x) -> np.ndarray:
        x = _rows(x, self.obs_dim)
        return np.all(np.isfinite(x), axis=1)

    def check_params(self, psi, theta) -> None:
        psi = np.atleast_1d(np.asarray(psi, dtype=float)) if np.size(psi) else np.zeros(0)
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if psi.size != self.psi_dim:
            raise ParameterError(f"{self.family_id}: psi has {psi.size} entries, expected {self.psi_dim}")
        if theta.size != self.theta_dim:
            raise ParameterError(f"{self.family_id}: theta has {theta.size} entries, expected {self.theta_dim}")
        if not (np.all(np.isfinite(psi)) and np.all(np.isfinite(theta))):
            raise ParameterError(f"{self.family_id}: parameters must be finite")

    def grad(self, x, psi, theta) -> np.ndarray:
        """Gradient of the log-density in packed ``(psi, theta)`` order, one row per observation."""
        return _fd_grad(self, x, psi, theta)

    def hessian(self, x, psi, theta) -> np.ndarray:
        """Per-observation Hessian ``(m, D, D)``; central differences of :meth:`grad` by default."""
        x = _rows(x, self.obs_dim)
        phi = np.concatenate([np.atleast_1d(psi) if self.psi_dim else np.zeros(0), np.atleast_1d(theta)]).astype(float)
        D = phi.size
        out = np.empty((x.shape[0], D, D))
        for c in range(D):
            h = 1e-5 * (1.0 + abs(phi[c]))
            up, dn = phi.copy(), phi.copy()
            up[c] += h
            dn[c] -= h
            gu = self.grad(x, up[: self.psi_dim], up[self.psi_dim :])
            gd = self.grad(x, dn[: self.psi_dim], dn[self.psi_dim :])
            out[:, :, c] = (gu - gd) / (2 * h)
        return 0.5 * (out + out.transpose(0, 2, 1))

    # -- sampling and boxes ------------------------------------------------
    def sample(self, psi, theta, count: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def default_theta_box(self, x) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def default_psi_box(self, x) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    # -- fast paths (optional) ---------------------------------------------
    def theta_mle(self, x, psi, lo, hi) -> np.ndarray | None:
        """Closed-form box-constrained maximizer, or ``None`` to use Newton."""
        return None

    def kernel_stats(self, x, psi, lo, hi) -> KernelStats | None:
        """Prefix-summable statistics for the compiled cost kernel, or ``None``."""
        return None

    def pooled_fit(self, slices, psi_lo, psi_hi, theta_boxes):
        """Closed-form joint ``(psi, thetas)`` maximizer over fixed segments, or ``None``."""
        return None

    def moments(self, psi, theta) -> dict | None:
        return None

    def expected_logpdf(self, psi, theta, true_family: "SegmentFamily", psi0, theta0) -> float | None:
        """``E[log f(psi, theta; X)]`` for ``X ~ true_family(psi0, theta0)`` in closed form, if known."""
        return None

    def quad_bounds(self, psi, theta) -> tuple[float, float]:
        """Integration range for univariate continuous families."""
        return (-np.inf, np.inf)


def _fd_grad(fam: SegmentFamily, x, psi, theta) -> np.ndarray:
    x = _rows(x, fam.obs_dim)
    psi = np.atleast_1d(np.asarray(psi, dtype=float)) if fam.psi_dim else np.zeros(0)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.concatenate([psi, theta])
    out = np.empty((x.shape[0], phi.size))
    for c in range(phi.size):
        h = 1e-6 * (1.0 + abs(phi[c]))
        up, dn = phi.copy(), phi.copy()
        up[c] += h
        dn[c] -= h
        fu = fam.logpdf(x, up[: fam.psi_dim], up[fam.psi_dim :])
        fd = fam.logpdf(x, dn[: fam.psi_dim], dn[fam.psi_dim :])
        out[:, c] = (fu - fd) / (2 * h)
    return out


# ---------------------------------------------------------------------------
# univariate normal
# ---------------------------------------------------------------------------


class _NormalBase(SegmentFamily):
    theta_dim = 1
    support = "real"

    def variance(self, psi) -> float:
        raise NotImplementedError

    def logpdf(self, x, psi, theta):
        x = _col(x)
        v = self.variance(psi)
        mu = float(np.atleast_1d(theta)[0])
        return -0.5 * (LOG_2PI + math.log(v)) - (x - mu) ** 2 / (2.0 * v)

    def sample(self, psi, theta, count, rng):
        mu = float(np.atleast_1d(theta)[0])
        return rng.normal(mu, math.sqrt(self.variance(psi)), size=count).reshape(-1, 1)

    def default_theta_box(self, x):
        lo, hi, r = _span(_col(x))
        return np.array([lo - 10 * r]), np.array([hi + 10 * r])

    def theta_mle(self, x, psi, lo, hi):
        return np.clip(np.array([np.mean(_col(x))]), lo, hi)

    def kernel_stats(self, x, psi, lo, hi):
        x = _col(x)
        sd = math.sqrt(self.variance(psi))
        c = float(np.mean(x))
        y = (x - c) / sd
        return KernelStats(
            GAUSS,
            y[:, None],
            y * y,
            np.full(x.size, -0.5 * (LOG_2PI + 2 * math.log(sd))),
            np.zeros(x.size, dtype=bool),
            (np.asarray(lo, dtype=float) - c) / sd,
            (np.asarray(hi, dtype=float) - c) / sd,
        )

    def moments(self, psi, theta):
        mu = float(np.atleast_1d(theta)[0])
        return {"mean": mu, "var": self.variance(psi)}

    def expected_logpdf(self, psi, theta, true_family, psi0, theta0):
        if true_family.discrete:
            raise DomainError(self.family_id, -1, "continuous candidate against a discrete true distribution")
        mom = true_family.moments(psi0, theta0)
        if mom is None or true_family.obs_dim != 1:
            return None
        v = self.variance(psi)
        mu = float(np.atleast_1d(theta)[0])
        return -0.5 * (LOG_2PI + math.log(v)) - (mom["var"] + (mom["mean"] - mu) ** 2) / (2.0 * v)

    def quad_bounds(self, psi, theta):
        mu = float(np.atleast_1d(theta)[0])
        sd = math.sqrt(self.variance(psi))
        return (mu - 40 * sd, mu + 40 * sd)


class NormalKnownVariance(_NormalBase):
    """Normal with unknown mean ``theta`` and a fixed, known variance."""

    family_id = "normal-known-var"

    def __init__(self, variance: float = 1.0):
        variance = float(variance)
        if not variance > 0 or not math.isfinite(variance):
            raise ParameterError("variance must be positive and finite")
        self.fixed_variance = variance

    @property
    def key(self):
        return (self.family_id, self.fixed_variance)

    def describe(self):
        return {"name": self.family_id, "variance": self.fixed_variance}

    def variance(self, psi):
        return self.fixed_variance

    def grad(self, x, psi, theta):
        x = _col(x)
        mu = float(np.atleast_1d(theta)[0])
        return ((x - mu) / self.fixed_variance)[:, None]

    def hessian(self, x, psi, theta):
        m = _col(x).size
        return np.full((m, 1, 1), -1.0 / self.fixed_variance)


class NormalCommonVariance(_NormalBase):
    """Normal with unknown mean ``theta`` and variance ``psi`` shared by all segments."""

    family_id = "normal-common-var"
    psi_dim = 1
    psi_role = "variance"

    def check_params(self, psi, theta):
        super().check_params(psi, theta)
        if not float(np.atleast_1d(psi)[0]) > 0:
            raise ParameterError("normal-common-var: variance must be positive")

    def variance(self, psi):
        return float(np.atleast_1d(psi)[0])

    def default_psi_box(self, x):
        s2 = float(np.var(_col(x)))
        s2 = s2 if s2 > 0 else 1.0
        return np.array([1e-6 * s2]), np.array([1e6 * s2])

    def grad(self, x, psi, theta):
        x = _col(x)
        v = self.variance(psi)
        r = x - float(np.atleast_1d(theta)[0])
        return np.column_stack([-0.5 / v + r * r / (2 * v * v), r / v])

    def hessian(self, x, psi, theta):
        x = _col(x)
        v = self.variance(psi)
        r = x - float(np.atleast_1d(theta)[0])
        out = np.empty((x.size, 2, 2))
        out[:, 0, 0] = 0.5 / v**2 - r * r / v**3
        out[:, 0, 1] = out[:, 1, 0] = -r / v**2
        out[:, 1, 1] = -1.0 / v
        return out

    def pooled_fit(self, slices, psi_lo, psi_hi, theta_boxes):
        thetas, rss, count = [], 0.0, 0
        for x, (lo, hi) in zip(slices, theta_boxes):
            x = _col(x)
            th = np.clip(np.array([np.mean(x)]), lo, hi)
            thetas.append(th)
            rss += float(np.sum((x - th[0]) ** 2))
            count += x.size
        psi = np.clip(np.array([rss / count]), psi_lo, psi_hi)
        return psi, thetas


# ---------------------------------------------------------------------------
# exponential and Poisson
# ---------------------------------------------------------------------------


class Exponential(SegmentFamily):
    """Exponential distribution with rate ``theta``."""

    family_id = "exponential"
    support = "positive"

    def check_params(self, psi, theta):
        super().check_params(psi, theta)
        if not float(np.atleast_1d(theta)[0]) > 0:
            raise ParameterError("exponential: rate must be positive")

    def in_support(self, x):
        x = _col(x)
        return np.isfinite(x) & (x >= 0)

    def logpdf(self, x, psi, theta):
        x = _col(x)
        rate = float(np.atleast_1d(theta)[0])
        with np.errstate(invalid="ignore"):
            out = math.log(rate) - rate * x
        return np.where(x >= 0, out, -np.inf)

    def grad(self, x, psi, theta):
        x = _col(x)
        rate = float(np.atleast_1d(theta)[0])
        return (1.0 / rate - x)[:, None]

    def hessian(self, x, psi, theta):
        rate = float(np.atleast_1d(theta)[0])
        return np.full((_col(x).size, 1, 1), -1.0 / rate**2)

    def sample(self, psi, theta, count, rng):
        rate = float(np.atleast_1d(theta)[0])
        return rng.exponential(1.0 / rate, size=count).reshape(-1, 1)

    def default_theta_box(self, x):
        m = float(np.mean(np.abs(_col(x))))
        m = m if m > 0 else 1.0
        return np.array([1e-6 / m]), np.array([1e6 / m])

    def theta_mle(self, x, psi, lo, hi):
        s = float(np.mean(_col(x)))
        rate = 1.0 / s if s > 0 else np.inf
        return np.clip(np.array([rate]), lo, hi)

    def kernel_stats(self, x, psi, lo, hi):
        x = _col(x)
        return KernelStats(
            EXPO,
            x[:, None].copy(),
            np.zeros(x.size),
            np.zeros(x.size),
            ~(x >= 0),
            np.asarray(lo, dtype=float),
            np.asarray(hi, dtype=float),
        )

    def moments(self, psi, theta):
        rate = float(np.atleast_1d(theta)[0])
        return {"mean": 1.0 / rate, "var": 1.0 / rate**2}

    def expected_logpdf(self, psi, theta, true_family, psi0, theta0):
        if true_family.discrete:
            raise DomainError(self.family_id, -1, "continuous candidate against a discrete true distribution")
        if true_family.support != "positive":
            return -np.inf
        mom = true_family.moments(psi0, theta0)
        if mom is None:
            return None
        rate = float(np.atleast_1d(theta)[0])
        return math.log(rate) - rate * mom["mean"]

    def quad_bounds(self, psi, theta):
        rate = float(np.atleast_1d(theta)[0])
        return (0.0, 60.0 / rate)


class Poisson(SegmentFamily):
    """Poisson distribution with mean ``theta`` (counts; log-pmf in place of log-density)."""

    family_id = "poisson"
    support = "count"

    def check_params(self, psi, theta):
        super().check_params(psi, theta)
        if not float(np.atleast_1d(theta)[0]) > 0:
            raise ParameterError("poisson: mean must be positive")

    def in_support(self, x):
        x = _col(x)
        return np.isfinite(x) & (x >= 0) & (x == np.round(x))

    def logpdf(self, x, psi, theta):
        x = _col(x)
        mu = float(np.atleast_1d(theta)[0])
        ok = (x >= 0) & (x == np.round(x))
        xs = np.where(ok, x, 0.0)
        return np.where(ok, xs * math.log(mu) - mu - special.gammaln(xs + 1.0), -np.inf)

    def grad(self, x, psi, theta):
        x = _col(x)
        mu = float(np.atleast_1d(theta)[0])
        return (x / mu - 1.0)[:, None]

    def hessian(self, x, psi, theta):
        x = _col(x)
        mu = float(np.atleast_1d(theta)[0])
        return (-x / mu**2)[:, None, None]

    def sample(self, psi, theta, count, rng):
        mu = float(np.atleast_1d(theta)[0])
        return rng.poisson(mu, size=count).astype(float).reshape(-1, 1)

    def default_theta_box(self, x):
        _, hi, r = _span(_col(x))
        return np.array([1e-6]), np.array([max(hi, 0.0) + 10 * r])

    def theta_mle(self, x, psi, lo, hi):
        return np.clip(np.array([np.mean(_col(x))]), lo, hi)

    def kernel_stats(self, x, psi, lo, hi):
        x = _col(x)
        ok = (x >= 0) & (x == np.round(x))
        xs = np.where(ok, x, 0.0)
        return KernelStats(
            POISSON,
            xs[:, None],
            np.zeros(x.size),
            -special.gammaln(xs + 1.0),
            ~ok,
            np.asarray(lo, dtype=float),
            np.asarray(hi, dtype=float),
        )

    def moments(self, psi, theta):
        mu = float(np.atleast_1d(theta)[0])
        return {"mean": mu, "var": mu, "mean_log_factorial": _poisson_mean_log_factorial(mu)}

    def expected_logpdf(self, psi, theta, true_family, psi0, theta0):
        if not true_family.discrete:
            raise DomainError(self.family_id, -1, "count candidate against a continuous true distribution")
        mom = true_family.moments(psi0, theta0)
        if mom is None or "mean_log_factorial" not in mom:
            return None
        mu = float(np.atleast_1d(theta)[0])
        return mom["mean"] * math.log(mu) - mu - mom["mean_log_factorial"]

    def count_range(self, psi, theta) -> tuple[int, int]:
        return 0, _poisson_upper(float(np.atleast_1d(theta)[0]))


def _poisson_upper(mu: float) -> int:
    # the mass beyond mu + 20 sqrt(mu) + 40 is far below double precision
    return int(math.ceil(mu + 20.0 * math.sqrt(mu) + 40.0))


def _poisson_mean_log_factorial(mu: float) -> float:
    hi = _poisson_upper(mu)
    k = np.arange(hi + 1, dtype=float)
    w = stats.poisson.pmf(k, mu)
    return float(math.fsum(w * special.gammaln(k + 1.0)))


# ---------------------------------------------------------------------------
# multivariate normal with common covariance
# ---------------------------------------------------------------------------


class MultivariateNormalCommonCov(SegmentFamily):
    """p-variate normal, segment mean ``theta`` and shared covariance ``L L^T``.

    ``psi`` packs the lower-triangular Cholesky factor ``L`` row by row
    (``L00, L10, L11, L20, ...``); diagonal entries must be positive.
    """

    family_id = "mvn-common-cov"
    support = "real"

    def __init__(self, dim: int):
        dim = int(dim)
        if dim < 1:
            raise ParameterError("dimension must be at least 1")
        self.obs_dim = dim
        self.theta_dim = dim
        self.psi_dim = dim * (dim + 1) // 2
        self.psi_role = f"cholesky:{dim}"

    @property
    def key(self):
        return (self.family_id, self.obs_dim)

    def describe(self):
        return {"name": self.family_id, "dim": self.obs_dim}

    @cached_property
    def _tril(self):
        return np.tril_indices(self.obs_dim)

    @cached_property
    def diag_positions(self) -> np.ndarray:
        rows, cols = self._tril
        return np.flatnonzero(rows == cols)

    def chol(self, psi) -> np.ndarray:
        L = np.zeros((self.obs_dim, self.obs_dim))
        L[self._tril] = np.asarray(psi, dtype=float)
        return L

    def pack(self, L) -> np.ndarray:
        return np.asarray(L, dtype=float)[self._tril].copy()

    def covariance(self, psi) -> np.ndarray:
        L = self.chol(psi)
        return L @ L.T

    def check_params(self, psi, theta):
        super().check_params(psi, theta)
        if not np.all(np.asarray(psi)[self.diag_positions] > 0):
            raise ParameterError("mvn-common-cov: Cholesky diagonal must be positive")

    def in_support(self, x):
        x = _rows(x, self.obs_dim)
        return np.all(np.isfinite(x), axis=1)

    def _whiten(self, x, psi, theta):
        x = _rows(x, self.obs_dim)
        L = self.chol(psi)
        r = x - np.asarray(theta, dtype=float)
        z = linalg.solve_triangular(L, r.T, lower=True)
        return L, z

    def logpdf(self, x, psi, theta):
        L, z = self._whiten(x, psi, theta)
        logdet = float(np.sum(np.log(np.diag(L))))
        return -0.5 * self.obs_dim * LOG_2PI - logdet - 0.5 * np.sum(z * z, axis=0)

    def grad(self, x, psi, theta):
        L, z = self._whiten(x, psi, theta)
        w = linalg.solve_triangular(L, z, lower=True, trans="T")  # Sigma^{-1}(x - theta), (p, m)
        rows, cols = self._tril
        g_L = w[rows, :] * z[cols, :]  # d/dL_ab = w_a z_b
        g_L[self.diag_positions, :] -= (1.0 / np.diag(L))[:, None]
        return np.concatenate([g_L, w], axis=0).T

    def sample(self, psi, theta, count, rng):
        L = self.chol(psi)
        zz = rng.standard_normal((count, self.obs_dim))
        return np.asarray(theta, dtype=float) + zz @ L.T

    def default_theta_box(self, x):
        x = _rows(x, self.obs_dim)
        lo, hi = x.min(axis=0), x.max(axis=0)
        r = np.where(hi - lo > 0, hi - lo, 1.0)
        return lo - 10 * r, hi + 10 * r

    def default_psi_box(self, x):
        x = _rows(x, self.obs_dim)
        s = np.sqrt(np.var(x, axis=0))
        s = np.where(s > 0, s, 1.0)
        smax = float(np.max(s))
        lo = np.full(self.psi_dim, -1e3 * smax)
        hi = np.full(self.psi_dim, 1e3 * smax)
        lo[self.diag_positions] = 1e-3 * float(np.min(s))
        return lo, hi

    def theta_mle(self, x, psi, lo, hi):
        m = np.mean(_rows(x, self.obs_dim), axis=0)
        if np.all(m >= lo) and np.all(m <= hi):
            return m
        return None

    def kernel_stats(self, x, psi, lo, hi):
        x = _rows(x, self.obs_dim)
        # componentwise clamping is only exact for whitened coordinates when the box never binds
        if not (np.all(x.min(axis=0) >= lo) and np.all(x.max(axis=0) <= hi)):
            return None
        L = self.chol(psi)
        c = x.mean(axis=0)
        y = linalg.solve_triangular(L, (x - c).T, lower=True).T
        const = -0.5 * self.obs_dim * LOG_2PI - float(np.sum(np.log(np.diag(L))))
        return KernelStats(
            GAUSS,
            np.ascontiguousarray(y),
            np.sum(y * y, axis=1),
            np.full(x.shape[0], const),
            np.zeros(x.shape[0], dtype=bool),
            np.full(self.obs_dim, -np.inf),
            np.full(self.obs_dim, np.inf),
        )

    def pooled_fit(self, slices, psi_lo, psi_hi, theta_boxes):
        thetas, scatter, count = [], np.zeros((self.obs_dim, self.obs_dim)), 0
        for x, (lo, hi) in zip(slices, theta_boxes):
            x = _rows(x, self.obs_dim)
            m = x.mean(axis=0)
            if np.any(m < lo) or np.any(m > hi):
                return None
            r = x - m
            scatter += r.T @ r
            count += x.shape[0]
            thetas.append(m)
        try:
            L = np.linalg.cholesky(scatter / count)
        except np.linalg.LinAlgError:
            return None
        psi = self.pack(L)
        if np.any(psi < psi_lo) or np.any(psi > psi_hi):
            return None
        return psi, thetas

    def moments(self, psi, theta):
        return {"mean": np.asarray(theta, dtype=float), "cov": self.covariance(psi)}

    def expected_logpdf(self, psi, theta, true_family, psi0, theta0):
        if true_family.discrete:
            raise DomainError(self.family_id, -1, "continuous candidate against a discrete true distribution")
        mom = true_family.moments(psi0, theta0)
        if mom is None or "cov" not in mom or true_family.obs_dim != self.obs_dim:
            return None
        L = self.chol(psi)
        d = mom["mean"] - np.asarray(theta, dtype=float)
        Linv_S = linalg.solve_triangular(L, mom["cov"], lower=True)
        tr = float(np.trace(linalg.solve_triangular(L, Linv_S.T, lower=True)))
        z = linalg.solve_triangular(L, d, lower=True)
        return -0.5 * self.obs_dim * LOG_2PI - float(np.sum(np.log(np.diag(L)))) - 0.5 * (tr + float(z @ z))


# ---------------------------------------------------------------------------
# registry and public operations
# ---------------------------------------------------------------------------

FAMILY_NAMES = ("normal-known-var", "normal-common-var", "exponential", "poisson", "mvn-common-cov")


def make_family(name: str, **constants) -> SegmentFamily:
    """Build a built-in family from its name and fixed constants."""
    name = name.strip().lower()
    if name == "normal-known-var":
        return NormalKnownVariance(float(constants.pop("variance", 1.0)))
    if name == "normal-common-var":
        fam: SegmentFamily = NormalCommonVariance()
    elif name == "exponential":
        fam = Exponential()
    elif name == "poisson":
        fam = Poisson()
    elif name in ("mvn-common-cov", "mvn"):
        if "dim" not in constants:
            raise ParameterError("mvn-common-cov needs a 'dim' constant")
        return MultivariateNormalCommonCov(int(constants.pop("dim")))
    else:
        raise ParameterError(f"unknown family {name!r}; choose from {', '.join(FAMILY_NAMES)}")
    if constants:
        raise ParameterError(f"family {name!r} takes no constants, got {sorted(constants)}")
    return fam


def _as_psi(family, psi):
    if family.psi_dim == 0:
        return np.zeros(0)
    return np.atleast_1d(np.asarray(psi, dtype=float))


def _check_box(name, vec, box):
    if box is None:
        return
    lo, hi = box
    if lo is None:
        return
    if np.any(vec < lo) or np.any(vec > hi):
        raise ParameterError(f"{name}={vec} lies outside the box [{lo}, {hi}]")


def _check_support(family, x, offset=0):
    ok = family.in_support(x)
    if not np.all(ok):
        raise DomainError(family.family_id, int(np.flatnonzero(~ok)[0]) + offset)


def log_density(family: SegmentFamily, psi, theta, x, *, psi_box=None, theta_box=None):
    """``log f(psi, theta; x)`` for one observation (or row-wise for a matrix).

    Raises :class:`DomainError` for out-of-support data and
    :class:`ParameterError` for invalid or out-of-box parameters.
    """
    psi = _as_psi(family, psi)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    family.check_params(psi, theta)
    _check_box("psi", psi, psi_box)
    _check_box("theta", theta, theta_box)
    xr = _rows(x, family.obs_dim)
    _check_support(family, xr)
    out = family.logpdf(xr, psi, theta)
    single = np.ndim(x) == 0 or (np.ndim(x) == 1 and family.obs_dim > 1)
    return float(out[0]) if single else out


def grad_log_density(family: SegmentFamily, psi, theta, x):
    """Gradient of the log-density in packed ``(psi, theta)`` order."""
    psi = _as_psi(family, psi)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    family.check_params(psi, theta)
    xr = _rows(x, family.obs_dim)
    _check_support(family, xr)
    g = family.grad(xr, psi, theta)
    single = np.ndim(x) == 0 or (np.ndim(x) == 1 and family.obs_dim > 1)
    return g[0] if single else g


def hessian_log_density(family: SegmentFamily, psi, theta, x):
    psi = _as_psi(family, psi)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    family.check_params(psi, theta)
    xr = _rows(x, family.obs_dim)
    _check_support(family, xr)
    h = family.hessian(xr, psi, theta)
    single = np.ndim(x) == 0 or (np.ndim(x) == 1 and family.obs_dim > 1)
    return h[0] if single else h


def fit_theta(family: SegmentFamily, psi, x, lo, hi) -> tuple[np.ndarray, float]:
    """Box-constrained inner maximizer; ``-inf`` log-likelihood if any row is out of support."""
    psi = _as_psi(family, psi)
    x = _rows(x, family.obs_dim)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if not np.all(family.in_support(x)):
        return 0.5 * (lo + hi), -np.inf
    theta = family.theta_mle(x, psi, lo, hi)
    if theta is None:
        d = family.psi_dim

        def objective(th):
            return (
                float(np.sum(family.logpdf(x, psi, th))),
                np.sum(family.grad(x, psi, th)[:, d:], axis=0),
                np.sum(family.hessian(x, psi, th)[:, d:, d:], axis=0),
            )

        start = family.theta_mle(x, psi, np.full_like(lo, -np.inf), np.full_like(hi, np.inf))
        if start is None or not np.all(np.isfinite(start)):
            start = 0.5 * (lo + hi)
        theta, _, _ = maximize_box(objective, np.clip(start, lo, hi), lo, hi)
    theta = np.asarray(theta, dtype=float)
    return theta, float(np.sum(family.logpdf(x, psi, theta)))


def segment_mle_theta(family: SegmentFamily, psi, data_slice, lo=None, hi=None) -> tuple[np.ndarray, float]:
    """Maximize ``sum_i log f(psi, theta; x_i)`` over ``theta`` in ``[lo, hi]``.

    The box defaults to the family's data-driven box for the slice. Returns
    ``(theta_hat, maximized log-likelihood)``.
    """
    x = _rows(data_slice, family.obs_dim)
    if x.shape[0] == 0:
        raise ParameterError("segment is empty")
    psi = _as_psi(family, psi)
    if lo is None:
        lo, hi = family.default_theta_box(x)
    if psi.size:
        family.check_params(psi, 0.5 * (np.asarray(lo) + np.asarray(hi)))
    _check_support(family, x)
    return fit_theta(family, psi, x, lo, hi)


def sample(family: SegmentFamily, psi, theta, count: int, rng_seed=None) -> np.ndarray:
    """``count`` i.i.d. draws as an ``(count, p)`` array, deterministic given the seed."""
    if count < 1:
        raise ParameterError("count must be at least 1")
    psi = _as_psi(family, psi)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    family.check_params(psi, theta)
    return family.sample(psi, theta, int(count), as_generator(rng_seed))
