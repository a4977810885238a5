"""Core value types: data, change-point configurations, parameters, boxes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import ArgumentError, ParameterError

if TYPE_CHECKING:
    from .families import SegmentFamily


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered observations, one row per index ``i = 1..n``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] == 0 or v.shape[1] == 0:
            raise ArgumentError(f"dataset must be a non-empty n x p matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            bad = int(np.argwhere(~np.isfinite(v))[0, 0])
            raise ArgumentError(f"dataset contains a non-finite entry at row {bad + 1}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def slice(self, s: int, t: int) -> np.ndarray:
        """Rows ``s+1..t`` in 1-based terms, i.e. the half-open interval (s, t]."""
        return self.values[s:t]

    def reversed(self) -> "Dataset":
        return Dataset(self.values[::-1])

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True, eq=False)
class ChangePointConfig:
    """Interior boundaries ``0 < n_1 < ... < n_k < n``."""

    boundaries: tuple[int, ...]
    n: int

    def __post_init__(self):
        b = tuple(int(x) for x in self.boundaries)
        n = int(self.n)
        prev = 0
        for x in b:
            if not prev < x:
                raise ArgumentError(f"boundaries must satisfy 0 < n_1 < ... < n_k < n, got {b} for n={n}")
            prev = x
        if b and not b[-1] < n:
            raise ArgumentError(f"boundaries must satisfy 0 < n_1 < ... < n_k < n, got {b} for n={n}")
        if n < 1:
            raise ArgumentError("n must be positive")
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "n", n)

    @classmethod
    def from_fractions(cls, fractions: Sequence[float], n: int) -> "ChangePointConfig":
        """Place ``n_j = floor(n * lambda_j)``."""
        return cls(tuple(int(np.floor(n * f + 1e-12)) for f in fractions), n)

    @property
    def k(self) -> int:
        return len(self.boundaries)

    @property
    def fractions(self) -> np.ndarray:
        return np.array(self.boundaries, dtype=float) / self.n

    @property
    def edges(self) -> tuple[int, ...]:
        """``(0, n_1, ..., n_k, n)``."""
        return (0, *self.boundaries, self.n)

    def segments(self) -> list[tuple[int, int]]:
        e = self.edges
        return [(e[j], e[j + 1]) for j in range(len(e) - 1)]

    def lengths(self) -> np.ndarray:
        return np.diff(self.edges)

    def reversed(self) -> "ChangePointConfig":
        return ChangePointConfig(tuple(self.n - b for b in reversed(self.boundaries)), self.n)

    def __eq__(self, other):
        if not isinstance(other, ChangePointConfig):
            return NotImplemented
        return self.boundaries == other.boundaries and self.n == other.n

    def __hash__(self):
        return hash((self.boundaries, self.n))

    def __repr__(self):
        return f"ChangePointConfig(boundaries={self.boundaries}, n={self.n})"


@dataclass(frozen=True, eq=False)
class ParameterState:
    """The parameter vector phi = (psi, theta_1, ..., theta_{k+1})."""

    psi: np.ndarray
    thetas: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "psi", _frozen(np.atleast_1d(self.psi) if np.size(self.psi) else np.zeros(0)))
        object.__setattr__(self, "thetas", tuple(_frozen(np.atleast_1d(t)) for t in self.thetas))

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.psi.size, *(t.size for t in self.thetas))

    def packed(self) -> np.ndarray:
        return np.concatenate([self.psi, *self.thetas]) if self.thetas else self.psi.copy()

    @classmethod
    def from_packed(cls, vec, dims: Sequence[int]) -> "ParameterState":
        vec = np.asarray(vec, dtype=float)
        if vec.size != sum(dims):
            raise ParameterError(f"packed vector has {vec.size} entries, expected {sum(dims)}")
        cuts = np.cumsum(dims)[:-1]
        blocks = np.split(vec, cuts)
        return cls(blocks[0], tuple(blocks[1:]))

    def __repr__(self):
        th = ", ".join(np.array2string(t, precision=6) for t in self.thetas)
        return f"ParameterState(psi={np.array2string(self.psi, precision=6)}, thetas=[{th}])"


@dataclass(frozen=True, eq=False)
class ParameterBox:
    """Compact per-block bounds for psi and each theta_j.

    ``None`` for a block means "choose a data-driven default at fit time".
    """

    psi_lower: np.ndarray | None = None
    psi_upper: np.ndarray | None = None
    theta_lower: tuple[np.ndarray | None, ...] = ()
    theta_upper: tuple[np.ndarray | None, ...] = ()

    def __post_init__(self):
        def conv(a):
            return None if a is None else _frozen(np.atleast_1d(a))

        object.__setattr__(self, "psi_lower", conv(self.psi_lower))
        object.__setattr__(self, "psi_upper", conv(self.psi_upper))
        object.__setattr__(self, "theta_lower", tuple(conv(a) for a in self.theta_lower))
        object.__setattr__(self, "theta_upper", tuple(conv(a) for a in self.theta_upper))
        if (self.psi_lower is None) != (self.psi_upper is None):
            raise ParameterError("psi bounds must be given together")
        pairs = [(self.psi_lower, self.psi_upper)] + list(zip(self.theta_lower, self.theta_upper))
        for lo, hi in pairs:
            if lo is None and hi is None:
                continue
            if lo is None or hi is None or lo.shape != hi.shape:
                raise ParameterError("lower/upper bounds must be given together with matching shapes")
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ParameterError("box bounds must be finite")
            if not np.all(lo < hi):
                raise ParameterError(f"box requires lower < upper componentwise, got {lo} / {hi}")

    def theta_bounds(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        return self.theta_lower[j], self.theta_upper[j]

    def contains(self, params: ParameterState, tol: float = 0.0) -> bool:
        if params.psi.size and not _inside(params.psi, self.psi_lower, self.psi_upper, tol):
            return False
        return all(
            _inside(t, lo, hi, tol) for t, lo, hi in zip(params.thetas, self.theta_lower, self.theta_upper)
        )

    def packed_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = [self.psi_lower if self.psi_lower is not None else np.zeros(0)]
        hi = [self.psi_upper if self.psi_upper is not None else np.zeros(0)]
        return np.concatenate(lo + list(self.theta_lower)), np.concatenate(hi + list(self.theta_upper))

    def sample(self, rng: np.random.Generator) -> ParameterState:
        """Uniform draw from the box (used by the inequality probes)."""
        psi = rng.uniform(self.psi_lower, self.psi_upper) if self.psi_lower is not None else np.zeros(0)
        thetas = tuple(rng.uniform(lo, hi) for lo, hi in zip(self.theta_lower, self.theta_upper))
        return ParameterState(psi, thetas)


def _inside(x, lo, hi, tol) -> bool:
    if lo is None:
        return True
    return bool(np.all(x >= lo - tol) and np.all(x <= hi + tol))


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Number of change points, ordered segment families and the parameter box.

    Families that use the common parameter must agree on its role (for
    example all treat it as a variance); families with ``psi_dim == 0``
    ignore it.
    """

    k: int
    families: tuple["SegmentFamily", ...]
    box: ParameterBox | None = None
    common_dim: int = field(init=False)

    def __post_init__(self):
        fams = tuple(self.families)
        if self.k < 0:
            raise ArgumentError("k must be non-negative")
        if len(fams) == 1 and self.k > 0:
            fams = fams * (self.k + 1)
        if len(fams) != self.k + 1:
            raise ArgumentError(f"need k+1={self.k + 1} families, got {len(fams)}")
        object.__setattr__(self, "families", fams)
        roles = {f.psi_role for f in fams if f.psi_dim > 0}
        if len(roles) > 1:
            raise ArgumentError(f"families disagree on the role of the common parameter: {sorted(roles)}")
        dims = {f.psi_dim for f in fams if f.psi_dim > 0}
        object.__setattr__(self, "common_dim", dims.pop() if dims else 0)
        if self.box is not None:
            b = self.box
            if len(b.theta_lower) not in (0, self.k + 1):
                raise ArgumentError("box must list theta bounds for every segment (or none)")
            if b.psi_lower is not None and b.psi_lower.size != self.common_dim:
                raise ArgumentError(f"psi box has {b.psi_lower.size} entries, expected {self.common_dim}")
            for j, lo in enumerate(b.theta_lower):
                if lo is not None and lo.size != fams[j].theta_dim:
                    raise ArgumentError(f"theta box for segment {j + 1} has wrong dimension")

    @property
    def n_segments(self) -> int:
        return self.k + 1

    @property
    def psi_family(self) -> "SegmentFamily | None":
        """First family that consumes the common parameter, if any."""
        for f in self.families:
            if f.psi_dim > 0:
                return f
        return None

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.common_dim, *(f.theta_dim for f in self.families))

    def resolve_box(self, data: Dataset) -> ParameterBox:
        """Fill missing bounds with data-driven defaults."""
        x = data.values
        b = self.box or ParameterBox()
        psi_lo, psi_hi = b.psi_lower, b.psi_upper
        if self.common_dim and psi_lo is None:
            psi_lo, psi_hi = self.psi_family.default_psi_box(x)
        th_lo, th_hi = [], []
        for j, fam in enumerate(self.families):
            lo = b.theta_lower[j] if b.theta_lower else None
            hi = b.theta_upper[j] if b.theta_upper else None
            if lo is None:
                lo, hi = fam.default_theta_box(x)
            th_lo.append(lo)
            th_hi.append(hi)
        return ParameterBox(psi_lo, psi_hi, tuple(th_lo), tuple(th_hi))

    def check_params(self, params: ParameterState) -> None:
        if params.psi.size != self.common_dim:
            raise ParameterError(f"psi has {params.psi.size} entries, expected {self.common_dim}")
        if len(params.thetas) != self.k + 1:
            raise ParameterError(f"need {self.k + 1} theta blocks, got {len(params.thetas)}")
        for j, (f, t) in enumerate(zip(self.families, params.thetas)):
            if t.size != f.theta_dim:
                raise ParameterError(f"theta_{j + 1} has {t.size} entries, expected {f.theta_dim}")
            try:
                f.check_params(params.psi if f.psi_dim else np.zeros(0), t)
            except ParameterError as exc:
                raise ParameterError(f"segment {j + 1}: {exc}") from None
        if self.box is not None and not self.box.contains(params, tol=1e-12):
            raise ParameterError(f"parameters {params} lie outside the model's box")

    def check_config(self, cps: ChangePointConfig, n: int) -> None:
        if cps.n != n:
            raise ArgumentError(f"configuration is for n={cps.n}, data has n={n}")
        if cps.k != self.k:
            raise ArgumentError(f"configuration has {cps.k} change points, model has k={self.k}")
