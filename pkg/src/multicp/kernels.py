"""Segment-cost kernels and backend selection.

The exact segmentation recurrence spends nearly all its time evaluating
``max_t cost(s, t) + E(t)`` over intervals. For the built-in exponential
families the maximized segment log-likelihood is a closed-form function of
prefix sums of sufficient statistics, which the compiled extension
(``multicp._kernel``) evaluates in a tight C loop. The pure-Python module
(``multicp._kernel_py``) implements the identical contract with numpy and is
used when the extension is missing or ``MULTICP_PURE_PYTHON=1`` is set.

Cost kinds
----------
``GAUSS``
    ``theta = clip(A/m, lo, hi)``, ``cost = C - (B - 2 theta.A + m |theta|^2)/2``
    where ``A``, ``B`` are the sums of whitened observations and their squared
    norms.
``EXPO``
    ``theta = clip(m/A, lo, hi)``, ``cost = m log(theta) - theta A``.
``POISSON``
    ``theta = clip(A/m, lo, hi)``, ``cost = C + A log(theta) - m theta``.

Any interval containing an out-of-support observation costs ``-inf``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

GAUSS = 0
EXPO = 1
POISSON = 2

_FORCE_PURE = os.environ.get("MULTICP_PURE_PYTHON", "").strip() not in ("", "0")

from . import _kernel_py  # noqa: E402

if _FORCE_PURE:
    _compiled = None
else:
    try:
        from . import _kernel as _compiled  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on the build
        _compiled = None

BACKEND = "python" if _compiled is None else "cython"
_default = _compiled if _compiled is not None else _kernel_py


def available_backends() -> list[str]:
    return ["python"] + ([] if _compiled is None else ["cython"])


def get_backend(name: str | None = None):
    if name is None:
        return _default
    if name == "python":
        return _kernel_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernel extension multicp._kernel is not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


@dataclass(frozen=True, eq=False)
class KernelStats:
    """Per-observation sufficient statistics for one family at fixed psi."""

    kind: int
    A: np.ndarray  # (n, q)
    B: np.ndarray  # (n,)
    C: np.ndarray  # (n,)
    bad: np.ndarray  # (n,) bool, out of support
    lo: np.ndarray  # (q,)
    hi: np.ndarray  # (q,)

    def prefix(self) -> "PrefixStats":
        n = self.A.shape[0]
        P1 = np.zeros((n + 1, self.A.shape[1]))
        np.cumsum(self.A, axis=0, out=P1[1:])
        P2 = np.zeros(n + 1)
        np.cumsum(self.B, out=P2[1:])
        P0 = np.zeros(n + 1)
        np.cumsum(self.C, out=P0[1:])
        Pbad = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(self.bad.astype(np.int64), out=Pbad[1:])
        return PrefixStats(
            self.kind,
            np.ascontiguousarray(P1),
            P2,
            P0,
            Pbad,
            np.ascontiguousarray(self.lo, dtype=float),
            np.ascontiguousarray(self.hi, dtype=float),
        )


@dataclass(frozen=True, eq=False)
class PrefixStats:
    kind: int
    P1: np.ndarray
    P2: np.ndarray
    P0: np.ndarray
    Pbad: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @property
    def n(self) -> int:
        return self.P2.shape[0] - 1

    def args(self):
        return (self.kind, self.P1, self.P2, self.P0, self.Pbad, self.lo, self.hi)


def interval_costs(ps: PrefixStats, starts, ends, backend=None) -> np.ndarray:
    """Maximized log-likelihood of each interval ``(starts[i], ends[i]]``."""
    impl = get_backend(backend)
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    ends = np.ascontiguousarray(ends, dtype=np.int64)
    return np.asarray(impl.interval_costs(*ps.args(), starts, ends))


def suffix_max(ps: PrefixStats, next_E, s_lo: int, s_hi: int, t_hi: int, min_len: int, backend=None) -> np.ndarray:
    """``out[s] = max_{s+min_len <= t <= t_hi} cost(s, t) + next_E[t]`` for ``s_lo <= s <= s_hi``.

    Entries outside ``[s_lo, s_hi]`` are ``-inf``.
    """
    impl = get_backend(backend)
    next_E = np.ascontiguousarray(next_E, dtype=float)
    return np.asarray(impl.suffix_max(*ps.args(), next_E, int(s_lo), int(s_hi), int(t_hi), int(min_len)))


def suffix_max_dense(cost: np.ndarray, next_E, s_lo: int, s_hi: int, t_hi: int, min_len: int, backend=None) -> np.ndarray:
    """Same recurrence over an explicit ``(n+1, n+1)`` cost table."""
    impl = get_backend(backend)
    return np.asarray(
        impl.suffix_max_dense(
            np.ascontiguousarray(cost, dtype=float),
            np.ascontiguousarray(next_E, dtype=float),
            int(s_lo),
            int(s_hi),
            int(t_hi),
            int(min_len),
        )
    )
