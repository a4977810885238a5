"""Exact joint maximum-likelihood estimation of change points and parameters.

For fixed common parameter ``psi`` the maximizing segmentation is found
exactly by dynamic programming over segment costs
``c_j(s, t; psi) = max_theta sum_{i=s+1}^t log f_j(psi, theta; x_i)``.
The common parameter is handled by alternating that step with a joint
maximization of ``(psi, theta)`` at fixed boundaries; each half-step can only
raise the log-likelihood.

Among equal-likelihood segmentations the lexicographically smallest boundary
vector is returned. The recurrence is therefore run right to left (suffix
values) and boundaries are read off left to right, taking the smallest
admissible ``n_j`` at every step.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .errors import ArgumentError, InferenceError, InternalError, OptimizationError, SizeError
from .families import _as_psi, fit_theta
from .likelihood import full_loglik
from .model import ChangePointConfig, Dataset, ModelSpec, ParameterBox, ParameterState
from .optimize import maximize_box

BRUTE_FORCE_LIMIT = 1_000_000


def _tie_tol(value: float) -> float:
    return 1e-10 * (1.0 + abs(value))


# ---------------------------------------------------------------------------
# segment costs
# ---------------------------------------------------------------------------


class SegmentCostTable:
    """Segment costs ``c_j(s, t; psi)`` and their maximizing ``theta``.

    Built-in families are served by the prefix-sum kernel (O(1) per interval
    after O(n) set-up). Other families get a dense table filled by the
    generic inner maximizer, which is O(n^2) fits and meant for small n.
    Providers are shared between segments whose family and box coincide.
    """

    def __init__(self, spec: ModelSpec, data: Dataset, psi, box: ParameterBox, backend: str | None = None):
        self.spec = spec
        self.data = data
        self.psi = np.asarray(psi, dtype=float)
        self.box = box
        self.backend = backend
        self._providers: list = []
        cache: dict = {}
        for j, fam in enumerate(spec.families):
            lo, hi = box.theta_bounds(j)
            key = (fam, tuple(lo), tuple(hi))
            if key not in cache:
                psi_j = _as_psi(fam, self.psi)
                stats = fam.kernel_stats(data.values, psi_j, lo, hi)
                cache[key] = stats.prefix() if stats is not None else _DenseCosts(fam, psi_j, data.values, lo, hi)
            self._providers.append(cache[key])

    @property
    def n(self) -> int:
        return self.data.n

    def costs_from(self, j: int, s: int, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=np.int64)
        prov = self._providers[j]
        if isinstance(prov, _DenseCosts):
            return prov.table()[s, ts]
        return kernels.interval_costs(prov, np.full(ts.size, s, dtype=np.int64), ts, backend=self.backend)

    def costs_to(self, j: int, ss, t: int) -> np.ndarray:
        ss = np.asarray(ss, dtype=np.int64)
        prov = self._providers[j]
        if isinstance(prov, _DenseCosts):
            return prov.table()[ss, t]
        return kernels.interval_costs(prov, ss, np.full(ss.size, t, dtype=np.int64), backend=self.backend)

    def cost(self, j: int, s: int, t: int) -> float:
        return float(self.costs_from(j, s, [t])[0])

    def suffix_max(self, j: int, next_E, s_lo: int, s_hi: int, t_hi: int, min_len: int) -> np.ndarray:
        prov = self._providers[j]
        if isinstance(prov, _DenseCosts):
            return kernels.suffix_max_dense(prov.table(), next_E, s_lo, s_hi, t_hi, min_len, backend=self.backend)
        return kernels.suffix_max(prov, next_E, s_lo, s_hi, t_hi, min_len, backend=self.backend)

    def theta(self, j: int, s: int, t: int) -> tuple[np.ndarray, float]:
        fam = self.spec.families[j]
        lo, hi = self.box.theta_bounds(j)
        return fit_theta(fam, _as_psi(fam, self.psi), self.data.slice(s, t), lo, hi)


class _DenseCosts:
    def __init__(self, fam, psi, x, lo, hi):
        self.fam, self.psi, self.x, self.lo, self.hi = fam, psi, x, lo, hi
        self._table = None

    def table(self) -> np.ndarray:
        if self._table is None:
            n = self.x.shape[0]
            tab = np.full((n + 1, n + 1), -np.inf)
            for s in range(n):
                for t in range(s + 1, n + 1):
                    tab[s, t] = fit_theta(self.fam, self.psi, self.x[s:t], self.lo, self.hi)[1]
            self._table = tab
        return self._table


# ---------------------------------------------------------------------------
# fixed-psi exact segmentation
# ---------------------------------------------------------------------------


class FixedPsiFit(NamedTuple):
    change_points: ChangePointConfig
    thetas: tuple[np.ndarray, ...]
    loglik: float


def _segment_dp(table: SegmentCostTable, k: int, min_len: int) -> tuple[tuple[int, ...], float]:
    n = table.n
    K = k + 1
    L = min_len
    if n < K * L:
        raise ArgumentError(f"n={n} is too small for {K} segments of length >= {L}")
    if K == 1:
        return (), table.cost(0, 0, n)
    # E[j][s]: best value of segments j..K-1 (0-based) covering (s, n]
    E: list[np.ndarray | None] = [None] * K
    last = np.full(n + 1, -np.inf)
    ss = np.arange((K - 1) * L, n - L + 1)
    last[ss] = table.costs_to(K - 1, ss, n)
    E[K - 1] = last
    for j in range(K - 2, 0, -1):
        E[j] = table.suffix_max(j, E[j + 1], j * L, n - (K - j) * L, n - (K - j - 1) * L, L)
    bounds = []
    s = 0
    for j in range(0, K - 1):
        ts = np.arange(s + L, n - (K - j - 1) * L + 1)
        vals = table.costs_from(j, s, ts) + E[j + 1][ts]
        best = float(np.max(vals))
        if best == -np.inf:
            raise ArgumentError("no segmentation has finite log-likelihood (data outside every family's support)")
        pick = int(np.flatnonzero(vals >= best - _tie_tol(best))[0])
        s = int(ts[pick])
        bounds.append(s)
        if j == 0:
            total = best
    return tuple(bounds), total


def fit_fixed_psi(
    spec: ModelSpec,
    data: Dataset,
    psi=None,
    *,
    box: ParameterBox | None = None,
    min_segment_length: int = 1,
    backend: str | None = None,
) -> FixedPsiFit:
    """Exact maximizer over all ordered boundary vectors and thetas at fixed ``psi``."""
    if data.n < (spec.k + 1) * min_segment_length:
        raise ArgumentError(f"n={data.n} observations cannot hold {spec.k + 1} segments")
    box = box or spec.resolve_box(data)
    psi = np.zeros(0) if spec.common_dim == 0 else np.atleast_1d(np.asarray(psi, dtype=float))
    if spec.common_dim and psi.size != spec.common_dim:
        raise ArgumentError(f"psi must have {spec.common_dim} entries")
    table = SegmentCostTable(spec, data, psi, box, backend=backend)
    bounds, _ = _segment_dp(table, spec.k, min_segment_length)
    cps = ChangePointConfig(bounds, data.n)
    thetas, total = [], 0.0
    for j, (s, t) in enumerate(cps.segments()):
        th, ll = table.theta(j, s, t)
        thetas.append(th)
        total += ll
    return FixedPsiFit(cps, tuple(thetas), total)


# ---------------------------------------------------------------------------
# joint (psi, theta) update at fixed boundaries
# ---------------------------------------------------------------------------


def joint_update(spec: ModelSpec, data: Dataset, cps: ChangePointConfig, psi, thetas, box: ParameterBox):
    """Maximize over ``(psi, theta)`` with boundaries held fixed.

    Returns ``(psi, thetas, loglik)``.
    """
    segs = cps.segments()
    thetas = [np.asarray(t, dtype=float) for t in thetas]
    users = [j for j, f in enumerate(spec.families) if f.psi_dim > 0]
    for j, fam in enumerate(spec.families):
        if fam.psi_dim == 0:
            thetas[j] = fit_theta(fam, np.zeros(0), data.slice(*segs[j]), *box.theta_bounds(j))[0]
    psi = np.asarray(psi, dtype=float)
    if users:
        fams = {spec.families[j] for j in users}
        res = None
        if len(fams) == 1:
            fam = fams.pop()
            res = fam.pooled_fit(
                [data.slice(*segs[j]) for j in users], box.psi_lower, box.psi_upper, [box.theta_bounds(j) for j in users]
            )
        if res is None:
            psi, sub = _newton_joint(spec, data, segs, users, psi, [thetas[j] for j in users], box)
        else:
            psi, sub = res
        for j, th in zip(users, sub):
            thetas[j] = np.asarray(th, dtype=float)
    params = ParameterState(psi, tuple(thetas))
    return params.psi, params.thetas, full_loglik(spec, data, cps, params)


def _newton_joint(spec, data, segs, users, psi, sub_thetas, box):
    d = spec.common_dim
    dims = [spec.families[j].theta_dim for j in users]
    offsets = np.cumsum([d] + dims)
    D = int(offsets[-1])
    lo = np.concatenate([box.psi_lower] + [box.theta_bounds(j)[0] for j in users])
    hi = np.concatenate([box.psi_upper] + [box.theta_bounds(j)[1] for j in users])

    def objective(phi):
        F, g, H = 0.0, np.zeros(D), np.zeros((D, D))
        ps = phi[:d]
        for idx, j in enumerate(users):
            fam = spec.families[j]
            x = data.slice(*segs[j])
            th = phi[offsets[idx] : offsets[idx + 1]]
            sl = np.r_[0:d, offsets[idx] : offsets[idx + 1]]
            F += float(np.sum(fam.logpdf(x, ps, th)))
            g[sl] += np.sum(fam.grad(x, ps, th), axis=0)
            H[np.ix_(sl, sl)] += np.sum(fam.hessian(x, ps, th), axis=0)
        return F, g, H

    x0 = np.concatenate([psi] + list(sub_thetas))
    phi, _, _ = maximize_box(objective, x0, lo, hi)
    return phi[:d], [phi[offsets[i] : offsets[i + 1]] for i in range(len(users))]


def pooled_psi_start(spec: ModelSpec, data: Dataset, box: ParameterBox) -> np.ndarray:
    """Common-parameter MLE when the whole sample is treated as one segment."""
    j = next(i for i, f in enumerate(spec.families) if f.psi_dim > 0)
    fam = spec.families[j]
    one = ModelSpec(0, (fam,), ParameterBox(box.psi_lower, box.psi_upper, (box.theta_lower[j],), (box.theta_upper[j],)))
    x = data.values
    res = fam.pooled_fit([x], box.psi_lower, box.psi_upper, [box.theta_bounds(j)])
    if res is not None:
        return np.asarray(res[0], dtype=float)
    mid = 0.5 * (box.psi_lower + box.psi_upper)
    th = 0.5 * (box.theta_lower[j] + box.theta_upper[j])
    psi, _ = _newton_joint(one, data, [(0, data.n)], [0], mid, [th], one.box)
    return psi


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FitResult:
    """Joint MLE with plug-in information and diagnostics."""

    change_points: ChangePointConfig
    params: ParameterState
    loglik: float
    info_matrix: np.ndarray | None = None
    std_errors: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def fractions(self) -> np.ndarray:
        return self.change_points.fractions

    def to_dict(self) -> dict:
        se = None if self.std_errors is None else [_num(v) for v in self.std_errors]
        return {
            "change_points": list(self.change_points.boundaries),
            "n": self.change_points.n,
            "fractions": [float(v) for v in self.change_points.fractions],
            "psi": [float(v) for v in self.params.psi],
            "thetas": [[float(v) for v in t] for t in self.params.thetas],
            "loglik": float(self.loglik),
            "std_errors": se,
            "info_matrix": None if self.info_matrix is None else [[_num(v) for v in row] for row in self.info_matrix],
            "diagnostics": self.diagnostics,
        }


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _diagnose(spec: ModelSpec, params: ParameterState, box: ParameterBox, cps: ChangePointConfig) -> dict:
    flags = []

    def check(name, vec, lo, hi):
        for c, (v, a, b) in enumerate(zip(vec, lo, hi)):
            if v <= a + 1e-9 * (1 + abs(a)) or v >= b - 1e-9 * (1 + abs(b)):
                flags.append(f"{name}[{c}]")

    if spec.common_dim:
        check("psi", params.psi, box.psi_lower, box.psi_upper)
    for j, th in enumerate(params.thetas):
        check(f"theta_{j + 1}", th, *box.theta_bounds(j))
    same = []
    for j in range(spec.k):
        a, b = params.thetas[j], params.thetas[j + 1]
        if spec.families[j] == spec.families[j + 1] and np.linalg.norm(a - b) <= 1e-8 * (1 + np.linalg.norm(a)):
            same.append([j + 1, j + 2])
    return {
        "boundary_flags": flags,
        "indistinct_neighbors": same,
        "segment_lengths": [int(v) for v in cps.lengths()],
    }


def _with_inference(spec, data, result: FitResult) -> FitResult:
    from .inference import plugin_info, standard_errors

    diag = dict(result.diagnostics)
    try:
        info = plugin_info(spec, data, result)
        full = info.full
        try:
            se = standard_errors(info)
        except InferenceError as exc:
            se = np.full(full.shape[0], np.nan)
            diag["inference_error"] = str(exc)
    except Exception as exc:  # numeric failure at the fitted point
        full, se = None, None
        diag["inference_error"] = str(exc)
    return replace(result, info_matrix=full, std_errors=se, diagnostics=diag)


# ---------------------------------------------------------------------------
# full fit
# ---------------------------------------------------------------------------


def fit(
    spec: ModelSpec,
    data: Dataset,
    *,
    psi_starts: Sequence = (),
    max_outer_iters: int = 50,
    tol: float = 1e-8,
    min_segment_length: int = 1,
    backend: str | None = None,
    compute_info: bool = True,
) -> FitResult:
    """Joint MLE of boundaries, within-segment parameters and the common parameter.

    With no common parameter a single exact segmentation is the global MLE.
    Otherwise exact segmentation at fixed ``psi`` alternates with a joint
    ``(psi, theta)`` update at fixed boundaries, from the pooled whole-sample
    start and every entry of ``psi_starts``; the best run is returned.
    """
    if data.n < spec.k + 1:
        raise ArgumentError(f"need at least k+1={spec.k + 1} observations, got {data.n}")
    if data.p != spec.families[0].obs_dim:
        raise ArgumentError(f"data has {data.p} columns, families expect {spec.families[0].obs_dim}")
    box = spec.resolve_box(data)
    if spec.common_dim == 0:
        r = fit_fixed_psi(spec, data, None, box=box, min_segment_length=min_segment_length, backend=backend)
        params = ParameterState(np.zeros(0), r.thetas)
        ll = full_loglik(spec, data, r.change_points, params)
        diag = _diagnose(spec, params, box, r.change_points)
        diag.update({"trace": [ll], "starts": 1, "iterations": 1, "multiple_maxima": False})
        result = FitResult(r.change_points, params, ll, diagnostics=diag)
        return _with_inference(spec, data, result) if compute_info else result

    starts = [pooled_psi_start(spec, data, box)] + [np.atleast_1d(np.asarray(p, dtype=float)) for p in psi_starts]
    runs, failures = [], []
    for start in starts:
        try:
            runs.append(_profile_run(spec, data, start, box, max_outer_iters, tol, min_segment_length, backend))
        except OptimizationError as exc:
            failures.append({"start": [float(v) for v in start], "error": str(exc)})
    if not runs:
        raise OptimizationError("all psi starts failed", trace=failures)
    best = max(range(len(runs)), key=lambda i: (runs[i]["loglik"], -i))
    run = runs[best]
    others = [
        r for i, r in enumerate(runs)
        if i != best and r["cps"] != run["cps"] and r["loglik"] >= run["loglik"] - tol * (1 + abs(run["loglik"]))
    ]
    params = ParameterState(run["psi"], run["thetas"])
    diag = _diagnose(spec, params, box, run["cps"])
    diag.update(
        {
            "trace": run["trace"],
            "iterations": run["iterations"],
            "converged": run["converged"],
            "starts": len(starts),
            "start_logliks": [r["loglik"] for r in runs],
            "failed_starts": failures,
            "multiple_maxima": bool(others),
        }
    )
    result = FitResult(run["cps"], params, run["loglik"], diagnostics=diag)
    return _with_inference(spec, data, result) if compute_info else result


def _profile_run(spec, data, psi0, box, max_iter, tol, min_len, backend) -> dict:
    psi = np.clip(np.asarray(psi0, dtype=float), box.psi_lower, box.psi_upper)
    trace: list[float] = []
    prev_cps, prev_ll = None, -np.inf
    converged = False
    cps = thetas = None
    ll = -np.inf
    for it in range(1, max_iter + 1):
        r = fit_fixed_psi(spec, data, psi, box=box, min_segment_length=min_len, backend=backend)
        new_psi, new_thetas, new_ll = joint_update(spec, data, r.change_points, psi, r.thetas, box)
        slack = 1e-9 * (1 + abs(new_ll))
        if trace and r.loglik < trace[-1] - slack or new_ll < r.loglik - slack:
            raise InternalError(
                f"profile log-likelihood decreased at iteration {it}: {trace[-1] if trace else None} -> {r.loglik} -> {new_ll}"
            )
        trace += [r.loglik, new_ll]
        step = float(np.linalg.norm(new_psi - psi))
        cps, thetas, ll = r.change_points, new_thetas, new_ll
        small_gain = new_ll - prev_ll < tol * (1 + abs(new_ll))
        settled = cps == prev_cps and step < tol * (1 + float(np.linalg.norm(psi)))
        psi = new_psi
        if small_gain or settled:
            converged = True
            break
        prev_cps, prev_ll = cps, new_ll
    return {"cps": cps, "psi": psi, "thetas": thetas, "loglik": ll, "trace": trace, "iterations": it, "converged": converged}


# ---------------------------------------------------------------------------
# exhaustive oracle
# ---------------------------------------------------------------------------


def brute_force_fit(
    spec: ModelSpec,
    data: Dataset,
    psi_grid: Sequence = (),
    *,
    min_segment_length: int = 1,
    compute_info: bool = True,
) -> FitResult:
    """Exhaustive search over boundary vectors crossed with ``psi_grid``.

    Segment maxima are computed by direct summation of log-densities, not
    prefix sums. Ties go to the lexicographically smallest boundary vector
    (then the earliest grid point).
    """
    n, k = data.n, spec.k
    n_configs = math.comb(n - 1, k)
    grid = [np.zeros(0)] if spec.common_dim == 0 else [np.atleast_1d(np.asarray(p, dtype=float)) for p in psi_grid]
    if not grid:
        raise ArgumentError("psi_grid must be non-empty when the model has a common parameter")
    if n_configs * len(grid) > BRUTE_FORCE_LIMIT:
        raise SizeError(f"{n_configs} configurations x {len(grid)} grid points exceeds {BRUTE_FORCE_LIMIT}")
    box = spec.resolve_box(data)
    records = []  # (total, grid index, bounds) in lexicographic order within each grid point
    caches = []
    for g, psi in enumerate(grid):
        cache: dict = {}
        caches.append(cache)

        def seg(j, s, t, psi=psi, cache=cache):
            key = (j, s, t)
            if key not in cache:
                fam = spec.families[j]
                cache[key] = fit_theta(fam, _as_psi(fam, psi), data.slice(s, t), *box.theta_bounds(j))
            return cache[key]

        for bounds in itertools.combinations(range(1, n), k):
            edges = (0, *bounds, n)
            if min(np.diff(edges)) < min_segment_length:
                continue
            total = 0.0
            for j in range(k + 1):
                total += seg(j, edges[j], edges[j + 1])[1]
                if total == -np.inf:
                    break
            records.append((total, g, bounds))
    if not records:
        raise ArgumentError("no admissible segmentation")
    top = max(r[0] for r in records)
    if top == -np.inf:
        raise ArgumentError("no segmentation has finite log-likelihood")
    # lexicographically smallest boundaries first, then earliest grid point
    winners = sorted((r for r in records if r[0] >= top - _tie_tol(top)), key=lambda r: (r[2], r[1]))
    _, g, bounds = winners[0]
    psi = grid[g]
    edges = (0, *bounds, n)
    thetas = [caches[g][(j, edges[j], edges[j + 1])][0] for j in range(k + 1)]
    best = (top, bounds, psi, thetas)
    total, bounds, psi, thetas = best
    cps = ChangePointConfig(bounds, n)
    params = ParameterState(psi, tuple(thetas))
    ll = full_loglik(spec, data, cps, params)
    diag = _diagnose(spec, params, box, cps)
    diag.update({"configurations": n_configs, "grid_points": len(grid)})
    result = FitResult(cps, params, ll, diagnostics=diag)
    return _with_inference(spec, data, result) if compute_info else result
