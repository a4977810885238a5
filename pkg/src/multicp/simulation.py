"""Monte Carlo experiments for consistency, the 1/n rate and asymptotic normality.

Every replication draws its data from a counter-based stream keyed by
``(root seed, n, rep)``, so results do not depend on execution order or on
the number of worker processes. Per-replication records are kept in the
report, and every summary is recomputed from them.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, stats

from .errors import ArgumentError, ChangePointError
from .estimator import fit
from .families import make_family
from .inference import wald_intervals
from .lemma import lemma1_constants
from .model import ChangePointConfig, Dataset, ModelSpec, ParameterBox, ParameterState
from .rng import DEFAULT_SEED, stream

MAX_FAILURE_RATE = 0.01
KS_CRIT_5PCT = 1.358  # asymptotic 5% critical value of sqrt(m) * KS


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    """Model, true parameters, true fractions and the sample-size ladder."""

    spec: ModelSpec
    true_params: ParameterState
    true_fractions: tuple[float, ...]
    sizes: tuple[int, ...] = (100, 400, 1600)
    reps: int = 500
    seed: int = DEFAULT_SEED
    name: str = "scenario"

    def __post_init__(self):
        fr = tuple(float(f) for f in np.atleast_1d(self.true_fractions))
        object.__setattr__(self, "true_fractions", fr)
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if len(fr) != self.spec.k:
            raise ArgumentError(f"need {self.spec.k} true fractions, got {len(fr)}")
        if not np.all(np.diff((0.0, *fr, 1.0)) > 0):
            raise ArgumentError(f"true fractions must be strictly increasing in (0, 1), got {fr}")
        if self.reps < 1:
            raise ArgumentError("reps must be at least 1")
        if not self.sizes:
            raise ArgumentError("at least one sample size is required")
        self.spec.check_params(self.true_params)

    def true_cps(self, n: int) -> ChangePointConfig:
        return ChangePointConfig.from_fractions(self.true_fractions, n)

    def with_(self, **changes) -> "ScenarioSpec":
        base = dict(
            spec=self.spec, true_params=self.true_params, true_fractions=self.true_fractions,
            sizes=self.sizes, reps=self.reps, seed=self.seed, name=self.name,
        )
        base.update(changes)
        return ScenarioSpec(**base)

    def to_dict(self) -> dict:
        from .modelfile import describe_spec

        return {
            "name": self.name,
            "model": describe_spec(self.spec),
            "truth": {
                "psi": self.true_params.psi.tolist(),
                "thetas": [t.tolist() for t in self.true_params.thetas],
            },
            "fractions": list(self.true_fractions),
            "sizes": list(self.sizes),
            "reps": self.reps,
            "seed": self.seed,
        }


def mean_shift_scenario(
    shift: float = 2.0,
    *,
    common_variance: bool = True,
    sizes: Sequence[int] = (100, 400, 1600),
    reps: int = 500,
    seed: int = DEFAULT_SEED,
    fraction: float = 0.5,
) -> ScenarioSpec:
    """Two normal segments with means ``0`` and ``shift`` and unit variance."""
    if common_variance:
        spec = ModelSpec(1, (make_family("normal-common-var"),))
        psi = np.array([1.0])
    else:
        spec = ModelSpec(1, (make_family("normal-known-var", variance=1.0),))
        psi = np.zeros(0)
    truth = ParameterState(psi, (np.array([0.0]), np.array([float(shift)])))
    name = f"normal-shift-{shift:g}" + ("" if common_variance else "-known-var")
    return ScenarioSpec(spec, truth, (fraction,), tuple(sizes), reps, seed, name)


def generate(scenario: ScenarioSpec, n: int, rep_index: int) -> Dataset:
    """Data set for replication ``rep_index`` at sample size ``n``.

    Segment ``j`` holds indices ``(floor(n lambda_{j-1}), floor(n lambda_j)]``
    drawn from ``f_j(psi0, theta_j0)``.
    """
    try:
        cps = scenario.true_cps(n)
    except ArgumentError as exc:
        raise ArgumentError(f"n={n} is too small for the true fractions: {exc}") from None
    if cps.boundaries and cps.boundaries[0] < 1:
        raise ArgumentError(f"n={n} is too small for the true fractions {scenario.true_fractions}")
    rng = stream(scenario.seed, n, rep_index)
    psi = scenario.true_params.psi
    parts = []
    for (s, t), fam, theta in zip(cps.segments(), scenario.spec.families, scenario.true_params.thetas):
        ps = psi if fam.psi_dim else np.zeros(0)
        parts.append(np.asarray(fam.sample(ps, theta, t - s, rng), dtype=float).reshape(t - s, -1))
    return Dataset(np.vstack(parts))


# ---------------------------------------------------------------------------
# per-replication fitting
# ---------------------------------------------------------------------------


def _fit_one(args) -> dict:
    scenario, n, rep, with_info, level = args
    rec: dict = {"n": n, "rep": rep}
    try:
        data = generate(scenario, n, rep)
        res = fit(scenario.spec, data, compute_info=with_info)
    except ChangePointError as exc:
        rec.update({"ok": False, "error": f"{type(exc).__name__}: {exc}"})
        return rec
    truth = scenario.true_params
    cps = res.change_points
    lam_err = float(np.max(np.abs(cps.fractions - np.asarray(scenario.true_fractions)))) if cps.k else 0.0
    true_b = scenario.true_cps(n).boundaries
    rec.update(
        {
            "ok": True,
            "boundaries": list(cps.boundaries),
            "lambda_err": lam_err,
            "n_lambda_err": int(max((abs(a - b) for a, b in zip(cps.boundaries, true_b)), default=0)),
            "theta_err": [float(np.max(np.abs(th - t0))) for th, t0 in zip(res.params.thetas, truth.thetas)],
            "psi_err": float(np.max(np.abs(res.params.psi - truth.psi))) if truth.psi.size else None,
            "phi": [float(v) for v in res.params.packed()],
            "loglik": float(res.loglik),
        }
    )
    if with_info:
        se = res.std_errors
        if se is None or not np.all(np.isfinite(se)) or np.any(se <= 0):
            rec["se"] = None
            rec["inference_error"] = res.diagnostics.get("inference_error", "non-finite standard errors")
        else:
            rec["se"] = [float(v) for v in se]
            z = (res.params.packed() - truth.packed()) / se
            rec["z"] = [float(v) for v in z]
            ivs = wald_intervals(res, res.info_matrix, level)
            phi0 = truth.packed()
            rec["covered"] = [bool(iv.lower <= p0 <= iv.upper) for iv, p0 in zip(ivs, phi0)]
    return rec


def collect_fits(scenario: ScenarioSpec, n: int, *, with_info: bool = False, level: float = 0.95, workers: int = 1) -> list[dict]:
    """Fit every replication at sample size ``n``; records are ordered by rep."""
    jobs = [(scenario, n, rep, with_info, level) for rep in range(scenario.reps)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            recs = list(pool.map(_fit_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        recs = [_fit_one(j) for j in jobs]
    return sorted(recs, key=lambda r: r["rep"])


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class MonteCarloReport:
    """Per-n summaries, named pass/fail checks and the raw per-rep records."""

    suite: str
    scenario: dict
    summaries: list[dict] = field(default_factory=list)
    checks: list[dict] = field(default_factory=list)
    thresholds: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def add_check(self, name: str, passed: bool, detail: str) -> None:
        self.checks.append({"name": name, "passed": bool(passed), "detail": detail})

    def to_dict(self, include_records: bool = True) -> dict:
        out = {
            "suite": self.suite,
            "passed": self.passed,
            "scenario": self.scenario,
            "thresholds": self.thresholds,
            "summaries": self.summaries,
            "checks": self.checks,
            "notes": self.notes,
        }
        if include_records:
            out["records"] = self.records
        return out

    def summary_rows(self) -> list[dict]:
        """Flat rows for a CSV summary table: one row per (n, statistic)."""
        rows = []
        for s in self.summaries:
            n = s["n"]
            for key, val in s.items():
                if key == "n":
                    continue
                if isinstance(val, list):
                    for c, v in enumerate(val):
                        rows.append({"suite": self.suite, "n": n, "statistic": f"{key}[{c}]", "value": v})
                else:
                    rows.append({"suite": self.suite, "n": n, "statistic": key, "value": val})
        return rows


def _check_ladder(scenario: ScenarioSpec) -> None:
    s = scenario.sizes
    if len(s) < 2 or any(b <= a for a, b in zip(s, s[1:])):
        raise ArgumentError(f"need at least two increasing sample sizes, got {s}")


def _strictly_decreasing(vals: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(vals, vals[1:]))


def _failure_check(report: MonteCarloReport, n: int, recs: list[dict]) -> list[dict]:
    ok = [r for r in recs if r["ok"]]
    frac = 1.0 - len(ok) / len(recs)
    report.add_check(f"failures_n{n}", frac <= MAX_FAILURE_RATE, f"{len(recs) - len(ok)} of {len(recs)} fits failed")
    return ok


def precheck_box(scenario: ScenarioSpec) -> ParameterBox:
    """Box around the truth used for the identifiability precheck."""
    truth = scenario.true_params
    allth = np.vstack([t for t in truth.thetas if t.size == truth.thetas[0].size])
    span = float(np.ptp(allth)) + 1.0
    th_lo = tuple(t - span for t in truth.thetas)
    th_hi = tuple(t + span for t in truth.thetas)
    if truth.psi.size:
        w = 0.5 * np.maximum(np.abs(truth.psi), 1e-3)
        return ParameterBox(truth.psi - w, truth.psi + w, th_lo, th_hi)
    return ParameterBox(None, None, th_lo, th_hi)


def identifiability_precheck(scenario: ScenarioSpec, search_grid: int = 8):
    """Separation constants on a box around the truth; raises if ``G_bar >= 0``."""
    if scenario.spec.k == 0:
        return None
    spec = ModelSpec(scenario.spec.k, scenario.spec.families, precheck_box(scenario))
    return lemma1_constants(spec, scenario.true_params, scenario.true_fractions, search_grid, n_refine=2)


def run_consistency(scenario: ScenarioSpec, *, workers: int = 1, fits: dict | None = None) -> MonteCarloReport:
    """Medians of ``||lambda_hat - lambda0||``, ``|theta_hat - theta0|`` and ``|psi_hat - psi0|`` by n.

    Passes when each median strictly decreases along the size ladder and
    no more than 1% of fits fail at any n.
    """
    _check_ladder(scenario)
    identifiability_precheck(scenario)
    report = MonteCarloReport("consistency", scenario.to_dict())
    report.thresholds = {"max_failure_rate": MAX_FAILURE_RATE, "rule": "medians strictly decreasing in n"}
    K = scenario.spec.k + 1
    med_lam, med_th, med_psi = [], [[] for _ in range(K)], []
    for n in scenario.sizes:
        recs = fits[n] if fits and n in fits else collect_fits(scenario, n, workers=workers)
        report.records += recs
        ok = _failure_check(report, n, recs)
        lam = np.array([r["lambda_err"] for r in ok])
        th = np.array([r["theta_err"] for r in ok]).reshape(len(ok), K)
        summ = {
            "n": n,
            "fits": len(ok),
            "median_lambda_err": float(np.median(lam)),
            "mean_lambda_err": float(np.mean(lam)),
            "p_exact": float(np.mean(lam == 0)),
            "median_theta_err": [float(v) for v in np.median(th, axis=0)],
        }
        med_lam.append(summ["median_lambda_err"])
        for j in range(K):
            med_th[j].append(summ["median_theta_err"][j])
        if scenario.spec.common_dim:
            ps = np.array([r["psi_err"] for r in ok])
            summ["median_psi_err"] = float(np.median(ps))
            med_psi.append(summ["median_psi_err"])
        report.summaries.append(summ)
    report.add_check("median_lambda_err_strictly_decreasing", _strictly_decreasing(med_lam), f"medians {med_lam}")
    for j in range(K):
        report.add_check(
            f"median_theta_{j + 1}_err_strictly_decreasing", _strictly_decreasing(med_th[j]), f"medians {med_th[j]}"
        )
    if scenario.spec.common_dim:
        report.add_check("median_psi_err_strictly_decreasing", _strictly_decreasing(med_psi), f"medians {med_psi}")
    return report


def run_rate(
    scenario: ScenarioSpec,
    delta_grid: Sequence[float] = (5, 10, 20),
    *,
    target: float = 0.10,
    workers: int = 1,
    fits: dict | None = None,
) -> MonteCarloReport:
    """Tail probabilities ``P(n ||lambda_hat - lambda0|| >= delta)`` by (n, delta).

    For each delta the estimate must not rise along the size ladder by more
    than two standard errors of the difference, and at the largest delta
    and largest n it must be at most ``target``.
    """
    _check_ladder(scenario)
    identifiability_precheck(scenario)
    deltas = sorted(float(d) for d in delta_grid)
    if not deltas:
        raise ArgumentError("delta_grid must not be empty")
    report = MonteCarloReport("rate", scenario.to_dict())
    report.thresholds = {"deltas": deltas, "guard_sigmas": 2.0, "target_at_largest_delta": target}
    report.notes.append(
        "finite-sample surrogate for tightness: tails must not grow along the n ladder, and the largest delta must push "
        "the tail below the target; the target is a calibrated constant"
    )
    tails = {d: [] for d in deltas}
    for n in scenario.sizes:
        recs = fits[n] if fits and n in fits else collect_fits(scenario, n, workers=workers)
        report.records += recs
        ok = _failure_check(report, n, recs)
        # n * ||lambda_hat - lambda0||_inf computed from fractions, not from integer differences
        scaled = np.array([n * r["lambda_err"] for r in ok])
        summ = {"n": n, "fits": len(ok)}
        for d in deltas:
            p = float(np.mean(scaled >= d - 1e-9))
            se = math.sqrt(p * (1 - p) / len(ok)) if ok else float("nan")
            tails[d].append((p, se))
            summ[f"p_ge_{d:g}"] = p
            summ[f"se_ge_{d:g}"] = se
        report.summaries.append(summ)
    for d in deltas:
        seq = tails[d]
        ok = all(b[0] <= a[0] + 2.0 * math.hypot(a[1], b[1]) for a, b in zip(seq, seq[1:]))
        report.add_check(f"tail_ge_{d:g}_non_increasing", ok, f"P by n: {[round(p, 4) for p, _ in seq]}")
    last = tails[deltas[-1]][-1][0]
    report.add_check(
        f"tail_ge_{deltas[-1]:g}_at_n{scenario.sizes[-1]}_below_target", last <= target, f"P = {last:.4f}, target {target}"
    )
    return report


def run_normality(
    scenario: ScenarioSpec,
    level: float = 0.95,
    *,
    band: float = 0.03,
    workers: int = 1,
    fits: dict | None = None,
) -> MonteCarloReport:
    """Wald coverage, mean standardized error and KS distance to N(0, 1) per coordinate.

    Checks apply at the largest n: coverage within ``level +- band`` and
    ``|mean z| <= 3 / sqrt(reps)`` for every coordinate. With two or more
    sizes the KS distance must also shrink from the smallest to the largest n.
    """
    if not 0 < level < 1:
        raise ArgumentError("level must lie in (0, 1)")
    identifiability_precheck(scenario)
    from .inference import coordinate_names

    names = coordinate_names(scenario.spec)
    report = MonteCarloReport("normality", scenario.to_dict())
    report.thresholds = {
        "level": level,
        "coverage_band": band,
        "mean_z_band": f"3/sqrt(reps) = {3 / math.sqrt(scenario.reps):.5f}",
        "ks_rule": f"KS shrinks along n, or is below {KS_CRIT_5PCT}/sqrt(reps) at the largest n",
    }
    ks_by_n = []
    for n in scenario.sizes:
        recs = fits[n] if fits and n in fits else collect_fits(scenario, n, with_info=True, level=level, workers=workers)
        report.records += recs
        ok = [r for r in _failure_check(report, n, recs) if r.get("se") is not None]
        report.add_check(f"inference_n{n}", len(ok) >= (1 - MAX_FAILURE_RATE) * len(recs), f"{len(ok)} usable intervals")
        Z = np.array([r["z"] for r in ok]).reshape(len(ok), len(names))
        C = np.array([r["covered"] for r in ok], dtype=float).reshape(len(ok), len(names))
        ks = [float(stats.kstest(Z[:, c], "norm").statistic) for c in range(len(names))]
        summ = {
            "n": n,
            "fits": len(ok),
            "coordinates": names,
            "coverage": [float(v) for v in C.mean(axis=0)],
            "mean_z": [float(v) for v in Z.mean(axis=0)],
            "sd_z": [float(v) for v in Z.std(axis=0, ddof=1)] if len(ok) > 1 else [float("nan")] * len(names),
            "ks_distance": ks,
        }
        ks_by_n.append(ks)
        report.summaries.append(summ)
    final = report.summaries[-1]
    zband = 3.0 / math.sqrt(scenario.reps)
    # a coordinate already indistinguishable from N(0, 1) has nothing left to shrink
    ks_crit = KS_CRIT_5PCT / math.sqrt(max(final["fits"], 1))
    for c, nm in enumerate(names):
        cov = final["coverage"][c]
        report.add_check(f"coverage_{nm}", abs(cov - level) <= band, f"coverage {cov:.4f} at n={final['n']}")
        mz = final["mean_z"][c]
        report.add_check(f"mean_z_{nm}", abs(mz) <= zband, f"mean z {mz:+.4f}, band {zband:.4f}")
        if len(ks_by_n) >= 2:
            first, last = ks_by_n[0][c], ks_by_n[-1][c]
            report.add_check(
                f"ks_shrinks_{nm}",
                last < first or last <= ks_crit,
                f"KS {first:.4f} -> {last:.4f} (5% critical value {ks_crit:.4f})",
            )
    return report


# ---------------------------------------------------------------------------
# profiled log-likelihood-ratio statistic for a same-family mean shift
# ---------------------------------------------------------------------------


@dataclass
class HinkleyTrace:
    m_grid: list[int]
    theta2_0: float
    reps: int
    statistics: dict = field(default_factory=dict)
    max_abs_diff: dict = field(default_factory=dict)
    min_statistic: dict = field(default_factory=dict)
    mean: dict = field(default_factory=dict)
    stderr: dict = field(default_factory=dict)
    checks: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "suite": "hinkley",
            "passed": self.passed,
            "m_grid": self.m_grid,
            "theta2_0": self.theta2_0,
            "reps": self.reps,
            "summaries": [
                {
                    "m": m,
                    "mean": self.mean[m],
                    "stderr": self.stderr[m],
                    "min_statistic": self.min_statistic[m],
                    "max_abs_diff": self.max_abs_diff[m],
                }
                for m in self.m_grid
            ],
            "checks": self.checks,
        }


def _numeric_profile(x: np.ndarray, theta2_0: float) -> float:
    """``sup_theta1 sum[log f(x; theta1) - log f(x; theta2_0)]`` by bounded scalar search."""
    fam = make_family("normal-known-var", variance=1.0)
    base = fam.logpdf(x, np.zeros(0), np.array([theta2_0]))

    def neg(t):
        return -float(np.sum(fam.logpdf(x, np.zeros(0), np.array([t])) - base))

    # the profile is concave in theta1 and its maximizer lies inside the data range
    lo, hi = float(x.min()), float(x.max())
    if hi - lo < 1e-300:
        return -neg(lo)
    res = optimize.minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    return -float(res.fun)


def hinkley_demo(
    m_grid: Sequence[int] = (10, 100, 1000, 10000),
    theta2_0: float = 0.0,
    seed: int = DEFAULT_SEED,
    *,
    reps: int = 10_000,
    tol: float = 1e-8,
) -> HinkleyTrace:
    """Profiled log-likelihood ratio of a unit-variance normal mean shift.

    For ``X_1..X_m ~ N(theta2_0, 1)`` the statistic
    ``sup_theta1 sum[log f(X_i; theta1) - log f(X_i; theta2_0)]`` equals
    ``(m/2)(mean(X) - theta2_0)^2``. It is a scaled chi-square(1) with mean
    1/2 for every m, so it does not drift to minus infinity as m grows.
    Each draw is checked against a numeric profile maximization.
    """
    m_grid = [int(m) for m in m_grid]
    if any(b <= a for a, b in zip(m_grid, m_grid[1:])) or not m_grid or m_grid[0] < 1:
        raise ArgumentError("m_grid must be increasing positive integers")
    trace = HinkleyTrace(m_grid, float(theta2_0), int(reps))
    for m in m_grid:
        closed = np.empty(reps)
        diff = 0.0
        for r in range(reps):
            x = stream(seed, m, r).normal(theta2_0, 1.0, m)
            closed[r] = 0.5 * m * (x.mean() - theta2_0) ** 2
            diff = max(diff, abs(_numeric_profile(x, theta2_0) - closed[r]))
        trace.statistics[m] = closed
        trace.max_abs_diff[m] = diff
        trace.min_statistic[m] = float(closed.min())
        trace.mean[m] = float(closed.mean())
        trace.stderr[m] = float(closed.std(ddof=1) / math.sqrt(reps)) if reps > 1 else float("nan")
    trace.checks.append(
        {
            "name": "closed_form_matches_profile",
            "passed": all(trace.max_abs_diff[m] <= tol for m in m_grid),
            "detail": f"max |diff| {max(trace.max_abs_diff.values()):.3g}, tolerance {tol:g}",
        }
    )
    trace.checks.append(
        {
            "name": "statistic_nonnegative",
            "passed": all(trace.min_statistic[m] >= 0 for m in m_grid),
            "detail": f"smallest value {min(trace.min_statistic.values()):.3g}",
        }
    )
    if reps > 1:
        dev = {m: abs(trace.mean[m] - 0.5) / trace.stderr[m] for m in m_grid}
        trace.checks.append(
            {
                "name": "mean_is_one_half",
                "passed": all(v <= 5.0 for v in dev.values()),
                "detail": "; ".join(f"m={m}: mean {trace.mean[m]:.4f} ({dev[m]:.2f} SE)" for m in m_grid),
            }
        )
    return trace
