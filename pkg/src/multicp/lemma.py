"""Numerical constants and probe check for the J1 separation bound.

For a true configuration ``(lambda0, phi0)`` the bound reads

    J1(lambda, phi) <= -max(C1 * ||lambda - lambda0||_inf, C2 * rho(phi, phi0))

with ``rho(phi, phi0) = max_j |v(psi, theta_j; psi0, theta_j0)|``. The
constants are built from

* ``g_i`` : supremum over segments ``j`` and the parameter box of the average
  ``[v(.; theta_{i+1}0) + v(.; theta_i0)] / 2``, with ``G_i = 2 g_i`` and
  ``G_bar = max_i G_i`` (negative when neighbours are distinguishable);
* ``Delta`` : smallest gap in ``(0, lambda0_1, ..., lambda0_k, 1)``;
* ``varrho`` : ``max_j sup |v(psi, theta_j; psi0, theta_j0)|`` over the box;

as ``C1 = (Delta/2)^2 |G_bar| / 2`` and
``C2 = min((Delta/2)^2 |G_bar| / (2 varrho), Delta/2)``.

Suprema over the box are approximated by a lattice (or a Sobol set when
the lattice would be too large) followed by bounded Nelder-Mead from the
best cells.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from .errors import ArgumentError, IdentifiabilityError, LemmaCheckError
from .likelihood import KLValue, kl_v_detailed, overlap_counts
from .model import ChangePointConfig, ModelSpec, ParameterBox, ParameterState
from .rng import stream

GRID_POINTS = 20
GRID_CAP = 8000
N_REFINE = 5
CHECK_TOL = 1e-9
MC_GUARD = 4.0
IDENT_TOL = 1e-12


@dataclass(frozen=True)
class LemmaOneConstants:
    delta_lambda0: float
    G_bar: float
    rho_sup: float
    C1: float
    C2: float
    G: tuple[float, ...] = ()
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "delta_lambda0": self.delta_lambda0,
            "G_bar": self.G_bar,
            "G": list(self.G),
            "rho_sup": self.rho_sup,
            "C1": self.C1,
            "C2": self.C2,
            "notes": list(self.notes),
        }


@dataclass(frozen=True, eq=False)
class LemmaInstance:
    """A data-free instance: model with a complete box, true parameters and fractions.

    ``n`` sets the lattice of candidate fractions ``{1/n, ..., (n-1)/n}``
    used by the probe check.
    """

    spec: ModelSpec
    true_params: ParameterState
    true_fractions: tuple[float, ...]
    n: int = 200

    def __post_init__(self):
        fr = tuple(float(f) for f in np.atleast_1d(self.true_fractions))
        object.__setattr__(self, "true_fractions", fr)
        if len(fr) != self.spec.k:
            raise ArgumentError(f"need {self.spec.k} true fractions, got {len(fr)}")
        if not np.all(np.diff((0.0, *fr, 1.0)) > 0):
            raise ArgumentError(f"true fractions must be strictly increasing in (0, 1), got {fr}")
        self.spec.check_params(self.true_params)
        _require_box(self.spec)

    @property
    def box(self) -> ParameterBox:
        return self.spec.box

    @property
    def true_cps(self) -> ChangePointConfig:
        return ChangePointConfig.from_fractions(self.true_fractions, self.n)


def _require_box(spec: ModelSpec) -> ParameterBox:
    b = spec.box
    ok = (
        b is not None
        and (spec.common_dim == 0 or b.psi_lower is not None)
        and len(b.theta_lower) == spec.k + 1
        and all(lo is not None for lo in b.theta_lower)
    )
    if not ok:
        raise ArgumentError("the separation constants need an explicit parameter box for psi and every theta_j")
    return b


def delta_lambda(fractions: Sequence[float]) -> float:
    """Smallest gap between consecutive entries of ``(0, lambda_1, ..., lambda_k, 1)``."""
    return float(np.min(np.diff(np.concatenate([[0.0], np.asarray(fractions, dtype=float), [1.0]]))))


# ---------------------------------------------------------------------------
# box suprema
# ---------------------------------------------------------------------------


def _candidates(lo: np.ndarray, hi: np.ndarray, grid: int, cap: int, seed: int, extra=()) -> np.ndarray:
    D = lo.size
    if grid**D <= cap:
        axes = [np.linspace(a, b, grid) for a, b in zip(lo, hi)]
        pts = np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, D)
    else:
        m = int(2 ** math.ceil(math.log2(cap)))
        unit = qmc.Sobol(D, scramble=True, seed=seed).random(m)
        pts = qmc.scale(unit, lo, hi)
        if D <= 12:
            corners = np.array(list(itertools.product(*zip(lo, hi))), dtype=float)
            pts = np.vstack([pts, corners])
    if len(extra):
        pts = np.vstack([pts, np.clip(np.asarray(extra, dtype=float).reshape(-1, D), lo, hi)])
    return pts


def box_sup(
    func: Callable[[np.ndarray], float],
    lo,
    hi,
    *,
    grid: int = GRID_POINTS,
    n_refine: int = N_REFINE,
    cap: int = GRID_CAP,
    seed: int = 0,
    extra=(),
) -> tuple[float, np.ndarray]:
    """Approximate ``sup func`` over the box ``[lo, hi]``.

    Evaluates a lattice of ``grid`` points per axis (a scrambled Sobol set
    plus the box corners when that exceeds ``cap``), then runs bounded
    Nelder-Mead from the ``n_refine`` best points. Points where ``func`` is
    not finite are treated as ``-inf``.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    pts = _candidates(lo, hi, grid, cap, seed, extra)

    def safe(x):
        val = func(np.clip(x, lo, hi))
        return val if np.isfinite(val) else -np.inf

    vals = np.array([safe(p) for p in pts])
    order = np.argsort(-vals, kind="stable")
    best_val, best_x = float(vals[order[0]]), pts[order[0]].copy()
    bounds = list(zip(lo, hi))
    for idx in order[: max(n_refine, 0)]:
        if not np.isfinite(vals[idx]):
            break
        res = optimize.minimize(
            lambda x: -safe(x),
            pts[idx],
            method="Nelder-Mead",
            bounds=bounds,
            options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 2000 * lo.size},
        )
        val = -float(res.fun)
        if val > best_val:
            best_val, best_x = val, np.clip(res.x, lo, hi)
    return best_val, best_x


def _split(spec: ModelSpec, j: int, x: np.ndarray):
    d = spec.common_dim if spec.families[j].psi_dim else 0
    return x[:d], x[d:]


def _block_box(spec: ModelSpec, box: ParameterBox, j: int):
    lo_t, hi_t = box.theta_bounds(j)
    if spec.families[j].psi_dim:
        return np.concatenate([box.psi_lower, lo_t]), np.concatenate([box.psi_upper, hi_t])
    return lo_t, hi_t


def lemma1_constants(
    spec: ModelSpec,
    true_params: ParameterState,
    true_cps,
    search_grid: int = GRID_POINTS,
    *,
    n_refine: int = N_REFINE,
    cap: int = GRID_CAP,
    seed: int = 0,
) -> LemmaOneConstants:
    """Evaluate ``Delta``, ``G_i``, ``G_bar``, ``varrho``, ``C1`` and ``C2``.

    Parameters
    ----------
    spec
        Model whose ``box`` gives finite bounds for psi and every theta_j.
    true_params
        The true parameter vector ``phi0``.
    true_cps
        True change points as a :class:`ChangePointConfig` or a sequence of
        fractions in (0, 1).
    search_grid
        Lattice points per parameter axis used before local refinement.

    Raises
    ------
    IdentifiabilityError
        If ``G_bar >= 0``, i.e. some pair of neighbouring true segments
        cannot be told apart by any candidate density.
    """
    if spec.k < 1:
        raise ArgumentError("the separation constants need k >= 1")
    box = _require_box(spec)
    spec.check_params(true_params)
    fr = true_cps.fractions if isinstance(true_cps, ChangePointConfig) else np.asarray(true_cps, dtype=float)
    delta = delta_lambda(fr)
    if not delta > 0:
        raise ArgumentError("true fractions must be strictly increasing in (0, 1)")
    psi0, th0 = true_params.psi, true_params.thetas
    fams = spec.families

    G = []
    for i in range(spec.k):
        best = -np.inf
        for j in range(spec.k + 1):
            lo, hi = _block_box(spec, box, j)

            def avg(x, j=j, i=i):
                ps, th = _split(spec, j, x)
                a = kl_v_detailed(fams[j], ps, th, fams[i + 1], psi0, th0[i + 1]).value
                b = kl_v_detailed(fams[j], ps, th, fams[i], psi0, th0[i]).value
                return 0.5 * (a + b)

            seeds = _seed_points(spec, j, true_params, (i, i + 1))
            val, _ = box_sup(avg, lo, hi, grid=search_grid, n_refine=n_refine, cap=cap, seed=seed, extra=seeds)
            best = max(best, val)
        G.append(2.0 * best)
    G_bar = max(G)
    if not G_bar < -IDENT_TOL:
        raise IdentifiabilityError(
            f"G_bar = {G_bar:.3g} is not negative: some neighbouring true segments are indistinguishable"
        )

    rho_sup = 0.0
    for j in range(spec.k + 1):
        lo, hi = _block_box(spec, box, j)

        def neg_v(x, j=j):
            ps, th = _split(spec, j, x)
            return -kl_v_detailed(fams[j], ps, th, fams[j], psi0, th0[j]).value

        val, _ = box_sup(neg_v, lo, hi, grid=search_grid, n_refine=n_refine, cap=cap, seed=seed)
        rho_sup = max(rho_sup, val)
    if not np.isfinite(rho_sup) or rho_sup <= 0:
        raise ArgumentError(f"sup |v| over the box is {rho_sup}; the box must be compact with v finite on it")

    C1 = (delta / 2.0) ** 2 * abs(G_bar) / 2.0
    C2 = min((delta / 2.0) ** 2 * abs(G_bar) / (2.0 * rho_sup), delta / 2.0)
    notes = (
        "Delta is the smallest gap in (0, lambda0, 1), so it is defined for k = 1",
        "C2 uses the supremum of |v| over the whole box, which makes it a single conservative constant",
        f"suprema from a {search_grid}-point-per-axis search refined by Nelder-Mead from the {n_refine} best points",
    )
    return LemmaOneConstants(delta, float(G_bar), float(rho_sup), float(C1), float(C2), tuple(float(g) for g in G), notes)


def _seed_points(spec, j, params, segs) -> list[np.ndarray]:
    """Extra search points: true thetas of the involved segments and their midpoint."""
    fam = spec.families[j]
    pts = []
    ths = [params.thetas[i] for i in segs if spec.families[i].theta_dim == fam.theta_dim]
    if len(ths) == 2:
        ths.append(0.5 * (ths[0] + ths[1]))
    for th in ths:
        pts.append(np.concatenate([params.psi, th]) if fam.psi_dim else np.asarray(th, dtype=float))
    return pts


# ---------------------------------------------------------------------------
# probe check
# ---------------------------------------------------------------------------


@dataclass
class LemmaReport:
    probes: int
    violations: list = field(default_factory=list)
    worst_slack: float = math.inf
    worst_probe: dict | None = None
    guard: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "probes": self.probes,
            "violations": len(self.violations),
            "worst_slack": self.worst_slack,
            "worst_probe": self.worst_probe,
            "monte_carlo_guard": self.guard,
            "passed": self.passed,
        }


VFunc = Callable[..., KLValue]


def _j1_and_rho(spec, cps, params, true_params, true_cps, v: VFunc):
    n = cps.n
    ov = overlap_counts(n, cps, true_cps).counts
    fams = spec.families
    total, se2 = 0.0, 0.0
    for j in range(spec.k + 1):
        for i in range(spec.k + 1):
            if ov[j, i] == 0:
                continue
            r = v(fams[j], params.psi, params.thetas[j], fams[i], true_params.psi, true_params.thetas[i])
            w = ov[j, i] / n
            total += w * r.value
            se2 += (w * r.stderr) ** 2
    rho, rho_se = 0.0, 0.0
    for j in range(spec.k + 1):
        r = v(fams[j], params.psi, params.thetas[j], fams[j], true_params.psi, true_params.thetas[j])
        if abs(r.value) > rho:
            rho, rho_se = abs(r.value), r.stderr
    return total, math.sqrt(se2), rho, rho_se


def _random_cps(rng: np.random.Generator, n: int, k: int) -> ChangePointConfig:
    b = np.sort(rng.choice(np.arange(1, n), size=k, replace=False))
    return ChangePointConfig(tuple(int(x) for x in b), n)


def lemma1_check(
    spec: ModelSpec,
    instance: LemmaInstance,
    constants: LemmaOneConstants,
    probe_count: int = 10_000,
    *,
    seed: int = 0,
    v: VFunc = kl_v_detailed,
    raise_on_violation: bool = True,
) -> LemmaReport:
    """Probe ``J1 <= -max(C1 ||lambda - lambda0||, C2 rho) + 1e-9`` at random points.

    Probe 0 is the truth itself; the others draw boundaries uniformly from
    the lattice ``{1, ..., n-1}`` and parameters uniformly from the box, each
    from its own substream of ``seed``. When ``v`` comes from Monte Carlo the
    tolerance widens by four standard errors.

    Returns
    -------
    LemmaReport
        ``worst_slack`` is the smallest value of ``bound + 1e-9 - J1`` seen.

    Raises
    ------
    LemmaCheckError
        On the first violation, unless ``raise_on_violation`` is false.
    """
    if probe_count < 1:
        raise ArgumentError("probe_count must be at least 1")
    spec = spec or instance.spec
    box = instance.box
    true_cps = instance.true_cps
    lam0 = true_cps.fractions
    report = LemmaReport(probes=probe_count)
    for p in range(probe_count):
        if p == 0:
            cps, params = true_cps, instance.true_params
        else:
            rng = stream(seed, p)
            cps = _random_cps(rng, instance.n, spec.k)
            params = box.sample(rng)
        J1, j_se, rho, rho_se = _j1_and_rho(spec, cps, params, instance.true_params, true_cps, v)
        dist = float(np.max(np.abs(cps.fractions - lam0))) if spec.k else 0.0
        bound = -max(constants.C1 * dist, constants.C2 * rho)
        guard = MC_GUARD * (j_se + constants.C2 * rho_se)
        report.guard = max(report.guard, guard)
        slack = bound + CHECK_TOL + guard - J1
        probe = {
            "index": p,
            "boundaries": list(cps.boundaries),
            "phi": [float(x) for x in params.packed()],
            "J1": J1,
            "bound": bound,
            "slack": slack,
        }
        if slack < report.worst_slack:
            report.worst_slack, report.worst_probe = slack, probe
        if slack < 0:
            report.violations.append(probe)
            if raise_on_violation:
                raise LemmaCheckError(
                    f"J1 = {J1:.6g} exceeds the bound {bound:.6g} at boundaries {probe['boundaries']}, phi = {probe['phi']}",
                    probe,
                )
    return report


def two_segment_normal_benchmark(n: int = 200) -> LemmaInstance:
    """Unit-variance normal means 0 and 1 with the change at the midpoint."""
    from .families import make_family

    box = ParameterBox(None, None, (np.array([-3.0]), np.array([-3.0])), (np.array([4.0]), np.array([4.0])))
    spec = ModelSpec(1, (make_family("normal-known-var", variance=1.0),), box)
    return LemmaInstance(spec, ParameterState(np.zeros(0), (np.array([0.0]), np.array([1.0]))), (0.5,), n)
