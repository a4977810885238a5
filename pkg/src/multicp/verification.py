"""Self-checks run by ``multicp verify``.

Each check compares two independent computations of the same quantity:
closed-form ``v`` against quadrature, the segmentation recurrence against
exhaustive enumeration, ``J1 + J2`` against the direct log-likelihood
difference, and the ``J1`` separation bound against random probes.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ChangePointError
from .estimator import brute_force_fit, fit
from .families import make_family
from .lemma import LemmaInstance, _j1_and_rho, lemma1_check, lemma1_constants, two_segment_normal_benchmark
from .likelihood import KLValue, full_loglik, j2, j2_regrouped, kl_v_detailed, kl_v_quadrature
from .model import ChangePointConfig, Dataset, ModelSpec, ParameterState
from .rng import stream

KL_TOL = 1e-8
DP_TOL = 1e-9
J_TOL = 1e-10

UNIVARIATE = ("normal-known-var", "normal-common-var", "exponential", "poisson")


def random_kl_pair(family: str, rng: np.random.Generator):
    """Random ``(fam, psi, theta, psi0, theta0)`` inside a moderate box."""
    if family == "normal-known-var":
        fam = make_family(family, variance=float(rng.uniform(0.5, 2.0)))
        return fam, np.zeros(0), rng.uniform(-3, 3, 1), np.zeros(0), rng.uniform(-3, 3, 1)
    if family == "normal-common-var":
        fam = make_family(family)
        return fam, rng.uniform(0.3, 3.0, 1), rng.uniform(-3, 3, 1), rng.uniform(0.3, 3.0, 1), rng.uniform(-3, 3, 1)
    if family == "exponential":
        fam = make_family(family)
        return fam, np.zeros(0), rng.uniform(0.2, 5.0, 1), np.zeros(0), rng.uniform(0.2, 5.0, 1)
    if family == "poisson":
        fam = make_family(family)
        return fam, np.zeros(0), rng.uniform(0.2, 30.0, 1), np.zeros(0), rng.uniform(0.2, 30.0, 1)
    raise ValueError(f"no random pair generator for {family!r}")


def random_dp_instance(rng: np.random.Generator, n_max: int = 25, k_max: int = 3):
    """Small instance without a common parameter and with mixed families.

    Each true segment is drawn from its own family, so the true segmentation
    has finite likelihood; other segmentations may put data outside a
    family's support, which exercises the ``-inf`` handling.
    """
    k = int(rng.integers(0, k_max + 1))
    n = int(rng.integers(k + 2, n_max + 1))
    fams = []
    for _ in range(k + 1):
        kind = rng.choice(["normal-known-var", "exponential", "poisson"])
        fams.append(make_family(str(kind), variance=float(rng.uniform(0.5, 2.0))) if kind == "normal-known-var" else make_family(str(kind)))
    cuts = np.sort(rng.choice(np.arange(1, n), size=k, replace=False))
    edges = (0, *[int(c) for c in cuts], n)
    parts = []
    for j, fam in enumerate(fams):
        m = edges[j + 1] - edges[j]
        if fam.family_id == "normal-known-var":
            parts.append(rng.normal(rng.uniform(-2, 2), math.sqrt(fam.variance(None)), m))
        elif fam.family_id == "exponential":
            parts.append(rng.exponential(1.0 / rng.uniform(0.3, 3.0), m))
        else:
            parts.append(rng.poisson(rng.uniform(0.5, 8.0), m).astype(float))
    return ModelSpec(k, tuple(fams)), Dataset(np.concatenate(parts))


def random_j_instance(rng: np.random.Generator, n_max: int = 60):
    """Random model, truth, candidate and data for the J-identity check."""
    k = int(rng.integers(1, 4))
    n = int(rng.integers(2 * (k + 1), n_max + 1))
    kind = rng.choice(["normal-common-var", "normal-known-var", "exponential", "poisson"])
    fam = make_family(str(kind))
    spec = ModelSpec(k, (fam,))

    def draw_theta():
        if kind in ("normal-common-var", "normal-known-var"):
            return rng.uniform(-2, 2, 1)
        if kind == "exponential":
            return rng.uniform(0.3, 3.0, 1)
        return rng.uniform(0.5, 8.0, 1)

    psi = rng.uniform(0.5, 2.0, 1) if fam.psi_dim else np.zeros(0)
    truth = ParameterState(psi, tuple(draw_theta() for _ in range(k + 1)))
    cand_psi = rng.uniform(0.5, 2.0, 1) if fam.psi_dim else np.zeros(0)
    cand = ParameterState(cand_psi, tuple(draw_theta() for _ in range(k + 1)))
    tcps = ChangePointConfig(tuple(int(c) for c in np.sort(rng.choice(np.arange(1, n), size=k, replace=False))), n)
    ccps = ChangePointConfig(tuple(int(c) for c in np.sort(rng.choice(np.arange(1, n), size=k, replace=False))), n)
    parts = []
    for (s, t), th in zip(tcps.segments(), truth.thetas):
        parts.append(np.asarray(fam.sample(psi, th, t - s, rng), dtype=float).reshape(-1))
    return spec, Dataset(np.concatenate(parts)), ccps, cand, tcps, truth


def _flip(v):
    def flipped(*args, **kwargs) -> KLValue:
        r = v(*args, **kwargs)
        return KLValue(-r.value, r.stderr, r.method)

    return flipped


def _check(name, passed, detail, worst=None) -> dict:
    return {"name": name, "passed": bool(passed), "detail": detail, "worst": worst}


def run_verification(
    instance: LemmaInstance | None = None,
    *,
    seed: int = 0,
    probes: int = 10_000,
    kl_pairs: int = 50,
    dp_instances: int = 50,
    j_probes: int = 50,
    inject_fault: str = "none",
) -> dict:
    """Run the verification bundle and return a JSON-ready dict.

    ``inject_fault="v-sign"`` flips the sign of every ``v`` evaluation, which
    every check that depends on ``v`` must detect.
    """
    v = _flip(kl_v_detailed) if inject_fault == "v-sign" else kl_v_detailed
    instance = instance or two_segment_normal_benchmark()
    checks = []

    consts = lemma1_constants(instance.spec, instance.true_params, instance.true_fractions, seed=seed)
    rep = lemma1_check(instance.spec, instance, consts, probes, seed=seed, v=v, raise_on_violation=False)
    checks.append(
        _check(
            "j1_separation_bound",
            rep.passed,
            f"{len(rep.violations)} violations in {probes} probes, worst slack {rep.worst_slack:.3g}",
            rep.worst_slack,
        )
    )

    worst_kl, worst_pos = 0.0, -math.inf
    for fid, name in enumerate(UNIVARIATE):
        for p in range(kl_pairs):
            fam, psi, th, psi0, th0 = random_kl_pair(name, stream(seed, 1, fid, p))
            closed = v(fam, psi, th, fam, psi0, th0).value
            quad = kl_v_quadrature(fam, psi, th, fam, psi0, th0)
            worst_kl = max(worst_kl, abs(closed - quad))
            worst_pos = max(worst_pos, closed)
        same = v(fam, psi0, th0, fam, psi0, th0).value
        worst_kl = max(worst_kl, abs(same))
    checks.append(_check("kl_closed_vs_quadrature", worst_kl <= KL_TOL, f"max |diff| {worst_kl:.3g} over {kl_pairs} pairs per family", worst_kl))
    checks.append(_check("kl_nonpositive", worst_pos <= KL_TOL, f"largest v {worst_pos:.3g}", worst_pos))

    worst_dp, mismatched = 0.0, 0
    for r in range(dp_instances):
        spec, data = random_dp_instance(stream(seed, 2, r), n_max=12, k_max=2)
        a = fit(spec, data, compute_info=False)
        b = brute_force_fit(spec, data, compute_info=False)
        worst_dp = max(worst_dp, abs(a.loglik - b.loglik))
        mismatched += a.change_points != b.change_points
    checks.append(
        _check(
            "dp_vs_enumeration",
            worst_dp <= DP_TOL and mismatched == 0,
            f"max |loglik diff| {worst_dp:.3g}, {mismatched} boundary mismatches in {dp_instances} instances",
            worst_dp,
        )
    )

    worst_j, worst_reg = 0.0, 0.0
    for r in range(j_probes):
        spec, data, ccps, cand, tcps, truth = random_j_instance(stream(seed, 3, r))
        J1 = _j1_and_rho(spec, ccps, cand, truth, tcps, v)[0]
        J2 = j2(spec, data, ccps, cand, tcps, truth)
        direct = (full_loglik(spec, data, ccps, cand) - full_loglik(spec, data, tcps, truth)) / data.n
        worst_j = max(worst_j, abs(J1 + J2 - direct))
        worst_reg = max(worst_reg, abs(J2 - j2_regrouped(spec, data, ccps, cand, tcps, truth)))
    checks.append(_check("j_identity", worst_j <= J_TOL, f"max |J1 + J2 - direct| {worst_j:.3g} over {j_probes} instances", worst_j))
    checks.append(_check("j2_regrouping", worst_reg <= J_TOL, f"max |difference| {worst_reg:.3g}", worst_reg))

    return {
        "passed": all(c["passed"] for c in checks),
        "seed": seed,
        "fault": inject_fault,
        "instance": {
            "k": instance.spec.k,
            "true_fractions": list(instance.true_fractions),
            "true_phi": instance.true_params.packed().tolist(),
            "lattice_n": instance.n,
        },
        "constants": consts.to_dict(),
        "lemma_report": rep.to_dict(),
        "checks": checks,
    }
