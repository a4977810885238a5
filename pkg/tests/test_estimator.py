"""Exact segmentation, the profile loop over psi and the enumeration oracle."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from multicp import (
    ArgumentError,
    ChangePointConfig,
    Dataset,
    ModelSpec,
    ParameterBox,
    ParameterState,
    SegmentCostTable,
    SizeError,
    brute_force_fit,
    fit,
    fit_fixed_psi,
    full_loglik,
    make_family,
)
from multicp import kernels
from multicp.verification import random_dp_instance

LOG_2PI = math.log(2 * math.pi)
NORMAL = make_family("normal-known-var", variance=1.0)


def _normal_segment_ll(x):
    return float(np.sum(-0.5 * LOG_2PI - 0.5 * (x - x.mean()) ** 2))


def _poisson_segment_ll(x):
    return float(np.sum(stats.poisson.logpmf(x, x.mean()))) if x.mean() > 0 else 0.0


# -- examples ----------------------------------------------------------------------


def test_strong_mean_shift_n12():
    rng = np.random.default_rng(1)
    x = np.concatenate([rng.normal(0, 1, 6), rng.normal(5, 1, 6)])
    r = fit_fixed_psi(ModelSpec(1, (NORMAL,)), Dataset(x))
    assert r.change_points.boundaries == (6,)
    exhaustive = max(_normal_segment_ll(x[:t]) + _normal_segment_ll(x[t:]) for t in range(1, 12))
    assert abs(r.loglik - exhaustive) <= 1e-9


def test_three_poisson_segments_n20():
    rng = np.random.default_rng(2)
    x = np.concatenate([rng.poisson(1, 7), rng.poisson(9, 6), rng.poisson(3, 7)]).astype(float)
    spec = ModelSpec(2, (make_family("poisson"),))
    r = fit(spec, Dataset(x), compute_info=False)
    configs = list(itertools.combinations(range(1, 20), 2))
    assert len(configs) == 171
    lls = [_poisson_segment_ll(x[:a]) + _poisson_segment_ll(x[a:b]) + _poisson_segment_ll(x[b:]) for a, b in configs]
    assert abs(r.loglik - max(lls)) <= 1e-9
    assert r.change_points.boundaries == configs[int(np.argmax(lls))]


def test_no_change_points():
    x = np.random.default_rng(3).exponential(2.0, 40)
    r = fit(ModelSpec(0, (make_family("exponential"),)), Dataset(x))
    assert r.change_points.boundaries == ()
    assert r.params.thetas[0][0] == pytest.approx(1 / x.mean(), rel=1e-12)
    assert r.loglik == pytest.approx(np.sum(np.log(1 / x.mean()) - x / x.mean()), rel=1e-12)


def test_no_common_parameter_fit_is_fixed_psi_fit():
    x = np.random.default_rng(4).normal(0, 1, 50)
    x[20:] += 1.5
    spec = ModelSpec(2, (NORMAL,))
    a = fit(spec, Dataset(x), compute_info=False)
    b = fit_fixed_psi(spec, Dataset(x))
    assert a.change_points == b.change_points
    assert a.loglik == pytest.approx(b.loglik, abs=1e-10)
    assert a.diagnostics["iterations"] == 1


def test_common_variance_sanity_n200():
    rng = np.random.default_rng(20100601)
    x = np.concatenate([rng.normal(0, 1, 100), rng.normal(2, 1, 100)])
    r = fit(ModelSpec(1, (make_family("normal-common-var"),)), Dataset(x))
    se_var = math.sqrt(2.0 / 200)
    assert abs(r.params.psi[0] - 1.0) <= 5 * se_var
    assert abs(r.fractions[0] - 0.5) <= 0.05


def test_equal_data_ties_pick_smallest_boundaries():
    spec = ModelSpec(2, (NORMAL,))
    data = Dataset(np.full(8, 0.7))
    assert fit(spec, data, compute_info=False).change_points.boundaries == (1, 2)
    assert brute_force_fit(spec, data, compute_info=False).change_points.boundaries == (1, 2)


def test_exponential_n15_brute_force_equals_fit():
    rng = np.random.default_rng(5)
    x = np.concatenate([rng.exponential(1.0, 8), rng.exponential(0.2, 7)])
    spec = ModelSpec(1, (make_family("exponential"),))
    a = fit(spec, Dataset(x), compute_info=False)
    b = brute_force_fit(spec, Dataset(x), compute_info=False)
    assert a.change_points == b.change_points
    assert abs(a.loglik - b.loglik) <= 1e-9


def test_brute_force_with_psi_grid_never_beats_fit():
    rng = np.random.default_rng(6)
    x = np.concatenate([rng.normal(0, 1.3, 7), rng.normal(2, 1.3, 7)])
    spec = ModelSpec(1, (make_family("normal-common-var"),))
    a = fit(spec, Dataset(x), compute_info=False)
    grid = [[0.5], [1.0], [2.0], a.params.psi]
    b = brute_force_fit(spec, Dataset(x), grid, compute_info=False)
    assert b.loglik <= a.loglik + 1e-9
    assert b.loglik == pytest.approx(a.loglik, abs=1e-9)
    assert b.change_points == a.change_points


def test_mvn_brute_force_at_fitted_psi():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(12, 2))
    x[5:] += [3.0, -1.0]
    fam = make_family("mvn-common-cov", dim=2)
    spec = ModelSpec(1, (fam,))
    a = fit(spec, Dataset(x), compute_info=False)
    b = brute_force_fit(spec, Dataset(x), [a.params.psi], compute_info=False)
    assert b.change_points == a.change_points
    assert b.loglik == pytest.approx(a.loglik, abs=1e-9)
    # the common covariance is the pooled within-segment MLE
    resid = np.vstack([x[s:t] - x[s:t].mean(axis=0) for s, t in a.change_points.segments()])
    np.testing.assert_allclose(fam.covariance(a.params.psi), resid.T @ resid / 12, rtol=1e-8)


def test_brute_force_size_guard():
    with pytest.raises(SizeError):
        brute_force_fit(ModelSpec(4, (NORMAL,)), Dataset(np.zeros(200)))


def test_brute_force_needs_grid_with_common_parameter():
    with pytest.raises(ArgumentError):
        brute_force_fit(ModelSpec(1, (make_family("normal-common-var"),)), Dataset(np.arange(6.0)))


def test_infeasible_n():
    with pytest.raises(ArgumentError):
        fit(ModelSpec(3, (NORMAL,)), Dataset(np.zeros(3)))
    with pytest.raises(ArgumentError):
        fit_fixed_psi(ModelSpec(1, (NORMAL,)), Dataset(np.zeros(4)), min_segment_length=3)


def test_minimum_segment_length_respected():
    x = np.random.default_rng(8).normal(0, 1, 30)
    x[0] += 20
    r = fit(ModelSpec(1, (NORMAL,)), Dataset(x), min_segment_length=5, compute_info=False)
    assert min(r.change_points.lengths()) >= 5


def test_data_outside_family_support():
    spec = ModelSpec(1, (make_family("normal-known-var", variance=1.0), make_family("exponential")))
    x = np.array([-3.0, -2.0, 0.5, -1.0, 0.4, 0.9, 2.0])
    r = fit(spec, Dataset(x), compute_info=False)
    assert r.change_points.boundaries == (4,)
    assert np.isfinite(r.loglik)


def test_wrong_data_dimension():
    with pytest.raises(ArgumentError):
        fit(ModelSpec(1, (NORMAL,)), Dataset(np.zeros((10, 2))))


# -- properties ----------------------------------------------------------------------


@given(seed=st.integers(0, 2**32 - 1))
def test_dp_matches_enumeration(seed):
    spec, data = random_dp_instance(np.random.default_rng(seed), n_max=14, k_max=3)
    a = fit(spec, data, compute_info=False)
    b = brute_force_fit(spec, data, compute_info=False)
    assert abs(a.loglik - b.loglik) <= 1e-9
    assert a.change_points == b.change_points


@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 3))
def test_reversal_symmetry(seed, k):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4 * (k + 1), 80))
    cuts = np.sort(rng.choice(np.arange(1, n), size=k, replace=False))
    means = rng.normal(0, 3, k + 1)
    x = rng.normal(0, 1, n) + np.repeat(means, np.diff((0, *cuts, n)))
    spec = ModelSpec(k, (NORMAL,))
    fwd = fit_fixed_psi(spec, Dataset(x))
    bwd = fit_fixed_psi(spec, Dataset(x[::-1]))
    assert bwd.change_points == fwd.change_points.reversed()
    assert bwd.loglik == pytest.approx(fwd.loglik, abs=1e-8)


@given(seed=st.integers(0, 2**32 - 1), name=st.sampled_from(["normal-known-var", "exponential", "poisson"]))
def test_segment_cost_dominates_grid_theta(seed, name):
    rng = np.random.default_rng(seed)
    fam = make_family(name)
    n = 30
    if name == "normal-known-var":
        x = rng.normal(rng.uniform(-2, 2), 1, n)
    elif name == "exponential":
        x = rng.exponential(rng.uniform(0.3, 3), n)
    else:
        x = rng.poisson(rng.uniform(0.5, 6), n).astype(float)
    spec = ModelSpec(0, (fam,))
    data = Dataset(x)
    box = spec.resolve_box(data)
    table = SegmentCostTable(spec, data, np.zeros(0), box)
    lo, hi = box.theta_bounds(0)
    grid = np.linspace(lo[0], min(hi[0], lo[0] + 40), 2001)
    for _ in range(5):
        s, t = sorted(rng.choice(np.arange(0, n + 1), 2, replace=False))
        c = table.cost(0, int(s), int(t))
        seg = x[s:t, None]
        best = max(float(np.sum(fam.logpdf(seg, np.zeros(0), np.array([g])))) for g in grid)
        assert c >= best - 1e-9


def test_profile_trace_is_monotone():
    rng = np.random.default_rng(9)
    x = np.concatenate([rng.normal(0, 2, 40), rng.normal(3, 2, 30), rng.normal(-1, 2, 30)])
    r = fit(ModelSpec(2, (make_family("normal-common-var"),)), Dataset(x), psi_starts=[[0.5], [10.0]])
    trace = r.diagnostics["trace"]
    assert len(trace) >= 2
    assert all(b >= a - 1e-9 * (1 + abs(a)) for a, b in zip(trace, trace[1:]))
    assert r.diagnostics["starts"] == 3


def test_fit_result_invariants():
    rng = np.random.default_rng(10)
    x = np.concatenate([rng.normal(0, 1, 60), rng.normal(1.5, 1, 60)])
    spec = ModelSpec(1, (make_family("normal-common-var"),))
    data = Dataset(x)
    r = fit(spec, data)
    assert r.loglik == pytest.approx(full_loglik(spec, data, r.change_points, r.params), abs=1e-10)
    info = r.info_matrix
    np.testing.assert_array_equal(info, info.T)
    assert np.linalg.eigvalsh(info).min() >= -1e-8
    assert r.std_errors.shape == (3,)
    d = r.to_dict()
    assert d["change_points"] == list(r.change_points.boundaries)
    assert list(d)[:3] == ["change_points", "n", "fractions"]


def test_boundary_flag_reported():
    box = ParameterBox(None, None, (np.array([-1.0]), np.array([-1.0])), (np.array([0.5]), np.array([0.5])))
    spec = ModelSpec(1, (NORMAL,), box)
    x = np.concatenate([np.zeros(10), np.full(10, 3.0)])
    r = fit(spec, Dataset(x), compute_info=False)
    assert r.diagnostics["boundary_flags"]


def test_indistinct_neighbors_flagged():
    spec = ModelSpec(1, (NORMAL,))
    r = fit(spec, Dataset(np.full(10, 0.3)), compute_info=False)
    assert r.diagnostics["indistinct_neighbors"]


# -- backends ---------------------------------------------------------------------------


def test_kernel_backends_agree(rng):
    backends = kernels.available_backends()
    fams = [
        (make_family("normal-known-var", variance=2.0), rng.normal(0, 2, 60)),
        (make_family("exponential"), rng.exponential(1.0, 60)),
        (make_family("poisson"), rng.poisson(3.0, 60).astype(float)),
    ]
    for fam, x in fams:
        x = x[:, None]
        lo, hi = fam.default_theta_box(x)
        ps = fam.kernel_stats(x, np.zeros(0), lo, hi).prefix()
        s, t = np.triu_indices(61, 1)
        ref = kernels.interval_costs(ps, s, t, backend="python")
        next_E = rng.normal(0, 5, 61)
        ref_sm = kernels.suffix_max(ps, next_E, 1, 50, 60, 2, backend="python")
        for b in backends:
            np.testing.assert_allclose(kernels.interval_costs(ps, s, t, backend=b), ref, rtol=1e-13, atol=1e-10)
            np.testing.assert_allclose(kernels.suffix_max(ps, next_E, 1, 50, 60, 2, backend=b), ref_sm, rtol=1e-13, atol=1e-10)


def test_fit_identical_across_backends(backend):
    rng = np.random.default_rng(11)
    x = np.concatenate([rng.normal(0, 1, 70), rng.normal(2, 1, 50), rng.normal(-1, 1, 80)])
    spec = ModelSpec(2, (make_family("normal-common-var"),))
    ref = fit(spec, Dataset(x), backend="python", compute_info=False)
    got = fit(spec, Dataset(x), backend=backend, compute_info=False)
    assert got.change_points == ref.change_points
    assert got.loglik == pytest.approx(ref.loglik, abs=1e-9)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
