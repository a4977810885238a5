"""Log-likelihood, the divergence functional v, overlaps and the J decomposition."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from multicp import (
    ArgumentError,
    ChangePointConfig,
    Dataset,
    ModelSpec,
    ParameterState,
    full_loglik,
    j1,
    j2,
    j2_regrouped,
    kl_v,
    log_density,
    make_family,
    overlap_counts,
)
from multicp.families import fit_theta
from multicp.likelihood import j_direct, kl_v_detailed, kl_v_quadrature
from multicp.verification import UNIVARIATE, random_j_instance, random_kl_pair

NORMAL = make_family("normal-known-var", variance=1.0)


def _normal_spec(k):
    return ModelSpec(k, (NORMAL,))


# -- full log-likelihood ---------------------------------------------------------


def test_single_segment_is_iid_loglik(rng):
    fam = make_family("exponential")
    x = rng.exponential(2.0, 30)
    spec = ModelSpec(0, (fam,))
    params = ParameterState([], ([0.7],))
    got = full_loglik(spec, Dataset(x), ChangePointConfig((), 30), params)
    assert got == pytest.approx(np.sum(np.log(0.7) - 0.7 * x), abs=1e-12)


def test_zero_residuals():
    spec = _normal_spec(1)
    params = ParameterState([], ([0.0], [1.0]))
    got = full_loglik(spec, Dataset([0.0, 0.0, 1.0, 1.0]), ChangePointConfig((2,), 4), params)
    assert got == pytest.approx(-4 * 0.5 * math.log(2 * math.pi), abs=1e-14)


@given(seed=st.integers(0, 2**32 - 1))
def test_matches_per_observation_sum(seed):
    spec, data, cps, params, _, _ = random_j_instance(np.random.default_rng(seed))
    naive = 0.0
    for j, (s, t) in enumerate(cps.segments()):
        fam = spec.families[j]
        psi = params.psi if fam.psi_dim else []
        for i in range(s, t):
            naive += log_density(fam, psi, params.thetas[j], float(data.values[i, 0]))
    assert full_loglik(spec, data, cps, params) == pytest.approx(naive, abs=1e-12 * max(1.0, abs(naive)))


def test_domain_error_names_segment():
    spec = ModelSpec(1, (make_family("normal-known-var", variance=1.0), make_family("exponential")))
    params = ParameterState([], ([0.0], [1.0]))
    with pytest.raises(Exception) as info:
        full_loglik(spec, Dataset([0.0, -1.0, -2.0]), ChangePointConfig((1,), 3), params)
    assert "segment 2" in str(info.value)


# -- v -----------------------------------------------------------------------------


def test_v_identical_is_exactly_zero():
    assert kl_v(NORMAL, [], [0.3], NORMAL, [], [0.3]) == 0.0
    fam = make_family("poisson")
    assert kl_v(fam, [], [2.5], fam, [], [2.5]) == 0.0


def test_v_unit_normals():
    closed = kl_v(NORMAL, [], [1.0], NORMAL, [], [0.0])
    assert closed == pytest.approx(-0.5, abs=1e-15)
    assert abs(closed - kl_v_quadrature(NORMAL, [], [1.0], NORMAL, [], [0.0])) <= 1e-8


def test_v_exponential_rates():
    fam = make_family("exponential")
    closed = kl_v(fam, [], [2.0], fam, [], [1.0])
    assert closed == pytest.approx(math.log(2) - 1, abs=1e-15)
    assert abs(closed - kl_v_quadrature(fam, [], [2.0], fam, [], [1.0])) <= 1e-8


@pytest.mark.parametrize("name", UNIVARIATE)
def test_v_closed_form_agrees_with_quadrature(name):
    for p in range(20):
        fam, psi, th, psi0, th0 = random_kl_pair(name, np.random.default_rng(p))
        closed = kl_v(fam, psi, th, fam, psi0, th0)
        assert abs(closed - kl_v_quadrature(fam, psi, th, fam, psi0, th0)) <= 1e-8


def test_v_mixed_families_by_quadrature():
    # normal candidate against an exponential truth has no built-in closed form
    normal = make_family("normal-common-var")
    expo = make_family("exponential")
    r = kl_v_detailed(normal, [2.0], [1.0], expo, [], [1.0])
    assert r.value < 0
    # direct check: E[log N(x; 1, 2)] - E[log Exp(x; 1)] with E[X]=1, E[X^2]=2
    want = -0.5 * math.log(2 * math.pi * 2.0) - (2 - 2 + 1) / 4.0 - (-1.0)
    assert r.value == pytest.approx(want, abs=1e-8)


def test_v_multivariate_monte_carlo_reports_error():
    fam = make_family("mvn-common-cov", dim=2)
    psi = fam.pack(np.eye(2))
    r = kl_v_detailed(fam, psi, [1.0, 0.0], fam, psi, [0.0, 0.0], method="mc")
    assert r.stderr > 0
    assert abs(r.value + 0.5) <= 5 * r.stderr
    assert kl_v(fam, psi, [1.0, 0.0], fam, psi, [0.0, 0.0]) == pytest.approx(-0.5, abs=1e-12)


def test_v_continuous_against_discrete_truth_is_rejected():
    with pytest.raises(Exception):
        kl_v(NORMAL, [], [0.0], make_family("poisson"), [], [1.0])


@given(seed=st.integers(0, 2**32 - 1), name=st.sampled_from(UNIVARIATE))
def test_v_nonpositive(seed, name):
    fam, psi, th, psi0, th0 = random_kl_pair(name, np.random.default_rng(seed))
    assert kl_v(fam, psi, th, fam, psi0, th0) <= 1e-12


@given(
    seed=st.integers(0, 2**32 - 1),
    name=st.sampled_from(UNIVARIATE),
    delta=st.floats(0.1, 1.0),
    sign=st.sampled_from([-1.0, 1.0]),
)
def test_v_strictly_negative_after_perturbation(seed, name, delta, sign):
    fam, psi, _, psi0, th0 = random_kl_pair(name, np.random.default_rng(seed))
    th = th0 + sign * delta
    if fam.family_id in ("exponential", "poisson") and th[0] <= 0:
        th = th0 + delta
    psi = psi0
    assert kl_v(fam, psi, th, fam, psi0, th0) < -1e-6


# -- overlaps ------------------------------------------------------------------------


def test_overlap_identity_configuration():
    cps = ChangePointConfig((3, 7), 10)
    np.testing.assert_array_equal(overlap_counts(10, cps, cps).counts, np.diag([3, 4, 3]))


def test_overlap_example():
    c = overlap_counts(10, ChangePointConfig((4,), 10), ChangePointConfig((6,), 10))
    np.testing.assert_array_equal(c.counts, [[4, 0], [2, 4]])


def test_overlap_mismatched_n():
    with pytest.raises(ArgumentError):
        overlap_counts(10, ChangePointConfig((4,), 10), ChangePointConfig((6,), 12))


@st.composite
def config_pairs(draw):
    n = draw(st.integers(2, 60))
    k = draw(st.integers(0, min(4, n - 1)))
    a = sorted(draw(st.sets(st.integers(1, n - 1), min_size=k, max_size=k)))
    b = sorted(draw(st.sets(st.integers(1, n - 1), min_size=k, max_size=k)))
    return n, ChangePointConfig(tuple(a), n), ChangePointConfig(tuple(b), n)


@given(config_pairs())
def test_overlap_marginals(pair):
    n, a, b = pair
    c = overlap_counts(n, a, b).counts
    assert np.all(c >= 0)
    np.testing.assert_array_equal(c.sum(axis=1), a.lengths())
    np.testing.assert_array_equal(c.sum(axis=0), b.lengths())
    assert c.sum() == n
    # brute-force cell count over indices 1..n
    edges_a, edges_b = a.edges, b.edges
    for j in range(a.k + 1):
        for i in range(b.k + 1):
            count = sum(
                1 for idx in range(1, n + 1)
                if edges_a[j] < idx <= edges_a[j + 1] and edges_b[i] < idx <= edges_b[i + 1]
            )
            assert c[j, i] == count


# -- J functional -------------------------------------------------------------------


def test_j1_vanishes_at_truth():
    spec = _normal_spec(1)
    truth = ParameterState([], ([0.0], [1.0]))
    cps = ChangePointConfig((5,), 10)
    assert j1(spec, cps, truth, truth, cps) == 0.0


def test_j1_hand_example():
    # candidate segment 1 holds all of true segment 1 (5 obs) plus 5 obs of true segment 2;
    # candidate segment 2 holds the remaining 10 obs of true segment 2
    spec = _normal_spec(1)
    truth = ParameterState([], ([0.0], [1.0]))
    cand = ParameterState([], ([0.0], [1.0]))
    cps, tcps = ChangePointConfig((10,), 20), ChangePointConfig((5,), 20)
    # weights: (5/20)*0 + (5/20)*(-0.5) + (10/20)*0 = -0.125
    assert j1(spec, cps, cand, truth, tcps) == pytest.approx(-0.125, abs=1e-15)
    # the 50/50 overlap with v values -0.5 and 0 gives -0.25
    cand2 = ParameterState([], ([1.0], [1.0]))
    cps2, tcps2 = ChangePointConfig((10,), 20), ChangePointConfig((10,), 20)
    assert j1(spec, cps2, cand2, truth, tcps2) == pytest.approx(-0.25, abs=1e-15)


@given(seed=st.integers(0, 2**32 - 1))
def test_j1_nonpositive(seed):
    spec, _, cps, cand, tcps, truth = random_j_instance(np.random.default_rng(seed))
    assert j1(spec, cps, cand, truth, tcps) <= 1e-10


def test_j2_vanishes_at_truth(rng):
    spec, data, _, _, tcps, truth = random_j_instance(rng)
    assert j2(spec, data, tcps, truth, tcps, truth) == pytest.approx(0.0, abs=1e-12)


@given(seed=st.integers(0, 2**32 - 1))
def test_j_identity(seed):
    spec, data, cps, cand, tcps, truth = random_j_instance(np.random.default_rng(seed))
    J1 = j1(spec, cps, cand, truth, tcps)
    J2 = j2(spec, data, cps, cand, tcps, truth)
    direct = (full_loglik(spec, data, cps, cand) - full_loglik(spec, data, tcps, truth)) / data.n
    assert abs(J1 + J2 - direct) <= 1e-10
    assert j_direct(spec, data, cps, cand, tcps, truth) == direct


@given(seed=st.integers(0, 2**32 - 1))
def test_j2_regrouping(seed):
    spec, data, cps, cand, tcps, truth = random_j_instance(np.random.default_rng(seed))
    assert abs(j2(spec, data, cps, cand, tcps, truth) - j2_regrouped(spec, data, cps, cand, tcps, truth)) <= 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_argmax_equivalence_on_tiny_instances(seed):
    """The likelihood maximizer and the maximizer of J coincide under full enumeration."""
    rng = np.random.default_rng(seed)
    n, k = 10, 2
    spec = ModelSpec(k, (make_family("exponential"),))
    truth = ParameterState([], ([0.5], [3.0], [1.0]))
    tcps = ChangePointConfig((3, 7), n)
    x = np.concatenate([rng.exponential(1 / th[0], t - s) for (s, t), th in zip(tcps.segments(), truth.thetas)])
    data = Dataset(x)
    lo, hi = np.array([1e-3]), np.array([50.0])
    best_ll, best_J = (-np.inf, None), (-np.inf, None)
    for bounds in itertools.combinations(range(1, n), k):
        cps = ChangePointConfig(bounds, n)
        thetas = tuple(fit_theta(spec.families[j], np.zeros(0), data.slice(s, t), lo, hi)[0] for j, (s, t) in enumerate(cps.segments()))
        params = ParameterState([], thetas)
        ll = full_loglik(spec, data, cps, params)
        J = j1(spec, cps, params, truth, tcps) + j2(spec, data, cps, params, tcps, truth)
        if ll > best_ll[0] + 1e-12:
            best_ll = (ll, bounds)
        if J > best_J[0] + 1e-12 / n:
            best_J = (J, bounds)
    assert best_ll[1] == best_J[1]
