"""Segment families: densities, scores, inner maximizers and samplers."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, optimize, stats

from multicp import (
    DomainError,
    ParameterError,
    grad_log_density,
    log_density,
    make_family,
    sample,
    segment_mle_theta,
)
from multicp.families import FAMILY_NAMES, fit_theta

LOG_2PI = math.log(2 * math.pi)


def _random_point(name, rng):
    """(family, psi, theta, x) with x drawn from the family at (psi, theta)."""
    if name == "normal-known-var":
        fam = make_family(name, variance=float(rng.uniform(0.3, 3.0)))
        psi, theta = np.zeros(0), rng.uniform(-3, 3, 1)
    elif name == "normal-common-var":
        fam = make_family(name)
        psi, theta = rng.uniform(0.3, 3.0, 1), rng.uniform(-3, 3, 1)
    elif name == "exponential":
        fam = make_family(name)
        psi, theta = np.zeros(0), rng.uniform(0.2, 4.0, 1)
    elif name == "poisson":
        fam = make_family(name)
        psi, theta = np.zeros(0), rng.uniform(0.5, 20.0, 1)
    else:
        fam = make_family(name, dim=3)
        L = np.tril(rng.normal(0, 0.3, (3, 3)))
        L[np.diag_indices(3)] = rng.uniform(0.5, 2.0, 3)
        psi, theta = fam.pack(L), rng.normal(0, 2, 3)
    x = fam.sample(psi, theta, 1, rng)[0]
    if fam.obs_dim == 1:
        x = float(x[0])
    return fam, psi, theta, x


# -- log_density ----------------------------------------------------------------


def test_standard_normal_at_mode():
    fam = make_family("normal-known-var", variance=1.0)
    assert log_density(fam, [], [0.0], 0.0) == pytest.approx(-0.5 * LOG_2PI, abs=1e-15)


def test_unit_exponential_at_zero():
    assert log_density(make_family("exponential"), [], [1.0], 0.0) == 0.0


def test_bivariate_standard_normal_at_origin():
    fam = make_family("mvn-common-cov", dim=2)
    psi = fam.pack(np.eye(2))
    assert log_density(fam, psi, [0.0, 0.0], [0.0, 0.0]) == pytest.approx(-LOG_2PI, abs=1e-14)


def test_mvn_matches_scipy(rng):
    fam = make_family("mvn-common-cov", dim=3)
    L = np.tril(rng.normal(0, 0.4, (3, 3)))
    L[np.diag_indices(3)] = [1.0, 0.7, 1.5]
    mu = rng.normal(size=3)
    x = rng.normal(size=(6, 3))
    got = log_density(fam, fam.pack(L), mu, x)
    want = stats.multivariate_normal(mu, L @ L.T).logpdf(x)
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_out_of_support_names_family_and_index():
    fam = make_family("exponential")
    with pytest.raises(DomainError) as info:
        log_density(fam, [], [1.0], np.array([0.5, 1.0, -2.0]))
    assert "exponential" in str(info.value)
    assert info.value.index == 2


def test_poisson_rejects_non_integer():
    with pytest.raises(DomainError):
        log_density(make_family("poisson"), [], [3.0], 1.5)


def test_out_of_box_parameter():
    fam = make_family("normal-known-var", variance=1.0)
    with pytest.raises(ParameterError):
        log_density(fam, [], [5.0], 0.0, theta_box=(np.array([-1.0]), np.array([1.0])))


def test_invalid_parameter():
    with pytest.raises(ParameterError):
        log_density(make_family("exponential"), [], [-1.0], 1.0)
    with pytest.raises(ParameterError):
        log_density(make_family("normal-common-var"), [-1.0], [0.0], 1.0)


def test_unknown_family():
    with pytest.raises(ParameterError):
        make_family("cauchy")


# -- gradients -----------------------------------------------------------------


def test_normal_score():
    fam = make_family("normal-known-var", variance=1.0)
    np.testing.assert_allclose(grad_log_density(fam, [], [0.0], 1.0), [1.0])


def test_exponential_score():
    np.testing.assert_allclose(grad_log_density(make_family("exponential"), [], [2.0], 1.0), [-0.5])


def _central_difference(fam, psi, theta, x, h=1e-5):
    phi = np.concatenate([np.atleast_1d(psi), np.atleast_1d(theta)]).astype(float)
    d = fam.psi_dim
    out = np.empty(phi.size)
    for c in range(phi.size):
        step = h * (1 + abs(phi[c]))
        up, dn = phi.copy(), phi.copy()
        up[c] += step
        dn[c] -= step
        f_up = log_density(fam, up[:d], up[d:], x)
        f_dn = log_density(fam, dn[:d], dn[d:], x)
        out[c] = (f_up - f_dn) / (2 * step)
    return out


@pytest.mark.parametrize("name", FAMILY_NAMES)
def test_gradient_matches_finite_differences(name, rng):
    for _ in range(5):
        fam, psi, theta, x = _random_point(name, rng)
        g = grad_log_density(fam, psi, theta, x)
        fd = _central_difference(fam, psi, theta, x)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-6 * max(1.0, np.max(np.abs(g))))


@given(seed=st.integers(0, 2**32 - 1), name=st.sampled_from(FAMILY_NAMES))
def test_gradient_property(seed, name):
    fam, psi, theta, x = _random_point(name, np.random.default_rng(seed))
    g = grad_log_density(fam, psi, theta, x)
    fd = _central_difference(fam, psi, theta, x)
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-6 * max(1.0, np.max(np.abs(g))))


# -- inner maximizer ------------------------------------------------------------


def test_segment_mle_normal_mean():
    th, _ = segment_mle_theta(make_family("normal-common-var"), [1.0], np.array([1.0, 3.0]))
    np.testing.assert_allclose(th, [2.0])


def test_segment_mle_exponential_rate():
    th, ll = segment_mle_theta(make_family("exponential"), [], np.array([0.5, 1.5]))
    np.testing.assert_allclose(th, [1.0])
    assert ll == pytest.approx(-2.0)


def test_segment_mle_poisson_against_grid(rng):
    fam = make_family("poisson")
    x = rng.poisson(4.2, 10).astype(float)
    lo, hi = fam.default_theta_box(x[:, None])
    th, ll = segment_mle_theta(fam, [], x, lo, hi)
    grid = np.arange(max(lo[0], 1e-4), min(hi[0], 30.0), 1e-4)
    ll_grid = stats.poisson.logpmf(x[:, None], grid[None, :]).sum(axis=0)
    assert abs(ll - ll_grid.max()) <= 1e-6
    assert ll >= ll_grid.max() - 1e-12


def test_segment_mle_clamps_to_box():
    fam = make_family("normal-known-var", variance=1.0)
    th, _ = segment_mle_theta(fam, [], np.array([5.0, 6.0]), np.array([-1.0]), np.array([1.0]))
    np.testing.assert_allclose(th, [1.0])


def test_segment_mle_empty_slice():
    with pytest.raises(ParameterError):
        segment_mle_theta(make_family("exponential"), [], np.zeros(0))


@given(seed=st.integers(0, 2**32 - 1), name=st.sampled_from(["exponential", "poisson", "normal-common-var"]))
def test_segment_mle_is_stationary_or_on_boundary(seed, name):
    rng = np.random.default_rng(seed)
    fam, psi, theta, _ = _random_point(name, rng)
    m = int(rng.integers(1, 30))
    x = fam.sample(psi, theta, m, rng)
    lo, hi = fam.default_theta_box(x)
    th, ll = fit_theta(fam, psi, x, lo, hi)
    if not np.isfinite(ll):
        return
    g = np.sum(fam.grad(x, psi, th)[:, fam.psi_dim :], axis=0)
    interior = np.all(th > lo) and np.all(th < hi)
    if interior:
        assert np.linalg.norm(g) <= 1e-8 * (1 + abs(ll))
    else:
        # on the boundary the gradient must point out of the box
        assert np.all((th > lo) | (g <= 1e-8)) and np.all((th < hi) | (g >= -1e-8))


# -- densities integrate to one -------------------------------------------------


@pytest.mark.parametrize("name", ["normal-known-var", "normal-common-var", "exponential"])
def test_density_integrates_to_one(name, rng):
    for _ in range(3):
        fam, psi, theta, _ = _random_point(name, rng)
        lo, hi = fam.quad_bounds(psi, theta)
        total, _ = integrate.quad(lambda t: math.exp(log_density(fam, psi, theta, t)), lo, hi, epsabs=1e-10, limit=200)
        assert total == pytest.approx(1.0, abs=1e-6)


def test_poisson_mass_sums_to_one(rng):
    fam = make_family("poisson")
    for mu in rng.uniform(0.5, 40, 3):
        ks = np.arange(0, 400, dtype=float)
        assert np.exp(log_density(fam, [], [mu], ks)).sum() == pytest.approx(1.0, abs=1e-10)


# -- sampling -------------------------------------------------------------------


def test_normal_sample_mean_band():
    x = sample(make_family("normal-known-var", variance=1.0), [], [0.0], 100_000, 42)
    assert abs(x.mean()) <= 4 / math.sqrt(1e5)


def test_exponential_sample_mean_band():
    x = sample(make_family("exponential"), [], [1.0], 100_000, 42)
    assert 0.99 <= x.mean() <= 1.01


@pytest.mark.parametrize("name", FAMILY_NAMES)
def test_sampling_is_deterministic(name):
    fam, psi, theta, _ = _random_point(name, np.random.default_rng(3))
    a = sample(fam, psi, theta, 50, 99)
    b = sample(fam, psi, theta, 50, 99)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample(fam, psi, theta, 50, 100))


def test_sample_count_must_be_positive():
    with pytest.raises(ParameterError):
        sample(make_family("exponential"), [], [1.0], 0, 1)


@pytest.mark.parametrize("name", ["normal-known-var", "normal-common-var", "exponential", "poisson"])
def test_sample_then_fit_round_trip(name):
    rng = np.random.default_rng(2024)
    fam, psi, theta, _ = _random_point(name, rng)
    x = sample(fam, psi, theta, 100_000, 7)
    th, _ = segment_mle_theta(fam, psi, x)
    # asymptotic standard error from the per-observation Fisher information
    g = fam.grad(x, psi, theta)[:, fam.psi_dim :]
    se = 1.0 / math.sqrt(float(np.mean(g[:, 0] ** 2)) * x.shape[0])
    assert abs(th[0] - theta[0]) <= 5 * se


def test_mvn_round_trip():
    fam = make_family("mvn-common-cov", dim=2)
    L = np.array([[1.0, 0.0], [0.5, 0.8]])
    mu = np.array([1.0, -2.0])
    x = sample(fam, fam.pack(L), mu, 100_000, 11)
    th, _ = segment_mle_theta(fam, fam.pack(L), x)
    se = np.sqrt(np.diag(L @ L.T) / x.shape[0])
    assert np.all(np.abs(th - mu) <= 5 * se)
