"""Separation constants and the random-probe check of the J1 bound."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multicp import (
    ArgumentError,
    ChangePointConfig,
    IdentifiabilityError,
    LemmaCheckError,
    ModelSpec,
    ParameterBox,
    ParameterState,
    make_family,
)
from multicp.lemma import (
    LemmaInstance,
    LemmaOneConstants,
    box_sup,
    delta_lambda,
    lemma1_check,
    lemma1_constants,
    two_segment_normal_benchmark,
)

NORMAL = make_family("normal-known-var", variance=1.0)


def _normal_instance(means, fractions, lo, hi, n=200):
    K = len(means)
    box = ParameterBox(None, None, tuple(np.array([lo]) for _ in range(K)), tuple(np.array([hi]) for _ in range(K)))
    spec = ModelSpec(K - 1, (NORMAL,), box)
    truth = ParameterState([], tuple(np.array([m]) for m in means))
    return LemmaInstance(spec, truth, tuple(fractions), n)


def test_delta_convention():
    assert delta_lambda([0.5]) == 0.5
    assert delta_lambda([0.25, 0.5, 0.75]) == 0.25
    assert delta_lambda([0.2, 0.4, 0.7]) == pytest.approx(0.2)


def test_benchmark_constants_match_closed_form():
    inst = two_segment_normal_benchmark()
    c = lemma1_constants(inst.spec, inst.true_params, inst.true_fractions)
    # midpoint candidate: averaged v = -(1/2)^2 / 2, so G = 2 * (-1/8)
    assert c.delta_lambda0 == 0.5
    assert c.G_bar == pytest.approx(-0.25, abs=1e-9)
    # sup of (theta - theta0)^2 / 2 over [-3, 4] is 8 for both segments
    assert c.rho_sup == pytest.approx(8.0, abs=1e-9)
    assert c.C1 == pytest.approx(0.25**2 * 0.25 / 2, abs=1e-12)
    assert c.C2 == pytest.approx(min(0.25**2 * 0.25 / 16, 0.25), abs=1e-12)
    assert c.C1 > 0 and c.C2 > 0
    assert set(c.to_dict()) >= {"delta_lambda0", "G_bar", "rho_sup", "C1", "C2"}


def test_three_change_points():
    inst = _normal_instance([0.0, 1.0, 3.0, 4.0], [0.25, 0.5, 0.75], -2.0, 6.0)
    c = lemma1_constants(inst.spec, inst.true_params, inst.true_fractions)
    assert c.delta_lambda0 == 0.25
    np.testing.assert_allclose(c.G, [-0.25, -1.0, -0.25], atol=1e-9)
    assert c.G_bar == pytest.approx(-0.25, abs=1e-9)
    assert c.rho_sup == pytest.approx(18.0, abs=1e-9)


@settings(max_examples=20)
@given(shift=st.floats(0.2, 3.0), frac=st.floats(0.1, 0.9))
def test_g_bar_closed_form(shift, frac):
    inst = _normal_instance([0.0, shift], [frac], -4.0, 5.0)
    c = lemma1_constants(inst.spec, inst.true_params, inst.true_fractions, search_grid=10)
    assert c.G_bar == pytest.approx(-(shift**2) / 4, rel=1e-6)
    assert c.G_bar < 0


def test_equal_neighbours_are_not_identifiable():
    inst = _normal_instance([1.0, 1.0], [0.5], -3.0, 4.0)
    with pytest.raises(IdentifiabilityError):
        lemma1_constants(inst.spec, inst.true_params, inst.true_fractions)


def test_needs_k_and_box():
    with pytest.raises(ArgumentError):
        lemma1_constants(ModelSpec(0, (NORMAL,)), ParameterState([], ([0.0],)), [])
    with pytest.raises(ArgumentError):
        lemma1_constants(ModelSpec(1, (NORMAL,)), ParameterState([], ([0.0], [1.0])), [0.5])


def test_box_sup_finds_corner_and_interior():
    lo, hi = np.array([-1.0, -1.0]), np.array([1.0, 2.0])
    val, x = box_sup(lambda z: -((z[0] - 0.3) ** 2) - (z[1] + 0.2) ** 2, lo, hi)
    assert val == pytest.approx(0.0, abs=1e-8)
    np.testing.assert_allclose(x, [0.3, -0.2], atol=1e-4)
    val, x = box_sup(lambda z: z[0] + z[1], lo, hi)
    assert val == pytest.approx(3.0, abs=1e-9)


# -- probe check -------------------------------------------------------------------


def test_truth_holds_with_equality():
    inst = two_segment_normal_benchmark()
    c = lemma1_constants(inst.spec, inst.true_params, inst.true_fractions)
    rep = lemma1_check(inst.spec, inst, c, probe_count=1)
    assert rep.passed
    assert rep.worst_probe["J1"] == 0.0
    assert rep.worst_probe["bound"] == 0.0
    assert rep.worst_slack == pytest.approx(1e-9)


def test_benchmark_probes_have_no_violations():
    inst = two_segment_normal_benchmark()
    c = lemma1_constants(inst.spec, inst.true_params, inst.true_fractions)
    rep = lemma1_check(inst.spec, inst, c, probe_count=2000, seed=5)
    assert rep.passed and rep.probes == 2000
    assert rep.worst_slack >= 0


def test_common_variance_instance():
    fam = make_family("normal-common-var")
    box = ParameterBox(np.array([0.5]), np.array([2.0]), (np.array([-2.0]),) * 2, (np.array([3.0]),) * 2)
    spec = ModelSpec(1, (fam,), box)
    inst = LemmaInstance(spec, ParameterState([1.0], ([0.0], [1.5])), (0.3,), 100)
    c = lemma1_constants(spec, inst.true_params, inst.true_fractions, search_grid=12)
    assert c.delta_lambda0 == pytest.approx(0.3)
    assert c.G_bar < 0
    rep = lemma1_check(spec, inst, c, probe_count=500, seed=1)
    assert rep.passed


def test_inflated_constant_is_caught():
    inst = two_segment_normal_benchmark()
    c = lemma1_constants(inst.spec, inst.true_params, inst.true_fractions)
    bad = LemmaOneConstants(c.delta_lambda0, c.G_bar, c.rho_sup, 1000 * c.C1, c.C2)
    with pytest.raises(LemmaCheckError) as info:
        lemma1_check(inst.spec, inst, bad, probe_count=200)
    assert "boundaries" in str(info.value)
    assert info.value.probe["slack"] < 0
    rep = lemma1_check(inst.spec, inst, bad, probe_count=200, raise_on_violation=False)
    assert not rep.passed and rep.violations


def test_probe_count_validation():
    inst = two_segment_normal_benchmark()
    c = lemma1_constants(inst.spec, inst.true_params, inst.true_fractions)
    with pytest.raises(ArgumentError):
        lemma1_check(inst.spec, inst, c, probe_count=0)


def test_instance_validation():
    with pytest.raises(ArgumentError):
        _normal_instance([0.0, 1.0, 2.0], [0.7, 0.2], -1.0, 3.0)
    inst = two_segment_normal_benchmark(n=50)
    assert inst.true_cps == ChangePointConfig((25,), 50)
