"""Model description grammar and scenario files."""

import json

import numpy as np
import pytest

from multicp.modelfile import (
    BUNDLED_SCENARIOS,
    ModelFileError,
    build_spec,
    describe_spec,
    load_model,
    load_scenario,
    parse_model_text,
    parse_scenario,
)

FULL = """
# three segments, the last one exponential
k = 2
family = normal-known-var
family.3 = exponential
variance = 2.0      # all normal segments
variance.2 = 0.5
box.theta.lower = -10
box.theta.upper = 10
box.theta.3.lower = 0.01
box.theta.3.upper = 50
"""


def test_full_grammar():
    spec = build_spec(parse_model_text(FULL))
    assert spec.k == 2
    assert [f.family_id for f in spec.families] == ["normal-known-var", "normal-known-var", "exponential"]
    assert spec.families[0].variance(None) == 2.0
    assert spec.families[1].variance(None) == 0.5
    np.testing.assert_array_equal(spec.box.theta_lower[2], [0.01])
    np.testing.assert_array_equal(spec.box.theta_upper[0], [10.0])
    assert describe_spec(spec)["k"] == 2


def test_common_variance_with_psi_role_and_box():
    text = "k=1\nfamily=normal-common-var\npsi=variance\nbox.psi.lower=0.1\nbox.psi.upper=10\n"
    spec = build_spec(parse_model_text(text))
    assert spec.common_dim == 1
    np.testing.assert_array_equal(spec.box.psi_upper, [10.0])


def test_mvn_dimension_from_data():
    spec = load_model("mvn-common-cov", k=5, data_dim=5)
    assert spec.common_dim == 15
    assert spec.families[0].theta_dim == 5


def test_k_override():
    assert build_spec({"k": "3", "family": "poisson"}, k=1).k == 1


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("k = 1\nfamily normal-known-var\n", "line 2"),
        ("k = 1\nk = 2\nfamily = poisson\n", "duplicate"),
        ("k = 1\nfamily = cauchy\n", "unknown family"),
        ("k = one\nfamily = poisson\n", "integer"),
        ("k = 1\nfamily = poisson\ncolour = red\n", "unknown key"),
        ("k = 1\nfamily = poisson\nfamily.3 = poisson\n", "segment index"),
        ("k = 1\nfamily = normal-common-var\npsi = mean\n", "psi role"),
        ("k = 1\nfamily = poisson\nbox.theta.lower = 5\nbox.theta.upper = 1\n", "lower < upper"),
        ("k = 1\nfamily = poisson\nbox.theta.middle = 1\n", "box key"),
        ("family = poisson\n", "missing 'k'"),
        ("k = 1\nfamily = mvn-common-cov\n", "dim"),
    ],
)
def test_grammar_errors(text, fragment):
    with pytest.raises(ModelFileError, match=fragment):
        build_spec(parse_model_text(text))


def test_error_carries_line_number():
    with pytest.raises(ModelFileError) as info:
        parse_model_text("k = 1\n\n= 3\n")
    assert info.value.line == 3


def test_model_file_on_disk(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text(FULL, encoding="utf-8")
    assert load_model(str(p)).k == 2
    assert load_model(str(p), k=3).k == 3
    # a per-segment key beyond the overridden segment count is rejected
    with pytest.raises(ModelFileError, match="segment index"):
        load_model(str(p), k=0)


def test_bare_family_needs_k():
    with pytest.raises(ModelFileError):
        load_model("poisson")
    with pytest.raises(ModelFileError):
        load_model("no-such-file-or-family")


def test_bundled_scenario():
    assert "normal-shift-small" in BUNDLED_SCENARIOS
    sf = load_scenario("normal-shift-small")
    assert sf.spec.k == 1 and sf.spec.common_dim == 1
    assert sf.fractions == (0.5,)
    np.testing.assert_array_equal(sf.truth.thetas[1], [2.0])


def test_scenario_file(tmp_path):
    obj = {
        "name": "pois",
        "model": {"k": 1, "family": "poisson"},
        "truth": {"thetas": [[1.0], [4.0]]},
        "fractions": [0.3],
        "sizes": [50, 100],
        "reps": 5,
        "seed": 3,
    }
    p = tmp_path / "s.json"
    p.write_text(json.dumps(obj), encoding="utf-8")
    sf = load_scenario(str(p))
    assert sf.name == "pois" and sf.sizes == (50, 100) and sf.reps == 5


@pytest.mark.parametrize(
    "obj",
    [
        [],
        {"model": {"k": 1, "family": "poisson"}},
        {"model": {"k": 1, "family": "poisson"}, "truth": {"thetas": [[1.0]]}, "fractions": [0.5], "sizes": [10]},
        {"model": {"k": 1, "family": "poisson"}, "truth": {"thetas": [[1.0], [-2.0]]}, "fractions": [0.5], "sizes": [10]},
    ],
)
def test_invalid_scenarios(obj):
    with pytest.raises(ModelFileError):
        parse_scenario(obj)


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{\n  \"model\": \n", encoding="utf-8")
    with pytest.raises(ModelFileError):
        load_scenario(str(p))
