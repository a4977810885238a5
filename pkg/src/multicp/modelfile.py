"""Model descriptions and scenario files.

Model description grammar
-------------------------
One ``key = value`` pair per line; ``#`` starts a comment; blank lines are
ignored. Segment indices are 1-based. Vectors are comma-separated.

::

    k = 2                        # number of change points
    family = normal-common-var   # default family for every segment
    family.3 = exponential       # override for segment 3
    variance = 1.0               # constant for normal-known-var (all segments)
    variance.2 = 4.0             # constant for one segment
    dim = 5                      # constant for mvn-common-cov
    psi = variance               # optional: asserted role of the common parameter
    box.psi.lower = 0.01
    box.psi.upper = 100
    box.theta.lower = -10        # every segment
    box.theta.upper = 10
    box.theta.2.lower = 0        # one segment
    box.theta.2.upper = 5

A scenario file is JSON with keys ``name``, ``model`` (an object whose
keys follow the grammar above), ``truth`` (``psi`` and ``thetas``),
``fractions``, ``sizes``, ``reps`` and ``seed``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ArgumentError, ChangePointError
from .families import FAMILY_NAMES, make_family
from .model import ModelSpec, ParameterBox, ParameterState

_KEY = re.compile(r"^[a-z][a-z0-9_.\-]*$")
_CONSTANTS = ("variance", "dim")


class ModelFileError(ArgumentError):
    """Malformed model description; carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


def parse_model_text(text: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ModelFileError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        if not _KEY.match(key):
            raise ModelFileError(f"invalid key {key!r}", lineno)
        if key in entries:
            raise ModelFileError(f"duplicate key {key!r}", lineno)
        if not value:
            raise ModelFileError(f"empty value for {key!r}", lineno)
        entries[key] = value
    return entries


def _vector(key: str, value) -> np.ndarray:
    if isinstance(value, (list, tuple)):
        items = list(value)
    elif isinstance(value, (int, float)):
        items = [value]
    else:
        items = [v for v in str(value).split(",") if v.strip()]
    try:
        arr = np.array([float(v) for v in items], dtype=float)
    except (TypeError, ValueError):
        raise ModelFileError(f"{key}: expected numbers, got {value!r}") from None
    if arr.size == 0 or not np.all(np.isfinite(arr)):
        raise ModelFileError(f"{key}: expected finite numbers, got {value!r}")
    return arr


def _int(key: str, value) -> int:
    try:
        out = int(str(value).strip())
    except ValueError:
        raise ModelFileError(f"{key}: expected an integer, got {value!r}") from None
    return out


def build_spec(entries: Mapping[str, object], *, k: int | None = None, data_dim: int | None = None) -> ModelSpec:
    """Build a :class:`ModelSpec` from parsed entries.

    ``k`` overrides the ``k`` entry; ``data_dim`` fills ``dim`` for the
    multivariate family when it is not given.
    """
    entries = {str(key).lower(): v for key, v in entries.items()}
    known = {"k", "family", "psi"} | set(_CONSTANTS)
    for key in entries:
        head = key.split(".")[0]
        if head not in known and head != "box":
            raise ModelFileError(f"unknown key {key!r}")
    if k is None:
        if "k" not in entries:
            raise ModelFileError("missing 'k'")
        k = _int("k", entries["k"])
    if k < 0:
        raise ModelFileError("k must be non-negative")
    K = k + 1
    for key in entries:
        parts = key.split(".")
        if parts[0] in ("family",) + _CONSTANTS and len(parts) == 2:
            j = _int(key, parts[1])
            if not 1 <= j <= K:
                raise ModelFileError(f"{key}: segment index must be in 1..{K}")
    fams = []
    for j in range(1, K + 1):
        name = str(entries.get(f"family.{j}", entries.get("family", ""))).strip()
        if not name:
            raise ModelFileError(f"no family for segment {j}")
        if name.lower() not in FAMILY_NAMES + ("mvn",):
            raise ModelFileError(f"unknown family {name!r}; choose from {', '.join(FAMILY_NAMES)}")
        consts = {}
        for c in _CONSTANTS:
            val = entries.get(f"{c}.{j}", entries.get(c))
            if val is not None:
                consts[c] = val
        if name.lower() in ("mvn-common-cov", "mvn"):
            consts.pop("variance", None)
            if "dim" not in consts:
                if data_dim is None:
                    raise ModelFileError("mvn-common-cov needs 'dim' (or data to infer it from)")
                consts["dim"] = data_dim
            consts["dim"] = _int("dim", consts["dim"])
        elif name.lower() == "normal-known-var":
            consts.pop("dim", None)
            if "variance" in consts:
                consts["variance"] = float(_vector("variance", consts["variance"])[0])
        else:
            consts = {}
        try:
            fams.append(make_family(name, **consts))
        except ChangePointError as exc:
            raise ModelFileError(f"segment {j}: {exc}") from None
    box = _build_box(entries, K)
    try:
        spec = ModelSpec(k, tuple(fams), box)
    except ChangePointError as exc:
        raise ModelFileError(str(exc)) from None
    role = entries.get("psi")
    if role is not None:
        have = spec.psi_family.psi_role if spec.psi_family else "none"
        if str(role).strip().lower() != str(have).split(":")[0]:
            raise ModelFileError(f"psi role {role!r} does not match the families (they use {have!r})")
    return spec


def _build_box(entries, K) -> ParameterBox | None:
    keys = [key for key in entries if key.startswith("box.")]
    if not keys:
        return None
    for key in keys:
        parts = key.split(".")
        ok = (len(parts) == 3 and parts[1] in ("psi", "theta") and parts[2] in ("lower", "upper")) or (
            len(parts) == 4 and parts[1] == "theta" and parts[3] in ("lower", "upper")
        )
        if not ok:
            raise ModelFileError(f"unknown box key {key!r}")
    psi_lo = _vector("box.psi.lower", entries["box.psi.lower"]) if "box.psi.lower" in entries else None
    psi_hi = _vector("box.psi.upper", entries["box.psi.upper"]) if "box.psi.upper" in entries else None
    th_lo, th_hi = [], []
    any_theta = False
    for j in range(1, K + 1):
        lo = entries.get(f"box.theta.{j}.lower", entries.get("box.theta.lower"))
        hi = entries.get(f"box.theta.{j}.upper", entries.get("box.theta.upper"))
        th_lo.append(None if lo is None else _vector(f"box.theta.{j}.lower", lo))
        th_hi.append(None if hi is None else _vector(f"box.theta.{j}.upper", hi))
        any_theta = any_theta or lo is not None or hi is not None
    try:
        return ParameterBox(psi_lo, psi_hi, tuple(th_lo) if any_theta else (), tuple(th_hi) if any_theta else ())
    except ChangePointError as exc:
        raise ModelFileError(str(exc)) from None


def load_model(source: str, *, k: int | None = None, data_dim: int | None = None) -> ModelSpec:
    """Load a model from a description file, or from a bare family name.

    A bare family name (for example ``exponential``) is shorthand for
    ``family = <name>``; ``k`` must then be supplied.
    """
    path = Path(source)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
        entries = parse_model_text(text)
    elif source.strip().lower() in FAMILY_NAMES + ("mvn",):
        entries = {"family": source.strip()}
        if k is None:
            raise ModelFileError("--k is required when --model is a family name")
    else:
        raise ModelFileError(f"model file {source!r} not found and not a family name ({', '.join(FAMILY_NAMES)})")
    return build_spec(entries, k=k, data_dim=data_dim)


def describe_spec(spec: ModelSpec) -> dict:
    out: dict = {"k": spec.k, "families": [f.describe() for f in spec.families], "common_dim": spec.common_dim}
    if spec.box is not None:
        b = spec.box
        out["box"] = {
            "psi_lower": None if b.psi_lower is None else b.psi_lower.tolist(),
            "psi_upper": None if b.psi_upper is None else b.psi_upper.tolist(),
            "theta_lower": [None if a is None else a.tolist() for a in b.theta_lower],
            "theta_upper": [None if a is None else a.tolist() for a in b.theta_upper],
        }
    return out


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

BUNDLED_SCENARIOS = ("normal-shift-small",)


@dataclass(frozen=True)
class ScenarioFile:
    name: str
    spec: ModelSpec
    truth: ParameterState
    fractions: tuple[float, ...]
    sizes: tuple[int, ...]
    reps: int
    seed: int
    raw: dict


def parse_scenario(obj: Mapping) -> ScenarioFile:
    if not isinstance(obj, Mapping):
        raise ModelFileError("scenario must be a JSON object")
    missing = [key for key in ("model", "truth", "fractions", "sizes") if key not in obj]
    if missing:
        raise ModelFileError(f"scenario is missing {', '.join(missing)}")
    model = obj["model"]
    if not isinstance(model, Mapping):
        raise ModelFileError("scenario 'model' must be an object of model-description keys")
    spec = build_spec(model)
    truth = obj["truth"]
    try:
        psi = np.asarray(truth.get("psi", []), dtype=float)
        thetas = tuple(np.atleast_1d(np.asarray(t, dtype=float)) for t in truth["thetas"])
        params = ParameterState(psi, thetas)
        spec.check_params(params)
        fractions = tuple(float(f) for f in obj["fractions"])
        sizes = tuple(int(s) for s in obj["sizes"])
        reps = int(obj.get("reps", 500))
        seed = int(obj.get("seed", 0))
    except (KeyError, TypeError, ValueError, ChangePointError) as exc:
        raise ModelFileError(f"invalid scenario: {exc}") from None
    return ScenarioFile(str(obj.get("name", "scenario")), spec, params, fractions, sizes, reps, seed, dict(obj))


def load_scenario(source: str) -> ScenarioFile:
    """Read a scenario from a JSON file or by bundled name."""
    path = Path(source)
    if path.is_file():
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ModelFileError(f"{source}: {exc.msg}", exc.lineno) from None
    elif source in BUNDLED_SCENARIOS:
        text = resources.files("multicp").joinpath("scenarios", f"{source}.json").read_text(encoding="utf-8")
        obj = json.loads(text)
    else:
        raise ModelFileError(f"scenario {source!r} not found; bundled scenarios: {', '.join(BUNDLED_SCENARIOS)}")
    return parse_scenario(obj)
