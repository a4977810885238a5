"""Command-line interface: ``multicp fit | simulate | verify | kl``.

Exit codes
----------
0  success
1  a verification check failed
2  input error (unreadable or malformed data, model, scenario or flags)
3  optimization failure
4  identifiability failure

Every JSON report starts with a ``config`` block holding the command, its
arguments and the seed, and keys appear in a fixed order so identical runs
produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .errors import (
    ArgumentError,
    ChangePointError,
    IdentifiabilityError,
    InternalError,
    OptimizationError,
)
from .model import Dataset, ModelSpec, ParameterState
from .rng import DEFAULT_SEED

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT = 2
EXIT_OPTIMIZATION = 3
EXIT_IDENTIFIABILITY = 4

SUITES = ("consistency", "rate", "normality", "hinkley", "all")


class InputError(ArgumentError):
    pass


# ---------------------------------------------------------------------------
# CSV and JSON I/O
# ---------------------------------------------------------------------------


def read_csv(path: str | Path) -> tuple[np.ndarray, list[str] | None]:
    """Read a numeric CSV with an optional single header row.

    Returns the ``n x p`` matrix and the header (or ``None``). Errors name
    the 1-based line and column.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None
    return parse_csv(text, str(path))


def parse_csv(text: str, name: str = "<data>") -> tuple[np.ndarray, list[str] | None]:
    rows: list[list[float]] = []
    header = None
    width = None
    reader = csv.reader(io.StringIO(text))
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        cells = [c.strip() for c in row]
        vals = []
        bad_col = None
        for col, c in enumerate(cells, start=1):
            try:
                v = float(c)
            except ValueError:
                bad_col = col
                break
            if not math.isfinite(v):
                raise InputError(f"{name}: line {lineno}, column {col}: non-finite value {c!r}")
            vals.append(v)
        if bad_col is not None:
            if not rows and header is None:
                header = cells
                width = len(cells)
                continue
            raise InputError(f"{name}: line {lineno}, column {bad_col}: not a number: {cells[bad_col - 1]!r}")
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise InputError(f"{name}: line {lineno}, column {min(len(vals), width) + 1}: expected {width} columns, got {len(vals)}")
        rows.append(vals)
    if not rows:
        raise InputError(f"{name}: no data rows")
    return np.array(rows, dtype=float), header


def format_csv(values: np.ndarray, header: Sequence[str] | None = None) -> str:
    """Serialize so that :func:`parse_csv` recovers the values exactly."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header is not None:
        w.writerow(header)
    for row in np.atleast_2d(values):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def _clean(obj):
    """Convert numpy scalars/arrays to plain JSON types; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def write_rows_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    fields = list(rows[0].keys())
    for r in rows[1:]:
        for key in r:
            if key not in fields:
                fields.append(key)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _csv_cell(r.get(k)) for k in fields})


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _out_dir(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _config(args: argparse.Namespace) -> dict:
    skip = {"func"}
    out = {"command": args.command, "version": __version__}
    for key, val in sorted(vars(args).items()):
        if key not in skip and key != "command":
            out[key] = val
    return out


def _vec(text: str | None, flag: str) -> np.ndarray | None:
    if text is None:
        return None
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()], dtype=float)
    except ValueError:
        raise InputError(f"{flag}: expected comma-separated numbers, got {text!r}") from None


def _psi_grid(text: str | None) -> list[np.ndarray]:
    """``--psi-grid`` holds points separated by ';', each a comma-separated vector."""
    if not text:
        return []
    return [_vec(p, "--psi-grid") for p in text.split(";") if p.strip()]


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def _fit_payload(spec: ModelSpec, data: Dataset, res, level: float, hessian: bool) -> dict:
    from .inference import InfoMatrix, hessian_info, invert_info, wald_intervals

    payload = res.to_dict()
    fam = spec.psi_family
    if fam is not None and hasattr(fam, "covariance"):
        payload["covariance"] = fam.covariance(res.params.psi).tolist()
    elif fam is not None and fam.psi_role == "variance":
        payload["variance"] = float(res.params.psi[0])
    intervals = None
    if res.info_matrix is not None and res.std_errors is not None and np.all(np.isfinite(res.std_errors)):
        info = InfoMatrix(res.info_matrix, spec.dims)
        _, cond = invert_info(info)
        payload["condition_number"] = cond
        intervals = [
            {"name": iv.name, "estimate": iv.estimate, "std_error": iv.std_error, "lower": iv.lower, "upper": iv.upper}
            for iv in wald_intervals(res, info, level, spec)
        ]
    payload["level"] = level
    payload["intervals"] = intervals
    if hessian:
        payload["hessian_info"] = hessian_info(spec, data, res).tolist()
    return payload


def _fit_table(payload: dict) -> str:
    lines = [
        f"change points : {', '.join(str(b) for b in payload['change_points']) or '(none)'}",
        f"fractions     : {', '.join(f'{f:.6f}' for f in payload['fractions']) or '(none)'}",
        f"log-likelihood: {payload['loglik']:.10g}",
    ]
    if payload.get("intervals"):
        lines.append(f"{'parameter':<16}{'estimate':>16}{'std.err':>14}{'lower':>16}{'upper':>16}")
        for iv in payload["intervals"]:
            se = iv["std_error"]
            lines.append(
                f"{iv['name']:<16}{iv['estimate']:>16.8g}{se:>14.6g}{iv['lower']:>16.8g}{iv['upper']:>16.8g}"
            )
    else:
        lines.append(f"psi           : {payload['psi']}")
        for j, th in enumerate(payload["thetas"], start=1):
            lines.append(f"theta_{j:<7}: {th}")
    if payload["diagnostics"].get("boundary_flags"):
        lines.append(f"at box boundary: {', '.join(payload['diagnostics']['boundary_flags'])}")
    if payload["diagnostics"].get("indistinct_neighbors"):
        lines.append(f"indistinct neighbouring segments: {payload['diagnostics']['indistinct_neighbors']}")
    return "\n".join(lines) + "\n"


def cmd_fit(args: argparse.Namespace) -> int:
    from .estimator import fit
    from .modelfile import load_model

    if not args.data:
        raise InputError("fit needs --data")
    if not args.model:
        raise InputError("fit needs --model (a model file or a family name)")
    values, header = read_csv(args.data)
    data = Dataset(values)
    spec = load_model(args.model, k=args.k, data_dim=data.p)
    out = _out_dir(args.out)
    try:
        res = fit(
            spec,
            data,
            psi_starts=_psi_grid(args.psi_grid),
            max_outer_iters=args.max_outer_iters,
            tol=args.tol,
            min_segment_length=args.min_segment_length,
        )
    except OptimizationError as exc:
        trace = {"config": _config(args), "error": str(exc), "trace": exc.trace, "grad_norm": exc.grad_norm}
        if out is not None:
            (out / "fit_trace.json").write_text(dumps(trace), encoding="utf-8")
            print(f"optimization failed: {exc}; trace written to {out / 'fit_trace.json'}", file=sys.stderr)
        else:
            print(f"optimization failed: {exc}", file=sys.stderr)
            sys.stderr.write(dumps(trace))
        return EXIT_OPTIMIZATION
    payload = {"config": _config(args), "columns": header}
    payload.update(_fit_payload(spec, data, res, args.level, args.hessian))
    table = _fit_table(payload)
    if out is not None:
        (out / "fit.json").write_text(dumps(payload), encoding="utf-8")
        rows = [
            {"segment": j, "start": s + 1, "end": t, "length": t - s, **{f"theta[{c}]": v for c, v in enumerate(th)}}
            for j, ((s, t), th) in enumerate(zip(res.change_points.segments(), payload["thetas"]), start=1)
        ]
        write_rows_csv(out / "fit_segments.csv", rows)
        if payload.get("intervals"):
            write_rows_csv(out / "fit_intervals.csv", payload["intervals"])
    sys.stdout.write(table)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _scenario(args):
    from .modelfile import load_scenario
    from .simulation import ScenarioSpec

    sf = load_scenario(args.scenario)
    sizes = tuple(int(s) for s in args.sizes.split(",")) if args.sizes else sf.sizes
    return ScenarioSpec(
        sf.spec,
        sf.truth,
        sf.fractions,
        sizes,
        args.reps if args.reps is not None else sf.reps,
        args.seed if args.seed is not None else sf.seed,
        sf.name,
    )


def cmd_simulate(args: argparse.Namespace) -> int:
    from . import simulation as sim

    if args.suite not in SUITES:
        raise InputError(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}")
    scenario = _scenario(args)
    suites = ["consistency", "rate", "normality", "hinkley"] if args.suite == "all" else [args.suite]
    deltas = [float(d) for d in args.delta_grid.split(",")] if args.delta_grid else [5.0, 10.0, 20.0]
    reports = []
    shared: dict = {}
    for suite in suites:
        if suite in ("consistency", "rate"):
            for n in scenario.sizes:
                if n not in shared:
                    shared[n] = sim.collect_fits(scenario, n, workers=args.workers)
        if suite == "consistency":
            reports.append(sim.run_consistency(scenario, workers=args.workers, fits=shared).to_dict(args.records))
        elif suite == "rate":
            reports.append(
                sim.run_rate(scenario, deltas, target=args.rate_target, workers=args.workers, fits=shared).to_dict(args.records)
            )
        elif suite == "normality":
            reports.append(sim.run_normality(scenario, args.level, workers=args.workers).to_dict(args.records))
        else:
            m_grid = [int(m) for m in args.m_grid.split(",")]
            reports.append(sim.hinkley_demo(m_grid, args.theta2, scenario.seed, reps=scenario.reps).to_dict())
    payload = {"config": _config(args), "scenario": scenario.to_dict(), "reports": reports}
    rows = []
    for rep in reports:
        for c in rep["checks"]:
            rows.append({"suite": rep["suite"], "check": c["name"], "passed": c["passed"], "detail": c["detail"]})
    out = _out_dir(args.out)
    if out is not None:
        (out / "simulate.json").write_text(dumps(payload), encoding="utf-8")
        write_rows_csv(out / "simulate_checks.csv", rows)
        summ = []
        for rep in reports:
            for s in rep.get("summaries", []):
                for key, val in s.items():
                    if key in ("n", "m", "coordinates"):
                        continue
                    vals = val if isinstance(val, list) else [val]
                    for c, v in enumerate(vals):
                        label = key if not isinstance(val, list) else f"{key}[{c}]"
                        summ.append({"suite": rep["suite"], "size": s.get("n", s.get("m")), "statistic": label, "value": v})
        write_rows_csv(out / "simulate_summary.csv", summ)
    for r in rows:
        print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['suite']:<12} {r['check']:<48} {r['detail']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def cmd_verify(args: argparse.Namespace) -> int:
    from .verification import run_verification

    instance = None
    if args.scenario:
        from .lemma import LemmaInstance
        from .modelfile import load_scenario
        from .simulation import ScenarioSpec, precheck_box

        sf = load_scenario(args.scenario)
        spec = sf.spec
        if spec.box is None or not spec.box.theta_lower:
            sc = ScenarioSpec(sf.spec, sf.truth, sf.fractions, sf.sizes, 1, sf.seed, sf.name)
            spec = ModelSpec(spec.k, spec.families, precheck_box(sc))
        instance = LemmaInstance(spec, sf.truth, sf.fractions, args.lattice)
    seed = DEFAULT_SEED if args.seed is None else args.seed
    result = run_verification(
        instance,
        seed=seed,
        probes=args.probes,
        kl_pairs=args.kl_pairs,
        dp_instances=args.dp_instances,
        j_probes=args.j_probes,
        inject_fault=args.inject_fault,
    )
    payload = {"config": _config(args), **result}
    out = _out_dir(args.out)
    if out is not None:
        (out / "verify.json").write_text(dumps(payload), encoding="utf-8")
        write_rows_csv(
            out / "verify_checks.csv",
            [{"check": c["name"], "passed": c["passed"], "worst": c.get("worst"), "detail": c["detail"]} for c in result["checks"]],
        )
    for c in result["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']:<36} {c['detail']}")
    return EXIT_OK if result["passed"] else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# kl
# ---------------------------------------------------------------------------


def cmd_kl(args: argparse.Namespace) -> int:
    from .likelihood import kl_v_detailed
    from .modelfile import load_model

    if not args.model:
        raise InputError("kl needs --model (a model file or a family name)")
    dim = args.dim
    spec = load_model(args.model, k=0, data_dim=dim)
    fam = spec.families[0]
    spec0 = load_model(args.model0, k=0, data_dim=dim) if args.model0 else spec
    fam0 = spec0.families[0]
    theta = _vec(args.theta, "--theta")
    theta0 = _vec(args.theta0, "--theta0")
    if theta is None or theta0 is None:
        raise InputError("kl needs --theta and --theta0")
    psi = _vec(args.psi, "--psi")
    psi0 = _vec(args.psi0, "--psi0")
    psi = np.zeros(0) if psi is None else psi
    psi0 = psi if psi0 is None else psi0
    fam.check_params(psi if fam.psi_dim else np.zeros(0), theta)
    fam0.check_params(psi0 if fam0.psi_dim else np.zeros(0), theta0)
    r = kl_v_detailed(fam, psi, theta, fam0, psi0, theta0, method=args.method)
    payload = {
        "config": _config(args),
        "family": fam.describe(),
        "true_family": fam0.describe(),
        "v": r.value,
        "stderr": r.stderr,
        "method": r.method,
    }
    out = _out_dir(args.out)
    if out is not None:
        (out / "kl.json").write_text(dumps(payload), encoding="utf-8")
    print(f"v = {r.value:.15g} (method {r.method}, stderr {r.stderr:.3g})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multicp", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="joint MLE of change points and parameters")
    f.add_argument("--data", help="CSV file, one row per observation")
    f.add_argument("--model", help="model description file or a family name")
    f.add_argument("--k", type=int, help="number of change points (overrides the model file)")
    f.add_argument("--out", help="output directory for fit.json and CSV tables")
    f.add_argument("--seed", type=int, default=DEFAULT_SEED, help="recorded for audit; the fit is deterministic")
    f.add_argument("--level", type=float, default=0.95, help="Wald interval level")
    f.add_argument("--psi-grid", help="extra common-parameter starts, ';' between points, ',' within")
    f.add_argument("--max-outer-iters", type=int, default=50)
    f.add_argument("--tol", type=float, default=1e-8)
    f.add_argument("--min-segment-length", type=int, default=1)
    f.add_argument("--hessian", action="store_true", help="also report the negative-Hessian information")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="Monte Carlo checks of the asymptotic results")
    s.add_argument("--scenario", default="normal-shift-small", help="scenario JSON file or bundled name")
    s.add_argument("--suite", default="all", help=f"one of {', '.join(SUITES)}")
    s.add_argument("--out", help="output directory")
    s.add_argument("--seed", type=int, help="root seed (default: the scenario's)")
    s.add_argument("--reps", type=int, help="replications per sample size (default: the scenario's)")
    s.add_argument("--sizes", help="comma-separated sample sizes (default: the scenario's)")
    s.add_argument("--level", type=float, default=0.95)
    s.add_argument("--delta-grid", help="comma-separated tail thresholds for the rate suite")
    s.add_argument("--rate-target", type=float, default=0.10)
    s.add_argument("--m-grid", default="10,100,1000,10000", help="sample sizes for the profile-statistic demo")
    s.add_argument("--theta2", type=float, default=0.0, help="true mean for the profile-statistic demo")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--records", action="store_true", help="include per-replication records in the JSON")
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="numerical checks of the likelihood machinery")
    v.add_argument("--scenario", help="scenario JSON file or bundled name (default: two-segment normal benchmark)")
    v.add_argument("--out", help="output directory")
    v.add_argument("--seed", type=int)
    v.add_argument("--probes", type=int, default=10_000, help="random probes of the J1 bound")
    v.add_argument("--lattice", type=int, default=200, help="n for the candidate-fraction lattice")
    v.add_argument("--kl-pairs", type=int, default=50)
    v.add_argument("--dp-instances", type=int, default=50)
    v.add_argument("--j-probes", type=int, default=50)
    v.add_argument("--inject-fault", choices=["none", "v-sign"], default="none", help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)

    k = sub.add_parser("kl", help="evaluate v = E_true[log f - log f_true]")
    k.add_argument("--model", help="candidate family (file or name)")
    k.add_argument("--model0", help="true family (default: same as --model)")
    k.add_argument("--dim", type=int, help="dimension for the multivariate family")
    k.add_argument("--theta", help="candidate theta, comma-separated")
    k.add_argument("--psi", help="candidate psi, comma-separated")
    k.add_argument("--theta0", help="true theta")
    k.add_argument("--psi0", help="true psi (default: --psi)")
    k.add_argument("--method", choices=["auto", "closed", "quad", "mc"], default="auto")
    k.add_argument("--out", help="output directory")
    k.add_argument("--seed", type=int, default=DEFAULT_SEED)
    k.set_defaults(func=cmd_kl)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except IdentifiabilityError as exc:
        print(f"identifiability failure: {exc}", file=sys.stderr)
        return EXIT_IDENTIFIABILITY
    except OptimizationError as exc:
        print(f"optimization failure: {exc}", file=sys.stderr)
        return EXIT_OPTIMIZATION
    except InternalError:
        raise
    except (ChangePointError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
