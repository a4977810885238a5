"""Compare the compiled and pure-Python segment-cost kernels.

Usage::

    python3 benchmarks/bench_dp.py [--sizes 200 1000 4000] [--k 3] [--repeat 3] [--out bench.csv]

Times two things per backend and sample size: one full ``interval_costs``
sweep over every interval ``(s, t]`` and a fixed-psi exact fit with ``k``
change points on normal data with three mean shifts. Fitted boundaries are
checked to agree across backends before any timing is reported.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time

import numpy as np

from multicp import Dataset, ModelSpec, kernels
from multicp.estimator import fit_fixed_psi
from multicp.families import make_family
from multicp.rng import stream


def _data(n: int, seed: int) -> np.ndarray:
    rng = stream(seed, n)
    means = np.repeat([0.0, 1.5, -0.5, 1.0], -(-n // 4))[:n]
    return means + rng.standard_normal(n)


def _best_of(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run(sizes, k: int, repeat: int, seed: int) -> list[dict]:
    fam = make_family("normal-known-var")
    spec = ModelSpec(k, (fam,))
    rows = []
    for n in sizes:
        data = Dataset(_data(n, seed))
        box = spec.resolve_box(data)
        lo, hi = box.theta_bounds(0)
        ps = fam.kernel_stats(data.values, np.zeros(0), lo, hi).prefix()
        s, t = np.triu_indices(n + 1, 1)
        fits = {}
        for backend in kernels.available_backends():
            sweep = _best_of(lambda: kernels.interval_costs(ps, s, t, backend=backend), repeat)
            dp = _best_of(lambda: fits.__setitem__(backend, fit_fixed_psi(spec, data, box=box, backend=backend)), repeat)
            rows.append({"n": n, "k": k, "backend": backend, "intervals": int(s.size),
                         "interval_costs_s": sweep, "fit_fixed_psi_s": dp})
        bounds = {b: f.change_points.boundaries for b, f in fits.items()}
        if len(set(bounds.values())) != 1:
            raise SystemExit(f"backends disagree at n={n}: {bounds}")
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[200, 1000, 4000])
    ap.add_argument("--k", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", help="optional CSV file for the timings")
    args = ap.parse_args(argv)

    if "cython" not in kernels.available_backends():
        print("compiled extension not built; timing the pure-Python kernels only", file=sys.stderr)
    rows = run(args.sizes, args.k, args.repeat, args.seed)

    by_n = {}
    for r in rows:
        by_n.setdefault(r["n"], {})[r["backend"]] = r
    print(f"{'n':>6} {'backend':>8} {'intervals':>10} {'costs [s]':>10} {'fit [s]':>9} {'fit speedup':>12}")
    for n, group in by_n.items():
        base = group["python"]["fit_fixed_psi_s"]
        for b, r in group.items():
            print(f"{n:>6} {b:>8} {r['intervals']:>10} {r['interval_costs_s']:>10.4f} "
                  f"{r['fit_fixed_psi_s']:>9.4f} {base / r['fit_fixed_psi_s']:>11.1f}x")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
