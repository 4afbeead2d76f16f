"""Numba kernels against their numpy twins.

Each backend runs in its own interpreter because the choice is made at
import time (DRIFTHOM_DISABLE_JIT). Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best(fn, repeat):
    fn()  # warm-up (compilation, caches)
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return min(ts)


def worker(repeat):
    from drifthom import kernels
    from drifthom._jit import backend_name
    from drifthom.cell import make_coefficients, generate_admissible_drift, solve_cell_problems
    from drifthom.geometry import build_cell_geometry, build_macro_grid
    from drifthom.micro import build_micro_domain, make_micro_config, solve_micro
    from drifthom.macro import initial_datum, macro_operator, sample_initial
    from drifthom.sparse import ILU0
    from drifthom.tensors import effective_tensors

    geom = build_cell_geometry(24)
    coeffs = make_coefficients(geom, drift=generate_admissible_drift(geom))
    dom = build_micro_domain(geom, coeffs, make_micro_config(0.125, 1.0, 24))
    X, Y = dom.centers()
    u = np.where(dom.mask, 0.3 + 0.2 * np.sin(2 * np.pi * X) * np.sin(2 * np.pi * Y), 0.0)
    pc = np.array(coeffs.P_coeffs)
    crit = np.array([0.5])

    g96 = build_cell_geometry(96)
    c96 = make_coefficients(g96, drift=generate_admissible_drift(g96))
    tens, _ = effective_tensors(g96, c96, 1.0)
    grid = build_macro_grid(4.0, 128)
    u0 = sample_initial(grid, initial_datum())
    A = macro_operator(u0, grid, 0.01, tens)
    M = ILU0(A)
    x = np.random.default_rng(0).normal(size=A.n)
    rows, cols, vals = A.triplets()

    out = {}
    res = {}
    out["coo_to_csr"] = _best(lambda: kernels.coo_to_csr(rows, cols, vals, A.n), repeat)
    out["csr_matvec"] = _best(lambda: kernels.csr_matvec(A.indptr, A.indices, A.data, x), repeat)
    res["csr_matvec"] = kernels.csr_matvec(A.indptr, A.indices, A.data, x)
    out["ilu0_factor"] = _best(lambda: kernels.ilu0_factor(A.indptr, A.indices, A.data, M.dp, 0.0), repeat)
    out["ilu0_apply"] = _best(lambda: M(x), repeat)
    res["ilu0_apply"] = M(x)
    out["godunov_divergence"] = _best(
        lambda: kernels.godunov_divergence(u, dom.mask, dom.bx, dom.by, pc, crit), repeat)
    res["godunov_divergence"] = kernels.godunov_divergence(u, dom.mask, dom.bx, dom.by, pc, crit)
    out["macro_triplets"] = _best(lambda: macro_operator(u0, grid, 0.01, tens), repeat)
    res["macro_triplets"] = macro_operator(u0, grid, 0.01, tens).data
    out["cell_solve_n96"] = _best(lambda: solve_cell_problems(g96, c96, 1.0), 1)
    out["micro_20_steps_eps_1_8"] = _best(lambda: solve_micro(dom, u, 20 * 8e-5, dt=8e-5), 1)
    digest = {k: [float(np.nansum(v)), float(np.nansum(np.abs(v)))] for k, v in res.items()}
    print(json.dumps(dict(backend=backend_name(), times=out, digest=digest)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        worker(args.repeat)
        return
    runs = {}
    for flag in ("0", "1"):
        env = dict(os.environ, DRIFTHOM_DISABLE_JIT=flag)
        p = subprocess.run([sys.executable, __file__, "--worker", "--repeat", str(args.repeat)],
                           env=env, capture_output=True, text=True, check=True)
        r = json.loads(p.stdout.strip().splitlines()[-1])
        runs[r["backend"]] = r
    nb, npy = runs["numba"], runs["numpy"]
    print(f"{'kernel':<26s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speed-up':>9s}")
    for k in nb["times"]:
        a, b = nb["times"][k] * 1e3, npy["times"][k] * 1e3
        print(f"{k:<26s} {a:11.3f} {b:11.3f} {b / a:9.1f}")
    worst = 0.0
    for k in nb["digest"]:
        (s1, a1), (s2, a2) = nb["digest"][k], npy["digest"][k]
        # signed sums can cancel, so scale both checksums by the absolute sum
        worst = max(worst, abs(s1 - s2) / a2, abs(a1 - a2) / a2)
    print(f"max scaled difference of output checksums: {worst:.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(runs, fh, indent=2)


if __name__ == "__main__":
    main()
