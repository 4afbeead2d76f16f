"""Acceptance criteria 1-11, one PASS/FAIL line each.

The lines are collected in RESULTS and printed at the end of the pytest run
(see conftest.py); ``python3 tests/test_acceptance.py`` prints them directly.
Each runtime limit is part of its criterion.
"""
import math
import time

import numpy as np
import pytest

from conftest import load_fixture
from drifthom.cell import (compatibility_residual, compute_effective_drift, generate_admissible_drift,
                           make_coefficients, solve_cell_problems)
from drifthom.config import load_config, source_bounds
from drifthom.geometry import build_cell_geometry, build_macro_grid
from drifthom.macro import (CoupledProblem, check_comparison, check_linf_bound, check_positivity,
                            compute_source, domain_sweep, kirchhoff_solve, linf_bound, restrict,
                            sample_initial, solve_coupled, sweep)
from drifthom.micro import (build_micro_domain, convergence_study, make_micro_config, periodic_datum,
                            solve_micro)
from drifthom.oracle import reference_dispersion
from drifthom.tensors import check_coercivity, decompose, effective_tensors

RESULTS = []
SAMPLES = (0.0, 0.25, 0.5, 0.75, 1.0)


def record(num, title, ok, detail, elapsed, limit):
    fast = elapsed < limit
    status = "PASS" if ok and fast else "FAIL"
    RESULTS.append(f"[{status}] {num:>2}. {title}: {detail}; {elapsed:.2f} s (limit {limit:g} s)")
    assert ok, detail
    assert fast, f"runtime {elapsed:.2f} s over {limit} s"


def default_problem(cfg, **kw):
    geom = cfg.geometry()
    mc = cfg["macro"]
    return CoupledProblem(geom, cfg.coefficients(geom), cfg.macro_grid(), cfg.initial_datum(),
                          float(mc["T"]), compute_source(cfg.source_data(), geom),
                          damping=float(mc["damping"]), **kw)


@pytest.fixture(scope="module")
def cfg():
    return load_config()


@pytest.fixture(scope="module")
def default_run(cfg):
    t0 = time.perf_counter()
    out = solve_coupled(default_problem(cfg))
    return out, time.perf_counter() - t0


def test_criterion_01_tensor_structure(cfg):
    A_star = load_fixture("astar_default.json")["base"]["A_star"]
    t0 = time.perf_counter()
    geom = cfg.geometry()
    tens, _ = effective_tensors(geom, cfg.coefficients(geom), A_star)
    worst = [0.0, 0.0, 0.0]
    for u in SAMPLES:
        D = tens.evaluate(u)
        A, J = decompose(D)
        worst[0] = max(worst[0], np.abs(A - A.T).max())
        worst[1] = max(worst[1], np.abs(J + J.T).max())
        worst[2] = max(worst[2], np.abs(A + J - D).max())
    el = time.perf_counter() - t0
    record(1, "tensor structure D* = A* + J*", worst == [0.0, 0.0, 0.0],
           f"max|A*-A*^t| = {worst[0]:g}, max|J*+J*^t| = {worst[1]:g}, max|A*+J*-D*| = {worst[2]:g}",
           el, 1.0)


def test_criterion_02_coercivity():
    t0 = time.perf_counter()
    lines, ok = [], True
    for label, with_drift in (("drift", True), ("B=0", False)):
        deficits = []
        for n in (24, 48, 96):
            g = build_cell_geometry(n)
            c = make_coefficients(g, drift=generate_admissible_drift(g) if with_drift else None)
            rep = check_coercivity(effective_tensors(g, c, 1.0)[0], raise_on_failure=False)
            deficits.append(rep.alpha - rep.min_rayleigh)
        alpha = rep.alpha
        ok &= rep.min_rayleigh >= alpha * (1 - 0.05) and all(np.diff(deficits) < 0)
        lines.append(f"{label}: min RQ {rep.min_rayleigh:.6f} vs 0.95*theta|Z| = {0.95 * alpha:.6f}, "
                     f"deficits {', '.join(f'{d:.3e}' for d in deficits)}")
    record(2, "coercivity", ok, "; ".join(lines), time.perf_counter() - t0, 30.0)


def test_criterion_03_compatibility(geom96, drift96):
    t0 = time.perf_counter()
    res = []
    for A in (0.0, 0.5, 1.0):
        B = compute_effective_drift(geom96, drift96, A)
        res.append(compatibility_residual(geom96, drift96, A, B))
    el = time.perf_counter() - t0
    record(3, "compatibility", max(res) <= 1e-12,
           f"residuals {', '.join(f'{r:.2e}' for r in res)} at A = 0, 0.5, 1 (tol 1e-12)", el, 1.0)


def test_criterion_04_classical_limit(geom96, plain96, oracle_fixture):
    t0 = time.perf_counter()
    t, _ = effective_tensors(geom96, plain96, 0.0)
    ref = reference_dispersion((120, 240, 480), mean_flow=None, A_value=0.0)
    el = time.perf_counter() - t0
    frozen = np.array(oracle_fixture["no_drift"]["M0"])
    rel = max(np.abs(t.evaluate(u) - ref["M0"]).max() / np.abs(ref["M0"]).max() for u in SAMPLES)
    same = np.allclose(ref["M0"], frozen, rtol=0, atol=1e-12)
    record(4, "classical limit B = 0", rel <= 0.01 and same,
           f"D*_11 = {t.M0[0, 0]:.6f} vs extrapolated {ref['M0'][0, 0]:.6f}, rel diff {rel:.2e} "
           f"(tol 1e-2); fresh oracle equals frozen fixture: {same}", el, 120.0)


def test_criterion_05_linear_P(cfg):
    t0 = time.perf_counter()
    lin = cfg.with_overrides(coefficients={"P": [0.0, 1.0]})
    traj, tens, rep = solve_coupled(default_problem(lin))
    el = time.perf_counter() - t0
    D = [tens.evaluate(u) for u in SAMPLES]
    spread = max(np.abs(d - D[0]).max() for d in D)
    geom = lin.geometry()
    B = compute_effective_drift(geom, lin.coefficients(geom), rep.A_star)
    ok = spread <= 1e-13 and rep.evaluations == 1 and rep.converged and rep.A_star == 1.0
    record(5, "linear-P reduction", ok,
           f"D* spread over u0 {spread:.1e} (tol 1e-13), B* = {np.round(B, 6).tolist()}, "
           f"A* = {rep.A_star}, outer evaluations {rep.evaluations}", el, 60.0)


def test_criterion_06_positivity_linf(cfg, default_run):
    (traj, tens, rep), el = default_run
    pos = check_positivity(traj, raise_on_failure=False)
    geom = cfg.geometry()
    ft, fl, gl, gsup = source_bounds(cfg, geom)
    bound = linf_bound(gsup, traj.times[-1], fl, gl)
    lb = check_linf_bound(traj, bound)
    record(6, "positivity and L-infinity bound", pos.min_value >= -1e-10 and lb["passed"],
           f"min u0 {pos.min_value:.3e} (>= -1e-10), max |u0| {lb['max_abs']:.6f} <= {bound:.6f} + 1e-8; "
           f"A* = {rep.A_star:.10f} after {rep.evaluations} evaluations", el, 120.0)


def test_criterion_07_comparison(cfg, default_run):
    (traj, tens, rep), _ = default_run
    t0 = time.perf_counter()
    grid = traj.grid
    g = sample_initial(grid, cfg.initial_datum())
    full = sweep(grid, g, tens, traj.times[-1], traj.dt)
    half = sweep(grid, 0.5 * g, tens, traj.times[-1], traj.dt)
    el = time.perf_counter() - t0
    c = check_comparison(half, full, raise_on_failure=False)
    record(7, "comparison principle", c.passed,
           f"max(u[0.5 g] - u[g]) = {c.max_violation:.3e} (tol 1e-8), tensors frozen at A*", el, 240.0)


def test_criterion_08_domain_growth(cfg, default_run):
    (traj, tens, rep), _ = default_run
    t0 = time.perf_counter()
    mc = cfg["macro"]
    r = domain_sweep(mc["L_list"], cfg.macro_grid().h, cfg.initial_datum(), tens, float(mc["T"]),
                     traj.dt, raise_on_failure=False)
    el = time.perf_counter() - t0
    record(8, "monotone domain growth", r.passed and r.tails_decreasing,
           f"L = {r.L_list}, max violations {', '.join(f'{v:.1e}' for v in r.max_violation)} (tol 1e-8), "
           f"Cauchy tails {', '.join(f'{v:.4e}' for v in r.tail_norms)}", el, 600.0)


def test_criterion_09_kirchhoff(cfg):
    t0 = time.perf_counter()
    iso = cfg.with_overrides(coefficients={"drift": {"enabled": False}})
    geom = iso.geometry()
    tens, _ = effective_tensors(geom, iso.coefficients(geom), 0.0)
    mc = iso["macro"]
    T, L, m = float(mc["T"]), float(mc["L"]), int(mc["m"])
    runs = {}
    for mm in (m, 2 * m):
        grid = build_macro_grid(L, mm)
        dt = grid.h / 4
        g = sample_initial(grid, iso.initial_datum())
        runs[mm] = (sweep(grid, g, tens, T, dt), kirchhoff_solve(grid, g, tens, T, dt) if mm == m else None)
    el = time.perf_counter() - t0
    h = 2 * L / m
    grid_err = float(np.sqrt(np.sum((runs[m][0].final - restrict(runs[2 * m][0].final)) ** 2)) * h)
    diff = float(np.sqrt(np.sum((runs[m][0].final - runs[m][1].final) ** 2)) * h)
    record(9, "Kirchhoff equivalence", diff <= 2 * grid_err,
           f"||u_K - u_direct|| = {diff:.3e} vs 2 x grid error {2 * grid_err:.3e}", el, 240.0)


TWO_SCALE_CASES = (
    # label, P, drift, base, amplitude
    ("linear P, B = 0", (0.0, 1.0), False, 0.5, 0.25),
    ("linear P, drift", (0.0, 1.0), True, 0.5, 0.25),
    ("P = r(1-r), drift", (0.0, 1.0, -1.0), True, 0.3, 0.02),
)


def two_scale_table(P, drift, base, amp, T=0.01, n=24, m=128, eps=(0.25, 0.125, 0.0625)):
    geom = build_cell_geometry(n)
    c = make_coefficients(geom, drift=generate_admissible_drift(geom) if drift else None, P_coeffs=P)
    g = periodic_datum(base, amp)
    grid = build_macro_grid(0.5, m, periodic=True, center=(0.5, 0.5))
    traj, tens, rep = solve_coupled(CoupledProblem(geom, c, grid, g, T, dt_policy=T / 100))
    sol = solve_cell_problems(geom, c, rep.A_star, tens.B_star)
    return convergence_study(eps, geom, c, g, T, traj.final, grid, sol, tens.B_star), rep


def test_criterion_10_two_scale():
    t0 = time.perf_counter()
    ok, parts = True, []
    for label, P, drift, base, amp in TWO_SCALE_CASES:
        tab, rep = two_scale_table(P, drift, base, amp)
        good = tab.monotone0 and tab.err1[-1] <= tab.err0[-1]
        ok &= good
        parts.append(f"{label} (A* {rep.A_star:.4f}): e0 {', '.join(f'{e:.3e}' for e in tab.err0)}, "
                     f"e1 {', '.join(f'{e:.3e}' for e in tab.err1)}")
    record(10, "two-scale validation", ok, "; ".join(parts), time.perf_counter() - t0, 1200.0)


def test_criterion_11_micro_invariant_region():
    t0 = time.perf_counter()
    geom = build_cell_geometry(24)
    c = make_coefficients(geom, drift=generate_admissible_drift(geom))
    rng = np.random.default_rng(11)
    lo, hi, dm = math.inf, -math.inf, 0.0
    for eps in (0.25, 0.125):
        dom = build_micro_domain(geom, c, make_micro_config(eps, sub_resolution=24))
        X, Y = dom.centers()
        for u in (rng.random(X.shape), (np.sin(7 * X) * np.cos(5 * Y) > 0).astype(float),
                  periodic_datum(0.5, 0.5)(X, Y)):
            tr = solve_micro(dom, u, 0.005, record_times=np.linspace(0, 0.005, 6))
            lo = min(lo, min(np.nanmin(s) for s in tr.states))
            hi = max(hi, max(np.nanmax(s) for s in tr.states))
            dm = max(dm, tr.max_mass_change)
    el = time.perf_counter() - t0
    ok = lo >= -1e-12 and hi <= 1 + 1e-12 and dm <= 1e-12
    record(11, "micro invariant region and mass", ok,
           f"range [{lo:.3e}, 1 + {hi - 1:.3e}], max per-step mass change {dm:.2e} (tol 1e-12)", el, 300.0)


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
