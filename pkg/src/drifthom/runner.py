"""Stage orchestration behind the command line: cell, tensors, macro, micro, sweep, properties.

Every stage writes its artifacts into the output directory and its scalars
into ``manifest.json``. The manifest is a pure function of the config and
seed except for the ``timings`` block; ``results_hash`` covers the rest.
"""
from __future__ import annotations

import hashlib
import platform
import time
from pathlib import Path

import numpy as np

from . import __version__, io
from ._jit import backend_name
from .cell import (compatibility_residual, compute_effective_drift, poly_derivative, solve_cell_problems,
                   assemble_cell_operator)
from .config import RunConfig, check_assumptions, source_bounds, validate
from .errors import DriftHomError, StageError
from .geometry import build_macro_grid
from .macro import (CoupledProblem, Trajectory, check_comparison, check_linf_bound, check_positivity,
                    compute_average_A, compute_source, domain_sweep, linf_bound, macro_operator,
                    sample_initial, solve_coupled, sweep)
from .micro import convergence_study, periodic_datum
from .sparse import write_matrix_market
from .tensors import EffectiveTensors, assemble_tensors, check_coercivity, evaluate_dispersion

STAGES = ("cell", "tensors", "macro", "micro", "sweep", "properties")
NEEDS = {"tensors": ("cell",), "macro": ("tensors",), "sweep": ("macro",)}


def expand_stages(requested) -> list:
    want = set()

    def add(s):
        if s not in STAGES:
            raise ValueError(f"unknown stage {s!r}; choose from {', '.join(STAGES)}")
        for d in NEEDS.get(s, ()):
            add(d)
        want.add(s)

    for s in requested:
        add(s)
    return [s for s in STAGES if s in want]


def versions() -> dict:
    import numba
    import scipy
    return dict(drifthom=__version__, python=platform.python_version(), numpy=np.__version__,
                numba=numba.__version__, scipy=scipy.__version__, backend=backend_name())


class Run:
    """Mutable context threaded through the stages of one invocation."""

    def __init__(self, cfg: RunConfig, out: Path, dump_matrices: bool = False):
        self.cfg = cfg
        self.out = out
        self.dump = dump_matrices or bool(cfg["output"]["matrix_market"])
        self.formats = set(cfg["output"]["formats"])
        self.rng = np.random.default_rng(cfg.seed)
        self.scalars: dict = {}
        self.artifacts: list = []
        self.geom = cfg.geometry()
        self.coeffs = cfg.coefficients(self.geom)
        self.tensors = None
        self.sol = None

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def initial_A(self) -> float:
        grid = self.cfg.macro_grid()
        u = sample_initial(grid, self.cfg.initial_datum())
        return compute_average_A(u[None], self.coeffs.P_coeffs, self.cfg["macro"]["convention"])

    # -- stages -------------------------------------------------------------

    def stage_cell(self):
        geom, coeffs = self.geom, self.coeffs
        A = self.initial_A()
        bs = compute_effective_drift(geom, coeffs, A)
        self.sol = solve_cell_problems(geom, coeffs, A, bs)
        self.scalars["cell"] = dict(
            n=geom.n, unknowns=geom.n_unknowns, fluid_area=geom.fluid_area,
            gamma_N_length=geom.gamma_N_length, gamma_D_length=geom.gamma_D_length,
            A_value=A, B_star=bs, compatibility_residual=compatibility_residual(geom, coeffs, A, bs),
            iterations=[r.iterations for r in self.sol.reports],
            residuals=[r.final_residual for r in self.sol.reports])
        if "vtk" in self.formats:
            io.write_vtk(self.path("cell_correctors.vtk"),
                         {"w1": self.sol.w1, "w2": self.sol.w2, "fluid": geom.cell_mask.astype(float)},
                         geom.h)
        if self.dump:
            write_matrix_market(assemble_cell_operator(geom, coeffs, A), self.path("cell_operator.mtx"))

    def stage_tensors(self):
        t = assemble_tensors(self.geom, self.coeffs, self.sol)
        self.tensors = t
        slack = float(self.cfg["macro"]["coercivity_slack"])
        rep = check_coercivity(t, slack=slack * t.theta * t.fluid_area, raise_on_failure=False)
        self.scalars["tensors"] = dict(t.to_dict(), coercivity=rep.to_dict())
        io.write_json(self.path("tensors.json"), t.to_dict())
        us = np.linspace(0.0, 1.0, 11)
        Ds = evaluate_dispersion(t, us)
        rows = [(float(u), *map(float, D.ravel()), s["min_rayleigh"]) for u, D, s in zip(us, Ds, rep.per_sample)]
        if "csv" in self.formats:
            io.write_csv(self.path("tensor_report.csv"),
                         ["u0", "D11", "D12", "D21", "D22", "min_rayleigh"], rows)
        if not rep.passed:
            check_coercivity(t, slack=slack * t.theta * t.fluid_area)  # raises with the report

    def _problem(self):
        mc = self.cfg["macro"]
        geom = self.geom
        ft = compute_source(self.cfg.source_data(), geom)
        dt = mc["dt"]
        return CoupledProblem(geom, self.coeffs, self.cfg.macro_grid(), self.cfg.initial_datum(),
                              float(mc["T"]), ft, dt if isinstance(dt, str) else float(dt),
                              float(mc["damping"]), mc["convention"],
                              coercivity_threshold=(1 - float(mc["coercivity_slack"]))
                              * self.coeffs.theta * geom.fluid_area)

    def stage_macro(self):
        prob = self._problem()
        traj, tens, rep = solve_coupled(prob, A_initial=self.sol.A_value)
        self.tensors = tens
        # the comparison run uses half the datum with the converged tensors frozen
        half = sweep(prob.grid, 0.5 * traj.states[0], tens, prob.T, traj.dt, prob.f_tilde,
                     coercivity_threshold=prob.coercivity_threshold)
        g = prob.grid
        np.savez_compressed(self.path("macro_trajectory.npz"), times=traj.times, states=traj.states,
                            states_half=half.states, L=g.L, m=g.m, A_star=rep.A_star, dt=traj.dt)
        io.write_json(self.path("tensors_star.json"), tens.to_dict())
        io.write_json(self.path("fixed_point.json"), rep.to_dict())
        mass = traj.mass()
        if "csv" in self.formats:
            rows = [(float(t), float(ms), float(s.min()), float(s.max()), rep.A_star)
                    for t, ms, s in zip(traj.times, mass, traj.states)]
            io.write_csv(self.path("macro_series.csv"), ["t", "mass", "min_u", "max_u", "A"], rows)
        if "vtk" in self.formats:
            for ts in self.cfg["output"]["snapshot_times"]:
                if ts > prob.T + 1e-12:
                    continue
                k = int(np.argmin(np.abs(traj.times - ts)))
                io.write_vtk(self.path(f"macro_t{k:05d}.vtk"), {"u0": traj.states[k]}, g.h,
                             (g.center[0] - g.L, g.center[1] - g.L), f"u0 at t={traj.times[k]:.17g}")
        if self.dump:
            write_matrix_market(macro_operator(traj.states[0], g, traj.dt, tens),
                                self.path("macro_operator.mtx"))
        fp = rep.to_dict()
        fp.pop("wall_time")
        self.scalars["macro"] = dict(fixed_point=fp, A_star=rep.A_star, dt=traj.dt,
                                     steps=len(traj.times) - 1, B_star=tens.B_star,
                                     min_u=float(traj.states.min()), max_u=float(traj.states.max()),
                                     final_mass=float(mass[-1]),
                                     picard_max=int(max(traj.picard_iterations, default=0)))

    def stage_sweep(self):
        mc = self.cfg["macro"]
        h = self.cfg.macro_grid().h
        T = float(mc["T"])
        dt = float(self.scalars["macro"]["dt"])
        ft = compute_source(self.cfg.source_data(), self.geom)
        rep = domain_sweep(mc["L_list"], h, self.cfg.initial_datum(), self.tensors, T, dt, ft,
                           raise_on_failure=False)
        self.scalars["sweep"] = rep.to_dict()
        io.write_json(self.path("sweep.json"), rep.to_dict())

    def stage_micro(self):
        mc = self.cfg["micro"]
        s = self.cfg["sources"]
        geom = self.cfg.geometry(int(mc["sub_resolution"]))
        coeffs = self.cfg.coefficients(geom)
        side = float(mc["side"])
        T = float(mc["T"])
        g = periodic_datum(float(mc["base"]), float(mc["amplitude"]), side)
        grid = build_macro_grid(side / 2, int(mc["macro_m"]), periodic=True, center=(side / 2, side / 2))
        ft = compute_source(self.cfg.source_data(), geom)
        prob = CoupledProblem(geom, coeffs, grid, g, T, ft, T / int(mc["macro_steps"]),
                              float(self.cfg["macro"]["damping"]), "domain-average")
        traj, tens, rep = solve_coupled(prob)
        sol = solve_cell_problems(geom, coeffs, rep.A_star, tens.B_star)
        tab = convergence_study(mc["eps_list"], geom, coeffs, g, T, traj.final, grid, sol, tens.B_star,
                                side, micro_kw=dict(gamma=float(s["gamma"]), g_D=float(s["g_D"]),
                                                    g_N=float(s["g_N"]), f=float(s["f"])))
        if "csv" in self.formats:
            io.write_csv(self.path("micro_errors.csv"),
                         ["epsilon", "error_order0", "error_order1", "rate_order0", "rate_order1"],
                         [(r["epsilon"], r["error_order0"], r["error_order1"],
                           float("nan") if r["rate_order0"] is None else r["rate_order0"],
                           float("nan") if r["rate_order1"] is None else r["rate_order1"])
                          for r in tab.rows()])
        self.scalars["micro"] = dict(A_star=rep.A_star, B_star=tens.B_star, table=tab.rows(),
                                     monotone_order0=tab.monotone0, monotone_order1=tab.monotone1,
                                     details=tab.details)

    def stage_properties(self):
        """Checks on stored artifacts only; nothing is re-solved."""
        npz = self.out / "macro_trajectory.npz"
        if not npz.exists():
            raise FileNotFoundError(f"{npz} missing: run the macro stage first")
        data = np.load(npz)
        grid = build_macro_grid(float(data["L"]), int(data["m"]))
        A = float(data["A_star"])
        tr = Trajectory(grid, data["times"], data["states"], A, [], float(data["dt"]))
        half = Trajectory(grid, data["times"], data["states_half"], A, [], float(data["dt"]))
        tens = EffectiveTensors.from_dict(io.read_json(self.out / "tensors_star.json"))
        out = {}
        pos = check_positivity(tr, raise_on_failure=False)
        out["positivity"] = dict(min_value=pos.min_value, location=pos.location, passed=pos.passed)
        ft, fl, gl, gsup = source_bounds(self.cfg, self.geom)
        T = float(tr.times[-1])
        out["linf"] = check_linf_bound(tr, linf_bound(gsup, T, fl, gl))
        cmp_ = check_comparison(half, tr, raise_on_failure=False)
        out["comparison"] = dict(max_violation=cmp_.max_violation, passed=cmp_.passed)
        mass = tr.mass()
        if ft == 0:
            out["mass_nonincreasing"] = bool(np.all(np.diff(mass) <= 1e-14 * mass[0]))
        Aavg = compute_average_A(tr, tens.P_coeffs, self.cfg["macro"]["convention"])
        dpc = np.trim_zeros(np.asarray(poly_derivative(tens.P_coeffs)), "b")
        decoupled = dpc.size <= 1 or not self.coeffs.has_drift
        out["fixed_point_consistency"] = dict(A_star=A, average=Aavg, gap=abs(A - Aavg),
                                              passed=decoupled or abs(A - Aavg) < 1e-6)
        # seeded random directions as an independent sample of the Rayleigh quotient
        xi = self.rng.normal(size=(256, 2))
        xi /= np.linalg.norm(xi, axis=1, keepdims=True)
        Ds = evaluate_dispersion(tens, np.linspace(0.0, 1.0, 11))
        out["random_direction_min_rayleigh"] = float(np.einsum("ka,sab,kb->sk", xi, Ds, xi).min())
        self.scalars["properties"] = out
        io.write_json(self.path("properties.json"), out)


def results_hash(manifest: dict) -> str:
    body = {k: v for k, v in manifest.items() if k not in ("timings", "results_hash")}
    return hashlib.sha256(io.dumps(body).encode()).hexdigest()


def run(cfg: RunConfig, stages=STAGES, out="out", seed: int | None = None, dump_matrices: bool = False) -> dict:
    """Validate, run the requested stages (plus their prerequisites) and write the manifest."""
    if seed is not None:
        cfg = cfg.with_overrides(seed=int(seed))
    validate(cfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    order = expand_stages(stages)
    r = Run(cfg, out, dump_matrices)
    timings = {}
    for s in order:
        t0 = time.perf_counter()
        try:
            getattr(r, "stage_" + s)()
        except (DriftHomError, FileNotFoundError, ValueError) as exc:
            raise StageError(s, exc) from exc
        timings[s] = time.perf_counter() - t0
    manifest = dict(config=cfg.data, config_source=cfg.source, inputs_hash=cfg.inputs_hash(), seed=cfg.seed,
                    stages=order, versions=versions(),
                    assumptions=[c.to_dict() for c in check_assumptions(cfg, r.geom, r.coeffs)],
                    scalars=r.scalars, artifacts=sorted(set(r.artifacts)), timings=timings)
    manifest["results_hash"] = results_hash(manifest)
    io.write_json(out / "manifest.json", manifest)
    return manifest
