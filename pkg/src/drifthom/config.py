"""Run configuration: TOML (or JSON) file, defaults, and assumption checks A1-A6.

The schema is documented by ``configs/default.toml``. Every key is optional;
missing keys fall back to :data:`DEFAULTS`. Unknown keys are rejected so
that typos do not silently run the default.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import tomli

from .cell import (Coefficients, drift_divergence, gamma_N_normal_drift, generate_admissible_drift,
                   make_coefficients)
from .errors import AssumptionViolated, SignConditionViolated
from .geometry import CellGeometry, MacroGrid, build_cell_geometry, build_macro_grid
from .macro import SourceData, compute_source, initial_datum, source_norms

DEFAULTS = {
    "seed": 0,
    "geometry": {
        "n": 96,
        "obstacle": ["1/3", "2/3", "1/3", "2/3"],
        "dirichlet_faces": [],
    },
    "coefficients": {
        "D": [1.0, 1.0],
        "theta": 1.0,
        "P": [0.0, 1.0, -1.0],
        "drift": {"enabled": True, "mean_flow": [1.0, 0.0], "cutoff_radius": 0.25},
    },
    "sources": {
        "f": 0.0,
        "g_N": 0.0,
        "g_D": 0.0,
        "gamma": 3.0,
        "g": {"family": "bump", "amplitude": 0.8, "radius": 1.5, "center": [0.0, 0.0], "sigma": 0.5},
    },
    "macro": {
        "L": 4.0,
        "L_list": [2.0, 4.0, 8.0],
        "m": 64,
        "T": 0.5,
        "dt": "auto",
        "damping": 0.5,
        "convention": "domain-average",
        "coercivity_slack": 0.05,
    },
    "micro": {
        "eps_list": [0.25, 0.125, 0.0625],
        "side": 1.0,
        "sub_resolution": 24,
        "T": 0.01,
        "base": 0.3,
        "amplitude": 0.02,
        "macro_m": 128,
        "macro_steps": 100,
    },
    "output": {
        "directory": "out",
        "formats": ["json", "csv", "vtk"],
        "snapshot_times": [0.0, 0.25, 0.5],
        "matrix_market": False,
    },
}

A_NAMES = ("A1", "A2", "A3", "A4", "A5", "A6")


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise KeyError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise TypeError(f"config key {path + k!r} must be a table")
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = v
    return out


def _num(v) -> float:
    return float(Fraction(v)) if isinstance(v, str) else float(v)


@dataclass(frozen=True)
class RunConfig:
    data: dict
    source: str = "<defaults>"

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def canonical_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def inputs_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def with_overrides(self, **sections) -> "RunConfig":
        return RunConfig(_merge(self.data, sections), self.source)

    # -- builders -----------------------------------------------------------

    def geometry(self, n: int | None = None) -> CellGeometry:
        g = self.data["geometry"]
        obs = g["obstacle"]
        return build_cell_geometry(int(g["n"] if n is None else n), None if obs is None else tuple(obs),
                                   tuple(g["dirichlet_faces"]))

    def coefficients(self, geom: CellGeometry) -> Coefficients:
        c = self.data["coefficients"]
        dr = c["drift"]
        drift = None
        if dr["enabled"]:
            drift = generate_admissible_drift(geom, tuple(_num(v) for v in dr["mean_flow"]),
                                              _num(dr["cutoff_radius"]))
        D = c["D"]
        if not isinstance(D, list):
            D = _num(D)
        elif all(isinstance(r, list) for r in D):
            D = [[_num(v) for v in r] for r in D]
        else:
            D = np.diag([_num(v) for v in D])  # [d11, d22]
        return make_coefficients(geom, D=D, drift=drift, P_coeffs=tuple(_num(v) for v in c["P"]),
                                 theta=_num(c["theta"]))

    def initial_datum(self):
        g = dict(self.data["sources"]["g"])
        g["center"] = tuple(g["center"])
        return initial_datum(**g)

    def source_data(self) -> SourceData:
        s = self.data["sources"]
        return SourceData(_num(s["f"]), _num(s["g_N"]), self.initial_datum())

    def macro_grid(self, L: float | None = None, m: int | None = None) -> MacroGrid:
        mc = self.data["macro"]
        return build_macro_grid(_num(mc["L"] if L is None else L), int(mc["m"] if m is None else m))


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a ``.toml`` or ``.json`` config; ``None`` gives the defaults."""
    raw: dict = {}
    source = "<defaults>"
    if path is not None:
        p = Path(path)
        text = p.read_text()
        raw = json.loads(text) if p.suffix.lower() == ".json" else tomli.loads(text)
        source = str(p)
    data = _merge(DEFAULTS, raw)
    if overrides:
        data = _merge(data, overrides)
    return RunConfig(data, source)


# ---------------------------------------------------------------------------
# assumptions
# ---------------------------------------------------------------------------


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    evidence: str

    def to_dict(self):
        return dict(name=self.name, passed=self.passed, evidence=self.evidence)


def check_assumptions(cfg: RunConfig, geom: CellGeometry | None = None,
                      coeffs: Coefficients | None = None) -> list[AssumptionCheck]:
    """Run every A1-A6 check; never raises, see :func:`validate`."""
    geom = cfg.geometry() if geom is None else geom
    coeffs = cfg.coefficients(geom) if coeffs is None else coeffs
    out = []

    # A1: η^T D η >= θ|η|^2, sampled on every fluid cell over 64 directions
    ang = np.pi * np.arange(64) / 64
    eta = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    Df = coeffs.D[geom.cell_mask]
    rq = float(np.einsum("ka,cab,kb->ck", eta, Df, eta).min())
    out.append(AssumptionCheck("A1", rq >= coeffs.theta * (1 - 1e-12),
                               f"min Rayleigh quotient of D {rq:.6g} vs theta {coeffs.theta:.6g}"))

    # A2: discrete divergence and tangency on Γ_N
    if coeffs.has_drift:
        div = float(np.abs(drift_divergence(geom, coeffs.bx, coeffs.by)).max(initial=0.0))
        tan = float(np.abs(gamma_N_normal_drift(geom, coeffs.bx, coeffs.by)).max(initial=0.0))
        neg = bool(np.any(coeffs.bx < 0) or np.any(coeffs.by < 0))
        ev = f"max |div B| {div:.3e}, max |B.n| on Gamma_N {tan:.3e}"
        if neg:
            ev += "; note: B has negative face values (entrywise positivity not enforced)"
        out.append(AssumptionCheck("A2", div <= 1e-13 and tan == 0.0, ev))
    else:
        out.append(AssumptionCheck("A2", True, "no drift"))

    src = cfg.source_data()
    s = cfg.data["sources"]
    # A3/A4: bounded sources, admissible Dirichlet scaling
    f = _num(s["f"])
    out.append(AssumptionCheck("A3", bool(np.isfinite(f)), f"f = {f:g}"))
    gN, gD, gam = _num(s["g_N"]), _num(s["g_D"]), _num(s["gamma"])
    ok4 = bool(np.isfinite(gN) and np.isfinite(gD) and gam > 2)
    out.append(AssumptionCheck("A4", ok4, f"g_N = {gN:g}, g_D = {gD:g}, gamma = {gam:g} (needs > 2)"))

    # A5: g >= 0 and bounded, sampled on the macro grid
    grid = cfg.macro_grid()
    X, Y = grid.centers()
    gv = np.asarray(src.g(X, Y), dtype=np.float64)
    ok5 = bool(np.all(np.isfinite(gv)) and gv.min() >= 0)
    out.append(AssumptionCheck("A5", ok5, f"g range [{gv.min():.6g}, {gv.max():.6g}]"))

    # A6: ∫_Z f - ∫_Γ_N g_N >= 0
    try:
        ft = compute_source(src, geom)
        out.append(AssumptionCheck("A6", True, f"f_tilde = {ft:.6g}"))
    except SignConditionViolated as exc:
        out.append(AssumptionCheck("A6", False, str(exc)))
    return out


def validate(cfg: RunConfig, geom=None, coeffs=None) -> list[AssumptionCheck]:
    """Raise :class:`AssumptionViolated` on the first failing assumption."""
    checks = check_assumptions(cfg, geom, coeffs)
    for c in checks:
        if not c.passed:
            raise AssumptionViolated(c.name, c.evidence)
    return checks


def source_bounds(cfg: RunConfig, geom: CellGeometry):
    """(f_tilde, ||f||, ||g_N||, sup g) for the L-infinity bound."""
    src = cfg.source_data()
    ft = compute_source(src, geom)
    fl, gl = source_norms(src, geom)
    grid = cfg.macro_grid()
    X, Y = grid.centers()
    return ft, fl, gl, float(np.max(src.g(X, Y)))
