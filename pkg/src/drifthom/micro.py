"""ε-resolved microscopic problem on a periodic torus of perforated cells.

    du/dt - div(D^ε grad u) + (1/ε) div(B^ε P(u)) = f          in Ω_ε,
    (-D^ε grad u + (1/ε) B^ε P(u)) . n = ε g_N                   on Γ_N^ε,
    u = ε^γ g_D                                                  on Γ_D^ε,

with D^ε(x) = D(x/ε), B^ε(x) = B(x/ε). IMEX stepping: explicit Godunov flux
for the drift, implicit two-point diffusion (factored once per run).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .cell import Coefficients, CellSolution, poly_derivative, poly_eval
from .errors import CFLViolation, FrameOutOfRange, LinearSolveFailed, NonMonotoneConvergence
from .geometry import (GAMMA_D, GAMMA_N, INACTIVE, INTERIOR, PERIODIC, CellGeometry, MacroGrid)
from .sparse import ILU0, assemble_arrays, solve

CFL_SAFETY = 0.9
MAX_UNKNOWNS = 4_000_000


@dataclass(frozen=True)
class MicroConfig:
    epsilon: float
    torus_cells: int
    sub_resolution: int
    gamma: float = 3.0
    g_D: float = 0.0
    g_N: float = 0.0
    f: object = 0.0

    @property
    def side(self) -> float:
        return self.torus_cells * self.epsilon

    @property
    def n_side(self) -> int:
        return self.torus_cells * self.sub_resolution

    @property
    def h(self) -> float:
        return self.epsilon / self.sub_resolution


def make_micro_config(epsilon: float, side: float = 1.0, sub_resolution: int = 24, **kw) -> MicroConfig:
    """Torus of physical side ``side`` tiled by ``side/ε`` cells."""
    K = side / epsilon
    if abs(K - round(K)) > 1e-9:
        raise ValueError(f"side {side} is not a whole number of ε-cells (ε = {epsilon})")
    cfg = MicroConfig(float(epsilon), int(round(K)), int(sub_resolution), **kw)
    validate_micro_config(cfg)
    return cfg


def validate_micro_config(cfg: MicroConfig):
    if not cfg.gamma > 2:
        raise ValueError(f"Dirichlet scaling exponent must exceed 2, got {cfg.gamma}")
    if cfg.sub_resolution < 16:
        raise ValueError("sub_resolution must be at least 16")
    if cfg.n_side ** 2 > MAX_UNKNOWNS:
        raise ValueError(f"{cfg.n_side ** 2} micro cells exceed the budget of {MAX_UNKNOWNS}")


@dataclass
class MicroDomain:
    cfg: MicroConfig
    mask: np.ndarray
    xtags: np.ndarray
    ytags: np.ndarray
    D: np.ndarray
    bx: np.ndarray
    by: np.ndarray
    P_coeffs: tuple

    @property
    def n_side(self):
        return self.mask.shape[0]

    def centers(self):
        c = (np.arange(self.n_side) + 0.5) * self.cfg.h
        return np.meshgrid(c, c, indexing="ij")


def build_micro_domain(geom: CellGeometry, coeffs: Coefficients, cfg: MicroConfig) -> MicroDomain:
    if geom.n != cfg.sub_resolution:
        raise ValueError(f"cell grid n={geom.n} must equal sub_resolution={cfg.sub_resolution}")
    K = cfg.torus_cells
    tile = lambda a: np.tile(a, (K, K) + (1,) * (a.ndim - 2))  # noqa: E731
    xt = tile(geom.xface_tags)
    yt = tile(geom.yface_tags)
    # unit-cell wrap faces become ordinary interior faces of the torus
    xt = np.where(xt == PERIODIC, INTERIOR, xt).astype(np.int8)
    yt = np.where(yt == PERIODIC, INTERIOR, yt).astype(np.int8)
    return MicroDomain(cfg, tile(geom.cell_mask), xt, yt, tile(coeffs.D), tile(coeffs.bx),
                       tile(coeffs.by), tuple(coeffs.P_coeffs))


@dataclass
class _Faces:
    p: np.ndarray
    q: np.ndarray
    d: np.ndarray
    dir_cell: np.ndarray
    dir_d: np.ndarray
    neu_cell: np.ndarray


def _faces(dom: MicroDomain) -> _Faces:
    n = dom.n_side
    idx = -np.ones((n, n), dtype=np.int64)
    idx[dom.mask] = np.arange(int(dom.mask.sum()))
    P, Q, DF, DC, DD, NC = [], [], [], [], [], []
    for axis, tags in ((0, dom.xtags), (1, dom.ytags)):
        d = dom.D[..., axis, axis]
        lo_idx = np.roll(idx, 1, axis=axis)
        lo_d = np.roll(d, 1, axis=axis)
        lo_fluid = np.roll(dom.mask, 1, axis=axis)
        pair = tags == INTERIOR
        P.append(lo_idx[pair])
        Q.append(idx[pair])
        DF.append(2 * lo_d[pair] * d[pair] / (lo_d[pair] + d[pair]))
        for tag, cells, dl in ((GAMMA_D, DC, DD), (GAMMA_N, NC, None)):
            sel = tags == tag
            c = np.where(lo_fluid[sel], lo_idx[sel], idx[sel])
            cells.append(c)
            if dl is not None:
                dl.append(np.where(lo_fluid[sel], lo_d[sel], d[sel]))
    cat = np.concatenate
    return _Faces(cat(P), cat(Q), cat(DF), cat(DC), cat(DD), cat(NC))


def _crit_points(P_coeffs):
    dpc = np.trim_zeros(np.asarray(poly_derivative(P_coeffs), dtype=np.float64), "b")
    if dpc.size <= 1:
        return np.zeros(0)
    r = np.roots(dpc[::-1])
    return np.sort(r[np.abs(r.imag) < 1e-12].real)


def lipschitz_P(P_coeffs, lo=0.0, hi=1.0):
    dpc = poly_derivative(P_coeffs)
    xs = np.concatenate([np.linspace(lo, hi, 2001), _crit_points(dpc)])
    xs = xs[(xs >= lo) & (xs <= hi)]
    return float(np.abs(poly_eval(dpc, xs)).max())


def max_stable_dt(dom: MicroDomain, lo=0.0, hi=1.0, safety: float = CFL_SAFETY) -> float:
    """Explicit drift limit dt <= C ε h / (max_cell sum_f |β_f| Lip P)."""
    s = np.abs(dom.bx) + np.abs(np.roll(dom.bx, -1, 0)) + np.abs(dom.by) + np.abs(np.roll(dom.by, -1, 1))
    smax = float(s[dom.mask].max(initial=0.0))
    lip = lipschitz_P(dom.P_coeffs, lo, hi)
    if smax * lip == 0:
        return math.inf
    return safety * dom.cfg.epsilon * dom.cfg.h / (smax * lip)


@dataclass
class MicroTrajectory:
    domain: MicroDomain
    times: np.ndarray
    states: list  # full-grid arrays, NaN on solid cells
    mass: np.ndarray
    max_mass_change: float
    max_drift_residual: float = float("nan")
    steps: int = 0
    dt: float = float("nan")

    @property
    def final(self):
        return self.states[-1]


class _Diffusion:
    """Factored implicit-diffusion operator h^2 I + dt L for a fixed dt."""

    def __init__(self, dom: MicroDomain, faces: _Faces, dt: float):
        h2 = dom.cfg.h ** 2
        N = int(dom.mask.sum())
        r = np.concatenate([faces.p, faces.p, faces.q, faces.q, faces.dir_cell, np.arange(N)])
        c = np.concatenate([faces.p, faces.q, faces.q, faces.p, faces.dir_cell, np.arange(N)])
        v = np.concatenate([dt * faces.d, -dt * faces.d, dt * faces.d, -dt * faces.d,
                            2 * dt * faces.dir_d, np.full(N, h2)])
        self.A = assemble_arrays(r, c, v, N, symmetric=True)
        self.M = ILU0(self.A)
        self.conservative = faces.dir_cell.size == 0
        self.N = N
        self.row_total = float(self.A.matvec(np.ones(N)).sum())

    def solve(self, b, x0):
        # 1e-12 sits just above the round-off floor of CG at these sizes;
        # conservation does not rely on it (see the shift below)
        x, rep = solve(self.A, b, tol=1e-12, x0=x0, preconditioner=self.M, raise_on_failure=False)
        if not rep.converged and not rep.final_residual <= 1e-10:
            raise LinearSolveFailed(f"diffusion solve stalled at relative residual {rep.final_residual:.3e}")
        if self.conservative:
            # every row sums to h^2, so a uniform shift restores 1.(b - Ax) = 0
            x = x + (b.sum() - self.A.matvec(x).sum()) / self.row_total
        return x


def solve_micro(dom: MicroDomain, u_init, T: float, record_times=None, dt: float | None = None,
                check_range=(0.0, 1.0)) -> MicroTrajectory:
    """IMEX time stepping from the full-grid initial field ``u_init``."""
    cfg = dom.cfg
    h = cfg.h
    eps = cfg.epsilon
    limit = max_stable_dt(dom, *check_range)
    if dt is None:
        dt = min(limit, 0.25 * h)  # also resolve diffusion time scales reasonably
    elif dt > limit * (1 + 1e-12):
        raise CFLViolation(f"dt = {dt:.3e} exceeds the drift stability limit {limit:.3e}")
    nsteps = max(1, int(math.ceil(T / dt - 1e-12)))
    dt = T / nsteps
    rec = sorted(set([0.0, float(T)] + ([] if record_times is None else [float(t) for t in record_times])))
    rec_steps = {int(round(t / dt)): t for t in rec}

    faces = _faces(dom)
    diff = _Diffusion(dom, faces, dt)
    mask = dom.mask
    pc = np.asarray(dom.P_coeffs, dtype=np.float64)
    crit = _crit_points(dom.P_coeffs)
    h2 = h * h
    gD = eps ** cfg.gamma * cfg.g_D
    X, Y = dom.centers()
    src_const = np.zeros(diff.N)
    if faces.dir_cell.size:
        np.add.at(src_const, faces.dir_cell, 2 * dt * faces.dir_d * gD)
    if cfg.g_N != 0.0:
        np.add.at(src_const, faces.neu_cell, -dt * h * eps * cfg.g_N)

    u = np.where(mask, np.asarray(u_init, dtype=np.float64), 0.0)
    states, times, masses = [], [], []
    mass = lambda v: float(v[mask].sum() * h2)  # noqa: E731
    if 0 in rec_steps:
        states.append(np.where(mask, u, np.nan))
        times.append(0.0)
    masses.append(mass(u))
    max_dm = 0.0
    max_res = 0.0
    for k in range(1, nsteps + 1):
        t = k * dt
        G = kernels.godunov_divergence(u, mask, dom.bx, dom.by, pc, crit)
        max_res = max(max_res, float(np.abs(G[mask]).max()))
        rhs = h2 * u[mask] - (dt * h / eps) * G[mask] + src_const
        f = cfg.f(t, X, Y) if callable(cfg.f) else cfg.f
        if np.any(f != 0):
            rhs = rhs + dt * h2 * np.broadcast_to(f, mask.shape)[mask]
        x = diff.solve(rhs, u[mask])
        old = masses[-1]
        u = np.zeros_like(u)
        u[mask] = x
        masses.append(mass(u))
        max_dm = max(max_dm, abs(masses[-1] - old))
        if k in rec_steps:
            states.append(np.where(mask, u, np.nan))
            times.append(rec_steps[k])
    return MicroTrajectory(dom, np.array(times), states, np.array(masses), max_dm, max_res, nsteps, dt)


# ---------------------------------------------------------------------------
# two-scale reconstruction
# ---------------------------------------------------------------------------


def periodic_bilinear(values, grid: MacroGrid, X, Y, snap: float = 1e-9):
    """Bilinear interpolation of a cell-centred periodic field at points (X, Y)."""
    if not grid.periodic:
        raise FrameOutOfRange("the frame shift needs a periodic macroscopic grid")
    m, h = grid.m, grid.h
    x0 = grid.center[0] - grid.L
    y0 = grid.center[1] - grid.L
    s = (np.asarray(X) - x0) / h - 0.5
    r = (np.asarray(Y) - y0) / h - 0.5
    out = []
    fi = np.floor(s)
    fj = np.floor(r)
    a = s - fi
    b = r - fj
    # snap weights within rounding of a grid node so exact shifts are exact
    fi = np.where(a > 1 - snap, fi + 1, fi)
    a = np.where(a > 1 - snap, 0.0, np.where(a < snap, 0.0, a))
    fj = np.where(b > 1 - snap, fj + 1, fj)
    b = np.where(b > 1 - snap, 0.0, np.where(b < snap, 0.0, b))
    i0 = fi.astype(np.int64) % m
    j0 = fj.astype(np.int64) % m
    i1 = (i0 + 1) % m
    j1 = (j0 + 1) % m
    out = ((1 - a) * (1 - b) * values[i0, j0] + a * (1 - b) * values[i1, j0]
           + (1 - a) * b * values[i0, j1] + a * b * values[i1, j1])
    return out


def central_gradient(values, grid: MacroGrid):
    h = grid.h
    if grid.periodic:
        gx = (np.roll(values, -1, 0) - np.roll(values, 1, 0)) / (2 * h)
        gy = (np.roll(values, -1, 1) - np.roll(values, 1, 1)) / (2 * h)
    else:
        p = np.pad(values, 1)
        gx = (p[2:, 1:-1] - p[:-2, 1:-1]) / (2 * h)
        gy = (p[1:-1, 2:] - p[1:-1, :-2]) / (2 * h)
    return gx, gy


def reconstruct_two_scale(u0, grid: MacroGrid, sol: CellSolution | None, B_star, epsilon: float,
                          t: float, dom: MicroDomain, order: int = 0, shift=None):
    """Predicted micro field u0(t, x - B* t/ε) [+ ε W(x/ε) . grad u0] on the micro grid."""
    if order not in (0, 1):
        raise ValueError("order must be 0 or 1")
    if not grid.periodic:
        raise FrameOutOfRange("the frame shift needs a periodic macroscopic grid")
    X, Y = dom.centers()
    s = np.asarray(B_star, dtype=np.float64) * t / epsilon if shift is None else np.asarray(shift)
    Xs, Ys = X - s[0], Y - s[1]
    pred = periodic_bilinear(u0, grid, Xs, Ys)
    if order == 1 and sol is not None:
        gx, gy = central_gradient(u0, grid)
        K = dom.cfg.torus_cells
        w1 = np.tile(np.nan_to_num(sol.w1), (K, K))
        w2 = np.tile(np.nan_to_num(sol.w2), (K, K))
        pred = pred + epsilon * (w1 * periodic_bilinear(gx, grid, Xs, Ys)
                                 + w2 * periodic_bilinear(gy, grid, Xs, Ys))
    return np.where(dom.mask, pred, np.nan)


def relative_l2(a, b, mask):
    d = a[mask] - b[mask]
    return float(np.sqrt(np.sum(d * d)) / np.sqrt(np.sum(b[mask] ** 2)))


@dataclass
class ConvergenceTable:
    eps: list
    err0: list
    err1: list
    order0: list
    order1: list
    monotone0: bool
    monotone1: bool
    details: list = field(default_factory=list, repr=False)

    def rows(self):
        out = []
        for k, e in enumerate(self.eps):
            o0 = self.order0[k - 1] if k > 0 else None
            o1 = self.order1[k - 1] if k > 0 else None
            out.append(dict(epsilon=e, error_order0=self.err0[k], error_order1=self.err1[k],
                            rate_order0=o0, rate_order1=o1))
        return out


def _orders(errs):
    return [math.log2(a / b) if a > 0 and b > 0 else float("nan") for a, b in zip(errs, errs[1:])]


def make_table(eps, err0, err1, details=(), raise_on_failure=False):
    mono0 = all(b < a for a, b in zip(err0, err0[1:]))
    mono1 = all(b < a for a, b in zip(err1, err1[1:]))
    tab = ConvergenceTable(list(eps), list(err0), list(err1), _orders(err0), _orders(err1),
                           mono0, mono1, list(details))
    if raise_on_failure and not mono0:
        raise NonMonotoneConvergence("two-scale error does not decrease with ε", tab)
    return tab


def periodic_datum(base: float = 0.3, amplitude: float = 0.02, side: float = 1.0):
    """Smooth torus-periodic initial field ``base + amplitude sin(kx) sin(ky)``."""
    k = 2 * math.pi / side

    def g(x, y):
        return base + amplitude * np.sin(k * np.asarray(x)) * np.sin(k * np.asarray(y))
    return g


def convergence_study(eps_list, geom: CellGeometry, coeffs: Coefficients, g, T: float, u0_T,
                      grid: MacroGrid, sol: CellSolution, B_star, side: float = 1.0,
                      dt=None, raise_on_failure: bool = False, micro_kw=None) -> ConvergenceTable:
    """Moving-frame errors e(ε) of the order-0 and order-1 reconstructions at time T.

    ``u0_T`` is the macroscopic field at T on the periodic ``grid`` covering
    the same torus. Errors are L2 over the fluid cells, relative to u^ε(T).
    """
    eps = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    err0, err1, details = [], [], []
    for e in eps:
        cfg = make_micro_config(e, side, geom.n, **(micro_kw or {}))
        dom = build_micro_domain(geom, coeffs, cfg)
        X, Y = dom.centers()
        traj = solve_micro(dom, g(X, Y), T, dt=dt)
        ref = traj.final
        r0 = reconstruct_two_scale(u0_T, grid, sol, B_star, e, T, dom, order=0)
        r1 = reconstruct_two_scale(u0_T, grid, sol, B_star, e, T, dom, order=1)
        # normalised by the micro solution, as the reference field
        err0.append(relative_l2(r0, ref, dom.mask))
        err1.append(relative_l2(r1, ref, dom.mask))
        details.append(dict(epsilon=e, steps=traj.steps, dt=traj.dt, unknowns=int(dom.mask.sum()),
                            max_mass_change=traj.max_mass_change,
                            min=float(np.nanmin(ref)), max=float(np.nanmax(ref))))
    return make_table(eps, err0, err1, details, raise_on_failure)
