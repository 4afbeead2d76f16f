"""Upscaled quasi-linear parabolic problem on the truncated square Ω_L.

    du0/dt = div(D*(u0) grad u0) + f~   in Ω_L,   u0 = 0 on ∂Ω_L,   u0(0) = g,

coupled to the cell problems through the scalar 𝔄, the space-time average of
P'(u0). Backward Euler with Picard sub-iterations; the full tensor (symmetric
and skew part) enters the face fluxes.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .cell import (Coefficients, compute_effective_drift, dP, poly_derivative,
                   poly_eval, solve_cell_problems)
from .errors import (CoercivityViolated, ComparisonViolated, EmptyHistory, InversionFailed,
                     LinearSolveFailed, MonotonicityViolated, NotConverged, NotIsotropic,
                     OrderingPreconditionFailed, OuterIterationNotConverged,
                     PicardNotConverged, PositivityViolated, SignConditionViolated)
from .geometry import GAMMA_N, CellGeometry, MacroGrid, build_macro_grid
from .sparse import assemble_arrays, solve
from .tensors import DEFAULT_SLACK, EffectiveTensors, assemble_tensors, min_eig_sym2

PICARD_TOL = 1e-8
PICARD_MAX = 50
OUTER_TOL = 1e-8
OUTER_MAX = 40


# ---------------------------------------------------------------------------
# sources
# ---------------------------------------------------------------------------


@dataclass
class SourceData:
    """Volume source f on Z, Neumann flux g_N on Γ_N, initial datum g on the plane.

    ``f`` and ``g_N`` are scalars, arrays (f per cell, g_N per Γ_N face) or
    callables of time returning either. ``g`` is a callable ``g(x, y)``.
    """

    f: object = 0.0
    g_N: object = 0.0
    g: object = None
    g_sup: float | None = None

    def f_at(self, t):
        return self.f(t) if callable(self.f) else self.f

    def gN_at(self, t):
        return self.g_N(t) if callable(self.g_N) else self.g_N


def _gamma_N_lengths(geom: CellGeometry):
    k = int((geom.xface_tags == GAMMA_N).sum() + (geom.yface_tags == GAMMA_N).sum())
    return k, geom.h


def _source_integrals(source: SourceData, geom: CellGeometry, t: float):
    h2 = geom.h ** 2
    f = np.asarray(source.f_at(t), dtype=np.float64)
    if f.ndim == 0:
        fint = float(f) * geom.fluid_area
        fl2 = abs(float(f)) * math.sqrt(geom.fluid_area)
    else:
        vals = f[geom.cell_mask] if f.shape == geom.cell_mask.shape else f.ravel()
        fint = float(vals.sum() * h2)
        fl2 = float(math.sqrt(np.sum(vals ** 2) * h2))
    gn = np.asarray(source.gN_at(t), dtype=np.float64)
    k, h = _gamma_N_lengths(geom)
    if gn.ndim == 0:
        gint = float(gn) * geom.gamma_N_length
        gl2 = abs(float(gn)) * math.sqrt(geom.gamma_N_length)
    else:
        if gn.size != k:
            raise ValueError(f"g_N has {gn.size} values, Γ_N has {k} faces")
        gint = float(gn.sum() * h)
        gl2 = float(math.sqrt(np.sum(gn ** 2) * h))
    return fint, gint, fl2, gl2


def compute_source(source: SourceData, geom: CellGeometry, times=(0.0,), check: bool = True):
    """f~(t) = (∫_Z f - ∫_{Γ_N} g_N) / |Z| at each time; scalar when one time is given."""
    out = []
    for t in np.atleast_1d(times):
        fint, gint, _, _ = _source_integrals(source, geom, float(t))
        net = fint - gint
        val = net / geom.fluid_area
        if check and net < 0:
            raise SignConditionViolated(
                f"∫_Z f - ∫_Γ_N g_N = {net:.6g} < 0 at t = {float(t):g} (f~ = {val:.6g})")
        out.append(val)
    return out[0] if len(out) == 1 else np.array(out)


def source_norms(source: SourceData, geom: CellGeometry, times=(0.0,)):
    """sup over time samples of ||f||_{L2(Z)} and ||g_N||_{L2(Γ_N)}."""
    fl, gl = 0.0, 0.0
    for t in np.atleast_1d(times):
        _, _, a, b = _source_integrals(source, geom, float(t))
        fl, gl = max(fl, a), max(gl, b)
    return fl, gl


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------


def initial_datum(family: str = "bump", amplitude: float = 0.8, radius: float = 1.5,
                  center=(0.0, 0.0), sigma: float = 0.5):
    """Built-in compactly supported initial data, values between 0 and ``amplitude``.

    A negative amplitude is accepted here so that assumption A5 can report it.
    """
    cx, cy = center
    a = float(amplitude)
    R = float(radius)

    if family == "bump":
        def g(x, y):
            r2 = ((x - cx) ** 2 + (y - cy) ** 2) / R ** 2
            with np.errstate(divide="ignore", over="ignore"):
                v = np.where(r2 < 1.0, a * np.exp(1.0 - 1.0 / np.maximum(1.0 - r2, 1e-300)), 0.0)
            return v
    elif family == "gaussian":
        def g(x, y):
            r2 = (x - cx) ** 2 + (y - cy) ** 2
            v = a * np.exp(-0.5 * r2 / sigma ** 2)
            return np.clip(np.where(r2 < R ** 2, v, 0.0), 0.0, 1.0)
    elif family == "disk":
        def g(x, y):
            return np.where((x - cx) ** 2 + (y - cy) ** 2 < R ** 2, a, 0.0)
    elif family == "square":
        def g(x, y):
            return np.where((np.abs(x - cx) < R) & (np.abs(y - cy) < R), a, 0.0)
    else:
        raise ValueError(f"unknown initial-datum family {family!r}")
    return g


# ---------------------------------------------------------------------------
# state and stepping
# ---------------------------------------------------------------------------


@dataclass
class MacroState:
    grid: MacroGrid
    u0: np.ndarray
    t: float = 0.0
    A_value: float = float("nan")


@dataclass
class Trajectory:
    grid: MacroGrid
    times: np.ndarray
    states: np.ndarray  # (steps + 1, m, m)
    A_value: float
    picard_iterations: list = field(default_factory=list)
    dt: float = float("nan")

    @property
    def final(self):
        return self.states[-1]

    def mass(self):
        return self.states.sum(axis=(1, 2)) * self.grid.h ** 2


def _coercivity_floor(tensors: EffectiveTensors, threshold):
    if threshold is not None:
        return float(threshold)
    return tensors.theta * tensors.fluid_area * (1.0 - DEFAULT_SLACK)


def _check_range_coercive(tensors: EffectiveTensors, u, floor):
    # min eigenvalue of the symmetric part is concave in P'(u), so the
    # extremes of P' over the current iterate bound it from below
    dpc = poly_derivative(tensors.P_coeffs)
    lo, hi = float(np.min(u)), float(np.max(u))
    grid = np.linspace(lo, hi, 17)
    crit = _real_roots_in(poly_derivative(dpc), lo, hi)
    p = poly_eval(dpc, np.concatenate([grid, crit]))
    pe = np.array([p.min(), p.max()])
    Ds = tensors.C0[None] - pe[:, None, None] * tensors.M2[None]
    lam = min_eig_sym2(Ds).min()
    if lam < floor:
        raise CoercivityViolated(
            f"D*(u0) lost coercivity on [{lo:.4g}, {hi:.4g}]: min eigenvalue {lam:.6g} < {floor:.6g}")
    return lam


def _real_roots_in(coeffs, lo, hi):
    c = np.trim_zeros(np.asarray(coeffs, dtype=np.float64), "b")
    if c.size <= 1:
        return np.zeros(0)
    r = np.roots(c[::-1])
    r = r[np.abs(r.imag) < 1e-12].real
    return r[(r > lo) & (r < hi)]


def macro_operator(u, grid: MacroGrid, dt: float, tensors: EffectiveTensors):
    c0 = np.ascontiguousarray(tensors.C0, dtype=np.float64)
    m2 = np.ascontiguousarray(tensors.M2, dtype=np.float64)
    dpc = np.asarray(poly_derivative(tensors.P_coeffs), dtype=np.float64)
    r, c, v = kernels.macro_triplets(np.ascontiguousarray(u, dtype=np.float64), grid.h, dt,
                                     c0, m2, dpc, grid.periodic)
    sym = tensors.C0[0, 1] == 0.0 and tensors.C0[1, 0] == 0.0 and tensors.M2[0, 1] == 0.0 \
        and tensors.M2[1, 0] == 0.0
    return assemble_arrays(r, c, v, grid.n_cells, symmetric=bool(sym))


def step_parabolic(state: MacroState, dt: float, tensors: EffectiveTensors, f_tilde: float = 0.0,
                   picard_tol: float = PICARD_TOL, picard_max: int = PICARD_MAX,
                   lin_tol: float = 1e-12, coercivity_threshold=None):
    """One backward-Euler step with lagged D*; returns ``(new_state, picard_iterations)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    grid = state.grid
    h2 = grid.h ** 2
    u_old = state.u0
    rhs = (h2 / dt) * u_old.ravel() + h2 * float(f_tilde)
    floor = _coercivity_floor(tensors, coercivity_threshold)
    u = u_old.copy()
    for k in range(1, picard_max + 1):
        _check_range_coercive(tensors, u, floor)
        A = macro_operator(u, grid, dt, tensors)
        try:
            x, _ = solve(A, rhs, tol=lin_tol, x0=u.ravel())
        except NotConverged as exc:
            raise LinearSolveFailed(str(exc)) from exc
        u_new = x.reshape(u.shape)
        diff = float(np.abs(u_new - u).max())
        u = u_new
        if diff < picard_tol:
            return MacroState(grid, u, state.t + dt, state.A_value), k
    raise PicardNotConverged(f"Picard sub-iteration did not reach {picard_tol:g} in {picard_max} steps "
                             f"(last change {diff:.3e})")


def choose_dt(grid: MacroGrid, tensors: EffectiveTensors, policy="auto", T=None):
    """Time step: ``'auto'`` takes h/4 when J* vanishes over u in [0, 1], else h^2/4."""
    h = grid.h
    if isinstance(policy, (int, float)):
        dt = float(policy)
    elif policy == "auto":
        us = np.linspace(0.0, 1.0, 21)
        P = dP(tensors.P_coeffs, us)
        Ds = tensors.C0[None] - P[:, None, None] * tensors.M2[None]
        skew = np.abs(0.5 * (Ds[:, 0, 1] - Ds[:, 1, 0])).max()
        scale = np.abs(Ds).max()
        dt = h / 4 if skew <= 1e-8 * scale else h * h / 4
    elif policy == "parabolic":
        dt = h * h / 4
    elif policy == "diffusive":
        dt = h / 4
    else:
        raise ValueError(f"unknown dt policy {policy!r}")
    if T is not None and T > 0:
        nsteps = max(1, int(math.ceil(T / dt - 1e-12)))
        dt = T / nsteps
    return dt


def sample_initial(grid: MacroGrid, g):
    X, Y = grid.centers()
    u = np.asarray(g(X, Y), dtype=np.float64)
    if np.any(u < 0):
        raise ValueError("initial datum must be nonnegative")
    return u


def sweep(grid: MacroGrid, u_init, tensors: EffectiveTensors, T: float, dt: float,
          f_tilde=0.0, **step_kw) -> Trajectory:
    """Backward-Euler sweep over [0, T]; ``f_tilde`` is a scalar or callable of t."""
    nsteps = max(1, int(round(T / dt)))
    states = np.empty((nsteps + 1,) + u_init.shape)
    states[0] = u_init
    st = MacroState(grid, np.array(u_init, dtype=np.float64), 0.0, tensors.A_value)
    its = []
    for n in range(nsteps):
        ft = f_tilde(st.t + dt) if callable(f_tilde) else f_tilde
        st, k = step_parabolic(st, dt, tensors, ft, **step_kw)
        states[n + 1] = st.u0
        its.append(k)
    times = np.arange(nsteps + 1) * dt
    return Trajectory(grid, times, states, tensors.A_value, its, dt)


# ---------------------------------------------------------------------------
# the nonlocal average
# ---------------------------------------------------------------------------


def compute_average_A(history, P_coeffs, convention: str = "domain-average", support_threshold=None,
                      times=None):
    """Space-time average of P'(u0): trapezoid in t, midpoint in x.

    ``history`` is a :class:`Trajectory` or a sequence of spatial snapshots
    (then ``times`` must be given, or unit spacing is assumed).
    """
    if isinstance(history, Trajectory):
        states, times = history.states, history.times
    else:
        states = np.asarray(history, dtype=np.float64)
        if states.size == 0:
            raise EmptyHistory("no stored time steps")
        times = np.arange(states.shape[0], dtype=np.float64) if times is None else np.asarray(times)
    if states.ndim < 2 or states.shape[0] == 0:
        raise EmptyHistory("no stored time steps")
    pd = dP(P_coeffs, states)
    axes = tuple(range(1, states.ndim))
    if convention == "domain-average":
        per_t = pd.mean(axis=axes)
        weight = np.ones_like(per_t)
    elif convention == "support-average":
        thr = support_threshold
        if thr is None:
            thr = 1e-3 * float(np.abs(states[0]).max())
        on = states > thr
        per_t = np.where(on, pd, 0.0).sum(axis=axes)
        weight = on.sum(axis=axes).astype(np.float64)
    else:
        raise ValueError(f"unknown 𝔄 convention {convention!r}")
    if states.shape[0] == 1:
        return float(per_t[0] / weight[0]) if weight[0] > 0 else float(dP(P_coeffs, 0.0))
    num = np.trapezoid(per_t, times) if hasattr(np, "trapezoid") else np.trapz(per_t, times)
    den = np.trapezoid(weight, times) if hasattr(np, "trapezoid") else np.trapz(weight, times)
    if den <= 0:
        return float(dP(P_coeffs, 0.0))
    return float(num / den)


# ---------------------------------------------------------------------------
# outer fixed point
# ---------------------------------------------------------------------------


@dataclass
class FixedPointReport:
    converged: bool
    A_star: float
    iterates: list
    residuals: list
    evaluations: int
    damping: float
    wall_time: float = 0.0

    def to_dict(self):
        return dict(converged=self.converged, A_star=self.A_star, iterates=self.iterates,
                    residuals=self.residuals, evaluations=self.evaluations, damping=self.damping,
                    wall_time=self.wall_time)


@dataclass
class CoupledProblem:
    geom: CellGeometry
    coeffs: Coefficients
    grid: MacroGrid
    g: object
    T: float
    f_tilde: float = 0.0
    dt_policy: object = "auto"
    damping: float = 0.5
    convention: str = "domain-average"
    support_threshold: float | None = None
    outer_tol: float = OUTER_TOL
    outer_max: int = OUTER_MAX
    cell_tol: float = 1e-10
    coercivity_threshold: float | None = None


def tensors_at(problem: CoupledProblem, A_value: float) -> EffectiveTensors:
    bs = compute_effective_drift(problem.geom, problem.coeffs, A_value)
    sol = solve_cell_problems(problem.geom, problem.coeffs, A_value, bs, tol=problem.cell_tol)
    return assemble_tensors(problem.geom, problem.coeffs, sol)


def solve_coupled(problem: CoupledProblem, A_initial: float | None = None, raise_on_failure=True):
    """Damped fixed point on 𝔄; returns ``(trajectory, tensors, report)``."""
    t0 = time.perf_counter()
    u_init = sample_initial(problem.grid, problem.g)
    P = problem.coeffs.P_coeffs
    if A_initial is None:
        A_initial = compute_average_A(u_init[None], P, problem.convention, problem.support_threshold)
    # the trajectory ignores 𝔄 when P' is constant or the drift vanishes:
    # one evaluation of the map is then already the fixed point
    dpc = np.trim_zeros(np.asarray(poly_derivative(P)), "b")
    decoupled = dpc.size <= 1 or not problem.coeffs.has_drift
    A = float(A_initial)
    iterates, residuals = [A], []
    traj = tens = None
    for k in range(problem.outer_max):
        tens = tensors_at(problem, A)
        dt = choose_dt(problem.grid, tens, problem.dt_policy, problem.T)
        traj = sweep(problem.grid, u_init, tens, problem.T, dt, problem.f_tilde,
                     coercivity_threshold=problem.coercivity_threshold)
        G = compute_average_A(traj, P, problem.convention, problem.support_threshold)
        res = abs(G - A)
        residuals.append(res)
        if decoupled:
            if res > 0:
                tens = tensors_at(problem, G) if problem.coeffs.has_drift else \
                    EffectiveTensors(tens.B_star, tens.M0, tens.M1, tens.M2, tens.P_coeffs, G,
                                     tens.fluid_area, tens.theta, tens.A_energy)
                traj.A_value = G
            A = G
            iterates.append(A)
            rep = FixedPointReport(True, A, iterates, residuals, k + 1, 1.0,
                                   time.perf_counter() - t0)
            return traj, tens, rep
        if res < problem.outer_tol:
            rep = FixedPointReport(True, A, iterates, residuals, k + 1, problem.damping,
                                   time.perf_counter() - t0)
            return traj, tens, rep
        A = (1.0 - problem.damping) * A + problem.damping * G
        iterates.append(A)
    rep = FixedPointReport(False, A, iterates, residuals, problem.outer_max, problem.damping,
                           time.perf_counter() - t0)
    if raise_on_failure:
        raise OuterIterationNotConverged(
            f"𝔄 iteration stalled after {problem.outer_max} evaluations (residual {residuals[-1]:.3e})",
            rep)
    return traj, tens, rep


# ---------------------------------------------------------------------------
# property checks
# ---------------------------------------------------------------------------


@dataclass
class PositivityReport:
    min_value: float
    time_index: int
    location: tuple
    passed: bool


def check_positivity(traj: Trajectory, tol: float = 1e-10, raise_on_failure=True) -> PositivityReport:
    s = traj.states
    k = int(np.argmin(s))
    t, i, j = np.unravel_index(k, s.shape)
    X, Y = traj.grid.centers()
    rep = PositivityReport(float(s.min()), int(t), (float(X[i, j]), float(Y[i, j])),
                           bool(s.min() >= -tol))
    if not rep.passed and raise_on_failure:
        raise PositivityViolated(f"min u0 = {rep.min_value:.3e} at t = {traj.times[t]:g}, x = {rep.location}")
    return rep


def linf_bound(g_sup: float, T: float, f_norm: float = 0.0, gN_norm: float = 0.0) -> float:
    return float(g_sup) + float(T) * (float(f_norm) + float(gN_norm))


def check_linf_bound(traj: Trajectory, bound: float, tol: float = 1e-8):
    mx = float(np.abs(traj.states).max())
    return dict(max_abs=mx, bound=bound, passed=mx <= bound + tol)


@dataclass
class ComparisonReport:
    max_violation: float
    passed: bool
    max_abs_difference: float


def check_comparison(traj_1: Trajectory, traj_2: Trajectory, tol: float = 1e-8,
                     raise_on_failure=True) -> ComparisonReport:
    """u_1 <= u_2 + tol at all stored times, given g_1 <= g_2."""
    a, b = traj_1.states, traj_2.states
    if a.shape != b.shape:
        raise ValueError("trajectories live on different grids or time levels")
    if np.any(a[0] > b[0]):
        raise OrderingPreconditionFailed("initial data are not ordered (g_1 <= g_2 fails)")
    viol = float((a - b).max())
    rep = ComparisonReport(viol, viol <= tol, float(np.abs(a - b).max()))
    if not rep.passed and raise_on_failure:
        raise ComparisonViolated(f"u_1 exceeds u_2 by {viol:.3e}")
    return rep


# ---------------------------------------------------------------------------
# Kirchhoff transformation
# ---------------------------------------------------------------------------


def scalar_dispersion(tensors: EffectiveTensors, tol: float = 1e-10):
    """Coefficients of d* with D*(u) = d*(u) I, or NotIsotropic."""
    for M, name in ((tensors.C0, "M0 + B* M1^T"), (tensors.M2, "M2")):
        off = max(abs(M[0, 1]), abs(M[1, 0]))
        if off >= tol or abs(M[0, 0] - M[1, 1]) >= tol:
            raise NotIsotropic(f"{name} is not a multiple of the identity "
                               f"(off-diagonal {off:.2e}, diagonal gap {abs(M[0, 0] - M[1, 1]):.2e})")
    dpc = np.asarray(poly_derivative(tensors.P_coeffs), dtype=np.float64)
    c = -float(0.5 * (tensors.M2[0, 0] + tensors.M2[1, 1])) * dpc
    c[0] += 0.5 * (tensors.C0[0, 0] + tensors.C0[1, 1])
    return tuple(c)


class Kirchhoff:
    """Θ(u) = ∫_0^u d*(τ) dτ for polynomial d*, with β = Θ^{-1} on [lo, hi]."""

    def __init__(self, d_coeffs, lo: float = 0.0, hi: float = 1.0):
        self.d = np.asarray(d_coeffs, dtype=np.float64)
        self.theta = np.concatenate([[0.0], self.d / np.arange(1, self.d.size + 1)])
        self.lo, self.hi = float(lo), float(hi)
        grid = np.linspace(self.lo, self.hi, 1001)
        dv = poly_eval(self.d, grid)
        crit = _real_roots_in(self.d, self.lo, self.hi)
        if dv.min() <= 0 or (crit.size and poly_eval(self.d, crit).min() <= 0):
            raise InversionFailed("d* is not positive on the admissible range; Θ is not invertible")

    def Theta(self, u):
        return poly_eval(self.theta, u)

    def dTheta(self, u):
        return poly_eval(self.d, u)

    def beta(self, s, tol: float = 1e-14, max_iter: int = 100):
        """Monotone inverse by safeguarded Newton-bisection, vectorised."""
        s = np.asarray(s, dtype=np.float64)
        a = np.full(s.shape, self.lo)
        b = np.full(s.shape, self.hi)
        ta, tb = self.Theta(a), self.Theta(b)
        if np.any(s < ta - 1e-12) or np.any(s > tb + 1e-12):
            raise InversionFailed(f"Θ-value outside [{ta.min():.6g}, {tb.max():.6g}]")
        x = a + (b - a) * np.clip((s - ta) / np.where(tb > ta, tb - ta, 1.0), 0, 1)
        for _ in range(max_iter):
            fx = self.Theta(x) - s
            a = np.where(fx < 0, x, a)
            b = np.where(fx >= 0, x, b)
            xn = x - fx / self.dTheta(x)
            bad = (xn <= a) | (xn >= b) | ~np.isfinite(xn)
            xn = np.where(bad, 0.5 * (a + b), xn)
            if np.all(np.abs(xn - x) <= tol * (1 + np.abs(x))):
                return xn
            x = xn
        if np.max(np.abs(self.Theta(x) - s)) > 1e-10:
            raise InversionFailed("β iteration did not converge")
        return x


def _laplacian(grid: MacroGrid):
    m = grid.m
    idx = np.arange(m * m).reshape(m, m)
    R, C, V = [idx.ravel()], [idx.ravel()], [np.zeros(m * m)]
    for axis in (0, 1):
        if grid.periodic:
            a, b = np.roll(idx, 1, axis=axis), idx
        else:
            sl = [slice(None), slice(None)]
            sl2 = [slice(None), slice(None)]
            sl[axis] = slice(0, m - 1)
            sl2[axis] = slice(1, m)
            a, b = idx[tuple(sl)], idx[tuple(sl2)]
            for edge in (0, m - 1):
                e = [slice(None), slice(None)]
                e[axis] = edge
                R.append(idx[tuple(e)])
                C.append(idx[tuple(e)])
                V.append(np.full(m, 2.0))
        a, b = a.ravel(), b.ravel()
        one = np.ones(a.size)
        R += [a, a, b, b]
        C += [a, b, b, a]
        V += [one, -one, one, -one]
    return np.concatenate(R), np.concatenate(C), np.concatenate(V)


def kirchhoff_solve(grid: MacroGrid, u_init, tensors: EffectiveTensors, T: float, dt: float,
                    f_tilde: float = 0.0, newton_tol: float = 1e-12, newton_max: int = 50,
                    u_range=(0.0, 1.0)) -> Trajectory:
    """Backward Euler for dβ(Θ)/dt - ΔΘ = f~ with Newton on Θ."""
    kt = Kirchhoff(scalar_dispersion(tensors), *u_range)
    h2 = grid.h ** 2
    R, C, V = _laplacian(grid)
    N = grid.n_cells
    nsteps = max(1, int(round(T / dt)))
    states = np.empty((nsteps + 1,) + u_init.shape)
    states[0] = u_init
    theta = kt.Theta(u_init.ravel())
    u_old = u_init.ravel().copy()
    diag_idx = np.arange(N)
    K = assemble_arrays(R, C, V, N)
    its = []
    for n in range(nsteps):
        for k in range(1, newton_max + 1):
            u = kt.beta(theta)
            F = (h2 / dt) * (u - u_old) + K.matvec(theta) - h2 * f_tilde
            jac = assemble_arrays(np.concatenate([R, diag_idx]), np.concatenate([C, diag_idx]),
                                  np.concatenate([V, (h2 / dt) / kt.dTheta(u)]), N, symmetric=True)
            try:
                delta, _ = solve(jac, -F, tol=1e-13)
            except NotConverged as exc:
                raise LinearSolveFailed(str(exc)) from exc
            theta = theta + delta
            if np.abs(delta).max() < newton_tol:
                break
        else:
            raise PicardNotConverged("Newton iteration on Θ did not converge")
        its.append(k)
        u_old = kt.beta(theta)
        states[n + 1] = u_old.reshape(u_init.shape)
    return Trajectory(grid, np.arange(nsteps + 1) * dt, states, tensors.A_value, its, dt)


def synthetic_isotropic_tensors(d0: float, d1: float, P_coeffs=(0.0, 1.0, -1.0), theta=None):
    """EffectiveTensors with D*(u) = (d0 - d1 P'(u)) I, for Kirchhoff checks."""
    C0 = d0 * np.eye(2)
    M2 = d1 * np.eye(2)
    th = d0 - abs(d1) * 1.0 if theta is None else theta
    return EffectiveTensors(np.zeros(2), C0, np.zeros(2), M2, tuple(P_coeffs), float("nan"), 1.0,
                            float(th))


def restrict(u_fine):
    """2x2 block average onto the next coarser grid."""
    m = u_fine.shape[-1] // 2
    return u_fine.reshape(u_fine.shape[:-2] + (m, 2, m, 2)).mean(axis=(-3, -1))


# ---------------------------------------------------------------------------
# growing domains
# ---------------------------------------------------------------------------


@dataclass
class SweepReport:
    L_list: list
    max_violation: list
    tail_norms: list
    passed: bool
    tails_decreasing: bool
    trajectories: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return dict(L_list=self.L_list, max_violation=self.max_violation, tail_norms=self.tail_norms,
                    passed=self.passed, tails_decreasing=self.tails_decreasing)


def domain_sweep(L_list, h: float, g, tensors: EffectiveTensors, T: float, dt: float,
                 f_tilde=0.0, tol: float = 1e-8, raise_on_failure=True, **step_kw) -> SweepReport:
    """Solve on nested squares at fixed h and compare the zero extensions."""
    L_list = [float(v) for v in L_list]
    if any(b <= a for a, b in zip(L_list, L_list[1:])):
        raise ValueError("L_list must be strictly increasing")
    trajs = []
    for L in L_list:
        m = int(round(2 * L / h))
        if abs(m * h - 2 * L) > 1e-9 * L:
            raise ValueError(f"L = {L} is not a multiple of h/2 = {h / 2}")
        grid = build_macro_grid(L, m)
        trajs.append(sweep(grid, sample_initial(grid, g), tensors, T, dt, f_tilde, **step_kw))
    viol, tails = [], []
    for a, b in zip(trajs, trajs[1:]):
        off = (b.grid.m - a.grid.m) // 2
        inner = b.states[:, off:off + a.grid.m, off:off + a.grid.m]
        viol.append(float((a.states - inner).max()))
        ext = np.zeros_like(b.states[-1])
        ext[off:off + a.grid.m, off:off + a.grid.m] = a.states[-1]
        tails.append(float(np.sqrt(np.sum((b.states[-1] - ext) ** 2)) * h))
    passed = all(v <= tol for v in viol)
    dec = all(t2 < t1 for t1, t2 in zip(tails, tails[1:]))
    rep = SweepReport(L_list, viol, tails, passed, dec, trajs)
    if raise_on_failure and not passed:
        raise MonotonicityViolated(f"ũ_L not monotone in L: max violations {viol}")
    return rep
