"""Effective dispersion tensor D*(u0) assembled from cell correctors.

D*(u0) = M0 + B* M1^T - P'(u0) M2 with

    M0_ij = <[D (e_j + grad w_j)]_i>,  M1_j = <w_j>,  M2_ij = <B_i w_j>,

where <.> is the integral over Z divided by |Z|. The formula is affine in
P'(u0) at fixed 𝔄, so the triple plus B* represents D* for every u0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cell import CellSolution, Coefficients, cell_drift, dP
from .errors import CoercivityViolated, GeometryMismatch
from .geometry import GAMMA_D, GAMMA_N, INTERIOR, PERIODIC, CellGeometry

N_DIRECTIONS = 64
DEFAULT_SLACK = 0.05  # fraction of θ|Z|


def corrector_gradient(geom: CellGeometry, w, j: int):
    """Cell-centred gradient of corrector ``w = w_j`` (fluid cells; NaN on solid).

    Face gradients are averaged over the two faces along each axis. On Γ_N the
    normal derivative is fixed by the zero total-flux condition (-δ_jk along
    axis k); on Γ_D the face value is zero at half-cell distance.
    """
    n, h = geom.n, geom.h
    wz = np.where(geom.cell_mask, w, 0.0)
    grads = []
    for axis, tags in ((0, geom.xface_tags), (1, geom.yface_tags)):
        lo = np.roll(wz, 1, axis=axis)  # w of the cell below/left of each face
        lo_fluid = np.roll(geom.cell_mask, 1, axis=axis)
        g = np.zeros((n, n))
        pair = (tags == INTERIOR) | (tags == PERIODIC)
        g[pair] = (wz[pair] - lo[pair]) / h
        g[tags == GAMMA_N] = -1.0 if axis == j else 0.0
        dsel = tags == GAMMA_D
        g[dsel] = np.where(lo_fluid[dsel], -lo[dsel], wz[dsel]) / (0.5 * h)
        cell = 0.5 * (g + np.roll(g, -1, axis=axis))
        grads.append(np.where(geom.cell_mask, cell, np.nan))
    return grads[0], grads[1]


@dataclass(frozen=True)
class EffectiveTensors:
    B_star: np.ndarray
    M0: np.ndarray
    M1: np.ndarray
    M2: np.ndarray
    P_coeffs: tuple
    A_value: float
    fluid_area: float
    theta: float
    A_energy: np.ndarray = field(default=None, repr=False)

    @property
    def C0(self):
        """u0-independent part M0 + B* M1^T."""
        return self.M0 + np.outer(self.B_star, self.M1)

    def evaluate(self, u0) -> np.ndarray:
        return evaluate_dispersion(self, u0)

    def to_dict(self) -> dict:
        out = {k: np.asarray(getattr(self, k)).tolist() for k in ("B_star", "M0", "M1", "M2")}
        out.update(P_coeffs=list(self.P_coeffs), A_value=self.A_value,
                   fluid_area=self.fluid_area, theta=self.theta)
        if self.A_energy is not None:
            out["A_energy"] = np.asarray(self.A_energy).tolist()
        return out

    @classmethod
    def from_dict(cls, d) -> "EffectiveTensors":
        ae = d.get("A_energy")
        return cls(np.array(d["B_star"]), np.array(d["M0"]), np.array(d["M1"]), np.array(d["M2"]),
                   tuple(d["P_coeffs"]), float(d["A_value"]), float(d["fluid_area"]),
                   float(d["theta"]), None if ae is None else np.array(ae))


def assemble_tensors(geom: CellGeometry, coeffs: Coefficients, sol: CellSolution) -> EffectiveTensors:
    if sol.w1.shape != (geom.n, geom.n):
        raise GeometryMismatch("cell solution does not live on this geometry")
    m = geom.cell_mask
    h2 = geom.h ** 2
    Z = geom.fluid_area
    d = (coeffs.D[..., 0, 0][m], coeffs.D[..., 1, 1][m])
    bcell = cell_drift(coeffs.bx, coeffs.by)
    W = (sol.w1[m], sol.w2[m])
    grads = [tuple(g[m] for g in corrector_gradient(geom, w, j)) for j, w in enumerate(sol.W)]
    M0 = np.zeros((2, 2))
    M2 = np.zeros((2, 2))
    E = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            M0[i, j] = np.sum(d[i] * ((i == j) + grads[j][i])) * h2 / Z
            M2[i, j] = np.sum(bcell[i][m] * W[j]) * h2 / Z
            # energy form <D(e_j + grad w_j).(e_i + grad w_i)>
            E[i, j] = sum(np.sum(d[k] * ((k == j) + grads[j][k]) * ((k == i) + grads[i][k]))
                          for k in range(2)) * h2 / Z
    M1 = np.array([W[0].sum(), W[1].sum()]) * h2 / Z
    return EffectiveTensors(np.asarray(sol.B_star_used, dtype=np.float64), M0, M1, M2,
                            tuple(coeffs.P_coeffs), sol.A_value, Z, coeffs.theta, E)


LATTICE_BITS = 45


def snap_to_lattice(M, bits: int = LATTICE_BITS):
    """Round each 2x2 block to multiples of 2^(e - bits), e the exponent of its largest entry.

    On this lattice the sums, differences and halvings used by
    :func:`decompose` are exact, so A* + J* reproduces D* bit for bit. The
    rounding is about 3e-14 relative, far below the cell-solve tolerance.
    """
    M = np.asarray(M, dtype=np.float64)
    scale = np.abs(M).max(axis=(-2, -1), keepdims=True)
    _, e = np.frexp(np.where(scale > 0, scale, 1.0))
    q = np.ldexp(1.0, e - bits)
    return np.round(M / q) * q


def evaluate_dispersion(tensors: EffectiveTensors, u0) -> np.ndarray:
    """D*(u0); vectorised over ``u0`` (returns shape ``u0.shape + (2, 2)``)."""
    u = np.asarray(u0, dtype=np.float64)
    p = dP(tensors.P_coeffs, u)
    return snap_to_lattice(tensors.C0 - p[..., None, None] * tensors.M2)


def decompose(Dstar):
    """Symmetric part A* = (D + D^T)/2 and skew part J* = (D - D^T)/2."""
    D = np.asarray(Dstar, dtype=np.float64)
    T = np.swapaxes(D, -1, -2)
    return 0.5 * (D + T), 0.5 * (D - T)


def directions(k: int = N_DIRECTIONS):
    ang = np.pi * np.arange(k) / k  # ξ and -ξ give the same quotient
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def min_eig_sym2(A):
    """Closed-form smallest eigenvalue of a symmetric 2x2 matrix."""
    a, b, c = A[..., 0, 0], 0.5 * (A[..., 0, 1] + A[..., 1, 0]), A[..., 1, 1]
    return 0.5 * (a + c) - np.hypot(0.5 * (a - c), b)


@dataclass
class CoercivityReport:
    min_rayleigh: float
    argmin_u0: float
    argmin_xi: tuple
    min_eig: float
    alpha: float
    slack: float
    threshold: float
    passed: bool
    per_sample: list = field(default_factory=list)

    def to_dict(self):
        return dict(min_rayleigh=self.min_rayleigh, argmin_u0=self.argmin_u0,
                    argmin_xi=list(self.argmin_xi), min_eig=self.min_eig, alpha=self.alpha,
                    slack=self.slack, threshold=self.threshold, passed=self.passed,
                    deficit=self.alpha - self.min_rayleigh, per_sample=self.per_sample)


def check_coercivity(tensors: EffectiveTensors, theta=None, fluid_area=None, u0_samples=None,
                     slack=None, n_directions: int = N_DIRECTIONS, raise_on_failure: bool = True):
    theta = tensors.theta if theta is None else float(theta)
    Z = tensors.fluid_area if fluid_area is None else float(fluid_area)
    if u0_samples is None:
        u0_samples = np.linspace(0.0, 1.0, 11)
    u = np.asarray(u0_samples, dtype=np.float64).ravel()
    alpha = theta * Z
    slack = DEFAULT_SLACK * alpha if slack is None else float(slack)
    xi = directions(n_directions)
    Ds = evaluate_dispersion(tensors, u)  # (S, 2, 2)
    rq = np.einsum("ka,sab,kb->sk", xi, Ds, xi)
    s, k = np.unravel_index(np.argmin(rq), rq.shape)
    eig = min_eig_sym2(Ds)
    rep = CoercivityReport(float(rq[s, k]), float(u[s]), (float(xi[k, 0]), float(xi[k, 1])),
                           float(eig.min()), alpha, slack, alpha - slack,
                           bool(rq.min() >= alpha - slack),
                           [dict(u0=float(u[t]), min_rayleigh=float(rq[t].min()),
                                 min_eig=float(eig[t])) for t in range(u.size)])
    if not rep.passed and raise_on_failure:
        raise CoercivityViolated(
            f"min Rayleigh quotient {rep.min_rayleigh:.6g} at u0={rep.argmin_u0:.3g} "
            f"below threshold {rep.threshold:.6g}", rep)
    return rep


def effective_tensors(geom: CellGeometry, coeffs: Coefficients, A_value: float, tol: float = 1e-10):
    """Convenience: B*, cell solve and tensor assembly in one call."""
    from .cell import compute_effective_drift, solve_cell_problems
    bs = compute_effective_drift(geom, coeffs, A_value)
    sol = solve_cell_problems(geom, coeffs, A_value, bs, tol=tol)
    return assemble_tensors(geom, coeffs, sol), sol
