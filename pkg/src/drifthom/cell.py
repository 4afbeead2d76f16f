"""Cell problems for the correctors w_1, w_2 on the perforated periodic cell.

Cell-centred finite volumes: two-point diffusive fluxes with harmonic face
averages of D, first-order upwinding of the drift, periodic wrap on the outer
boundary, the Neumann part of the obstacle carried through the face flux and
the Dirichlet part imposed with a half-cell distance.

With G_i = -D(grad w_i + e_i) + A B w_i the total flux, the discrete equation
on every fluid cell is

    sum over faces of G_i . n |f| = |P| (B*_i - A B_i(P)),

and the Neumann condition makes G_i . n vanish on Γ_N, i.e.
(-D grad w_i + A B w_i) . n = (D e_i) . n. This is the sign that the
two-scale expansion produces and the only one for which the B = 0 limit gives
the classical perforated-cell tensor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CutoffOverlapsOuterBoundary, GeometryMismatch
from .geometry import (GAMMA_D, GAMMA_N, INACTIVE, INTERIOR, PERIODIC,
                       CellGeometry)
from .sparse import SparseMatrix, assemble_arrays, solve

DEFAULT_P = (0.0, 1.0, -1.0)


# ---------------------------------------------------------------------------
# polynomial helpers
# ---------------------------------------------------------------------------


def poly_eval(coeffs, r):
    """P(r) for ascending coefficients ``(a0, a1, ..., am)``."""
    r = np.asarray(r, dtype=np.float64)
    out = np.zeros_like(r)
    for a in reversed(tuple(coeffs)):
        out = out * r + a
    return out


def poly_derivative(coeffs):
    c = tuple(float(a) for a in coeffs)
    if len(c) <= 1:
        return (0.0,)
    return tuple(k * c[k] for k in range(1, len(c)))


def dP(coeffs, r):
    return poly_eval(poly_derivative(coeffs), r)


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Coefficients:
    """D per cell (shape (n, n, 2, 2)), normal drift on x- and y-faces, P and θ."""

    D: np.ndarray
    bx: np.ndarray
    by: np.ndarray
    P_coeffs: tuple = DEFAULT_P
    theta: float = 1.0

    @property
    def n(self) -> int:
        return self.D.shape[0]

    @property
    def has_drift(self) -> bool:
        return bool(np.any(self.bx != 0.0) or np.any(self.by != 0.0))


def make_coefficients(geom: CellGeometry, D=1.0, drift=None, P_coeffs=DEFAULT_P,
                      theta: float = 1.0) -> Coefficients:
    """Assemble a :class:`Coefficients` record.

    ``D`` may be a scalar, a 2x2 matrix or an ``(n, n, 2, 2)`` field; the
    two-point flux only sees the diagonal, so off-diagonal entries are
    rejected. ``drift`` is ``None`` (no drift) or a pair ``(bx, by)`` of face
    fields, typically from :func:`generate_admissible_drift`.
    """
    n = geom.n
    Darr = np.asarray(D, dtype=np.float64)
    if Darr.ndim == 0:
        Darr = Darr * np.eye(2)
    if Darr.shape == (2, 2):
        Darr = np.broadcast_to(Darr, (n, n, 2, 2)).copy()
    if Darr.shape != (n, n, 2, 2):
        raise GeometryMismatch(f"D has shape {Darr.shape}, expected (2, 2) or ({n}, {n}, 2, 2)")
    if np.any(Darr[..., 0, 1] != 0.0) or np.any(Darr[..., 1, 0] != 0.0):
        raise ValueError("two-point fluxes need a diagonal diffusion tensor")
    if drift is None:
        bx = np.zeros((n, n))
        by = np.zeros((n, n))
    else:
        bx, by = (np.array(a, dtype=np.float64) for a in drift)
        if bx.shape != (n, n) or by.shape != (n, n):
            raise GeometryMismatch("drift face arrays do not match the cell grid")
    return Coefficients(Darr, bx, by, tuple(float(a) for a in P_coeffs), float(theta))


# ---------------------------------------------------------------------------
# admissible drift
# ---------------------------------------------------------------------------


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def stream_function(geom: CellGeometry, mean_flow=(1.0, 0.0), cutoff_radius: float = 0.25):
    """Nodal stream function on the ``(n+1) x (n+1)`` vertex grid, in grid units.

    Linear ``m1 j - m2 i`` away from the obstacle, blended by a quintic
    cutoff to the constant value at the obstacle centre. Values are rounded
    to a dyadic lattice so every face difference and every cell balance is
    computed without rounding.
    """
    n = geom.n
    m1, m2 = (float(v) for v in mean_flow)
    # lattice spacing 2^-q leaves headroom for four-term sums of differences
    mag = (abs(m1) + abs(m2)) * 2 * n + 1.0
    q = 50 - int(math.ceil(math.log2(mag)))
    quantum = 2.0 ** (-q)
    m1 = round(m1 / quantum) * quantum
    m2 = round(m2 / quantum) * quantum
    ii, jj = np.meshgrid(np.arange(n + 1, dtype=np.float64), np.arange(n + 1, dtype=np.float64),
                         indexing="ij")
    psi_lin = m1 * jj - m2 * ii
    if geom.obstacle is None:
        return psi_lin, (m1, m2)
    x0, x1, y0, y1 = geom.obstacle
    r = float(cutoff_radius)
    if r <= 0:
        raise ValueError("cutoff_radius must be positive")
    if x0 - r < 0 or y0 - r < 0 or x1 + r > 1 or y1 + r > 1:
        raise CutoffOverlapsOuterBoundary(
            f"cutoff radius {r} around obstacle {geom.obstacle} leaves the unit cell")
    h = geom.h
    X, Y = ii * h, jj * h
    dx = np.maximum(np.maximum(x0 - X, X - x1), 0.0)
    dy = np.maximum(np.maximum(y0 - Y, Y - y1), 0.0)
    d = np.hypot(dx, dy)
    chi = 1.0 - _smoothstep(d / r)
    I0, I1, J0, J1 = geom.obstacle_index
    psi_c = m1 * (0.5 * (J0 + J1)) - m2 * (0.5 * (I0 + I1))
    psi = (1.0 - chi) * psi_lin + chi * psi_c
    psi = np.where(chi == 1.0, psi_c, psi)
    psi = np.round(psi / quantum) * quantum
    return psi, (m1, m2)


def generate_admissible_drift(geom: CellGeometry, mean_flow=(1.0, 0.0), cutoff_radius: float = 0.25):
    """Discretely divergence-free face drift, tangential on the whole obstacle boundary.

    Returns ``(bx, by)`` with ``bx[i, j]`` the y1-velocity through x-face
    ``(i, j)`` and ``by[i, j]`` the y2-velocity through y-face ``(i, j)``.
    """
    psi, _ = stream_function(geom, mean_flow, cutoff_radius)
    bx = psi[:-1, 1:] - psi[:-1, :-1]
    by = -(psi[1:, :-1] - psi[:-1, :-1])
    # faces touching only solid cells carry no flow
    bx = np.where(geom.xface_tags == INACTIVE, 0.0, bx)
    by = np.where(geom.yface_tags == INACTIVE, 0.0, by)
    return bx, by


def drift_divergence(geom: CellGeometry, bx, by):
    """Discrete divergence (net outward flux / cell area) on every fluid cell."""
    n = geom.n
    div = (np.roll(bx, -1, axis=0) - bx + np.roll(by, -1, axis=1) - by) * n
    return np.where(geom.cell_mask, div, 0.0)


def cell_drift(bx, by):
    """Cell-centred drift components, averaging the two opposite faces."""
    return 0.5 * (bx + np.roll(bx, -1, axis=0)), 0.5 * (by + np.roll(by, -1, axis=1))


def gamma_N_normal_drift(geom: CellGeometry, bx, by) -> float:
    """max |B.n| over Γ_N faces."""
    vals = np.concatenate([bx[geom.xface_tags == GAMMA_N], by[geom.yface_tags == GAMMA_N]])
    return float(np.abs(vals).max(initial=0.0))


# ---------------------------------------------------------------------------
# face table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FaceTable:
    """Active faces split into fluid pairs and obstacle boundary faces.

    Pairs run from ``p`` to ``q`` along +axis. Boundary faces store the fluid
    cell, the sign of the outward normal along the axis, and the tag.
    """

    p: np.ndarray
    q: np.ndarray
    pair_axis: np.ndarray
    pair_d: np.ndarray
    pair_beta: np.ndarray
    pair_periodic: np.ndarray
    b_cell: np.ndarray
    b_axis: np.ndarray
    b_sign: np.ndarray
    b_tag: np.ndarray
    b_d: np.ndarray
    b_beta: np.ndarray  # outward normal drift


def face_table(geom: CellGeometry, coeffs: Coefficients) -> FaceTable:
    if coeffs.n != geom.n:
        raise GeometryMismatch(f"coefficients on an n={coeffs.n} grid, geometry has n={geom.n}")
    n, idx, mask = geom.n, geom.index, geom.cell_mask
    dd = (coeffs.D[..., 0, 0], coeffs.D[..., 1, 1])
    P, Q, AX, DF, BE, PER = [], [], [], [], [], []
    BC, BA, BS, BT, BD, BB = [], [], [], [], [], []
    for axis, tags, b in ((0, geom.xface_tags, coeffs.bx), (1, geom.yface_tags, coeffs.by)):
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        lo_i = (ii - 1) % n if axis == 0 else ii
        lo_j = jj if axis == 0 else (jj - 1) % n
        d = dd[axis]
        pair = (tags == INTERIOR) | (tags == PERIODIC)
        lo, hi = (lo_i[pair], lo_j[pair]), (ii[pair], jj[pair])
        dl, dh = d[lo], d[hi]
        P.append(idx[lo])
        Q.append(idx[hi])
        AX.append(np.full(lo[0].shape, axis))
        DF.append(2.0 * dl * dh / (dl + dh))
        BE.append(b[pair])
        PER.append(tags[pair] == PERIODIC)
        for tag in (GAMMA_D, GAMMA_N):
            sel = tags == tag
            lo_f = mask[lo_i[sel], lo_j[sel]]
            ci = np.where(lo_f, lo_i[sel], ii[sel])
            cj = np.where(lo_f, lo_j[sel], jj[sel])
            sign = np.where(lo_f, 1.0, -1.0)
            BC.append(idx[ci, cj])
            BA.append(np.full(ci.shape, axis))
            BS.append(sign)
            BT.append(np.full(ci.shape, tag))
            BD.append(d[ci, cj])
            BB.append(sign * b[sel])
    cat = np.concatenate
    return FaceTable(cat(P), cat(Q), cat(AX), cat(DF), cat(BE), cat(PER),
                     cat(BC), cat(BA), cat(BS), cat(BT), cat(BD), cat(BB))


# ---------------------------------------------------------------------------
# effective drift and compatibility
# ---------------------------------------------------------------------------


def _drift_integrals(geom, coeffs, ft):
    """Discrete ∫_Z div(D e_i), ∫_{∂Z} (D e_i).n and ∫_Z B_i for i = 1, 2."""
    h = geom.h
    vol = np.zeros(2)
    bnd = np.zeros(2)
    for k in range(2):
        # volume divergence as a sum over every face of every fluid cell
        on = ft.pair_axis == k
        per_cell = np.zeros(geom.n_unknowns)
        np.add.at(per_cell, ft.p[on], h * ft.pair_d[on])
        np.add.at(per_cell, ft.q[on], -h * ft.pair_d[on])
        onb = ft.b_axis == k
        np.add.at(per_cell, ft.b_cell[onb], h * ft.b_sign[onb] * ft.b_d[onb])
        vol[k] = per_cell.sum()
        # closed boundary ∂Z = ∂Y ∪ ∂Z0; opposite sides of ∂Y carry opposite normals
        per = on & ft.pair_periodic
        bnd[k] = (np.sum(h * ft.pair_d[per]) - np.sum(h * ft.pair_d[per])
                  + np.sum(h * ft.b_sign[onb] * ft.b_d[onb]))
    b1, b2 = cell_drift(coeffs.bx, coeffs.by)
    m = geom.cell_mask
    integ = np.array([b1[m].sum(), b2[m].sum()]) * h * h
    return vol, bnd, integ


def compute_effective_drift(geom: CellGeometry, coeffs: Coefficients, A_value: float):
    """B* from the solvability condition of the cell problem."""
    ft = face_table(geom, coeffs)
    vol, bnd, integ = _drift_integrals(geom, coeffs, ft)
    return (-vol + float(A_value) * integ + bnd) / geom.fluid_area


def compatibility_residual(geom: CellGeometry, coeffs: Coefficients, A_value: float, B_star) -> float:
    """max_i |∫_Z (div(D e_i) + B*_i - A B_i) - ∫_{∂Z} (D e_i).n| in the scheme's quadrature."""
    ft = face_table(geom, coeffs)
    vol, bnd, integ = _drift_integrals(geom, coeffs, ft)
    B_star = np.asarray(B_star, dtype=np.float64)
    res = vol + B_star * geom.fluid_area - float(A_value) * integ - bnd
    return float(np.abs(res).max())


# ---------------------------------------------------------------------------
# assembly and solve
# ---------------------------------------------------------------------------


def assemble_cell_operator(geom: CellGeometry, coeffs: Coefficients, A_value: float,
                           ft: FaceTable | None = None) -> SparseMatrix:
    """Cell operator scaled by h^2 (rows are flux balances in grid units)."""
    ft = face_table(geom, coeffs) if ft is None else ft
    h, a = geom.h, float(A_value)
    bp = np.maximum(ft.pair_beta, 0.0) * a * h
    bm = np.minimum(ft.pair_beta, 0.0) * a * h
    d = ft.pair_d
    dirich = ft.b_tag == GAMMA_D
    bc = ft.b_cell[dirich]
    rows = [ft.p, ft.p, ft.q, ft.q, bc]
    cols = [ft.p, ft.q, ft.q, ft.p, bc]
    vals = [d + bp, -d + bm, d - bm, -d - bp,
            2.0 * ft.b_d[dirich] + a * h * np.maximum(ft.b_beta[dirich], 0.0)]
    N = geom.n_unknowns
    symmetric = a == 0.0 or not coeffs.has_drift
    return assemble_arrays(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), N,
                           symmetric=symmetric)


def assemble_cell_rhs(geom: CellGeometry, coeffs: Coefficients, A_value: float, B_star,
                      ft: FaceTable | None = None):
    """Right-hand sides for w_1 and w_2, shape (2, N), same scaling as the operator."""
    ft = face_table(geom, coeffs) if ft is None else ft
    h, a = geom.h, float(A_value)
    N = geom.n_unknowns
    b1, b2 = cell_drift(coeffs.bx, coeffs.by)
    m = geom.cell_mask
    bcell = (b1[m], b2[m])
    out = np.zeros((2, N))
    dirich = ft.b_tag == GAMMA_D
    for k in range(2):
        r = h * h * (float(B_star[k]) - a * bcell[k])
        on = ft.pair_axis == k
        np.add.at(r, ft.p[on], h * ft.pair_d[on])
        np.add.at(r, ft.q[on], -h * ft.pair_d[on])
        sel = dirich & (ft.b_axis == k)
        np.add.at(r, ft.b_cell[sel], h * ft.b_sign[sel] * ft.b_d[sel])
        out[k] = r
    return out


@dataclass(frozen=True)
class CellSolution:
    w1: np.ndarray  # (n, n) arrays, NaN on solid cells
    w2: np.ndarray
    A_value: float
    B_star_used: np.ndarray
    mean_pinned: bool
    reports: tuple = field(default=(), repr=False)

    @property
    def W(self):
        return (self.w1, self.w2)

    def shifted(self, c1: float, c2: float) -> "CellSolution":
        return CellSolution(self.w1 + c1, self.w2 + c2, self.A_value, self.B_star_used,
                            self.mean_pinned, self.reports)


def solve_cell_problems(geom: CellGeometry, coeffs: Coefficients, A_value: float, B_star=None,
                        tol: float = 1e-10, max_iter: int | None = None) -> CellSolution:
    """Correctors w_1, w_2 for a given 𝔄.

    ``B_star`` defaults to :func:`compute_effective_drift` with the same 𝔄;
    passing an inconsistent value on a cell without Γ_D raises
    :class:`IncompatibleRightHandSide`.
    """
    ft = face_table(geom, coeffs)
    if B_star is None:
        B_star = compute_effective_drift(geom, coeffs, A_value)
    B_star = np.asarray(B_star, dtype=np.float64)
    A = assemble_cell_operator(geom, coeffs, A_value, ft)
    rhs = assemble_cell_rhs(geom, coeffs, A_value, B_star, ft)
    pinned = geom.gamma_D_length == 0.0
    fields, reports = [], []
    for k in range(2):
        x, rep = solve(A, rhs[k], tol=tol, max_iter=max_iter, nullspace=pinned)
        w = np.full((geom.n, geom.n), np.nan)
        w[geom.cell_mask] = x
        fields.append(w)
        reports.append(rep)
    return CellSolution(fields[0], fields[1], float(A_value), B_star, pinned, tuple(reports))
