"""Independent reference route for the cell problems.

Everything here is written separately from :mod:`drifthom.cell` and
:mod:`drifthom.tensors`: the drift comes straight from the unrounded stream
function, the operator is built stencil-by-stencil into a scipy matrix, the
nullspace is removed by pinning one unknown and solving directly with
SuperLU, and the tensor integrals use face-centred quadrature. Agreement
between the two routes is what the fixtures in the test-suite certify.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


def _stream(n, obstacle, mean_flow, rc):
    m1, m2 = mean_flow
    h = 1.0 / n
    x = np.arange(n + 1) * h
    X, Y = np.meshgrid(x, x, indexing="ij")
    psi = (m1 * Y - m2 * X) / h
    if obstacle is None:
        return psi
    x0, x1, y0, y1 = obstacle
    d = np.hypot(np.clip(np.maximum(x0 - X, X - x1), 0, None),
                 np.clip(np.maximum(y0 - Y, Y - y1), 0, None))
    t = np.clip(d / rc, 0, 1)
    chi = 1 - (10 * t**3 - 15 * t**4 + 6 * t**5)
    pc = (m1 * 0.5 * (y0 + y1) - m2 * 0.5 * (x0 + x1)) / h
    return np.where(d == 0, pc, (1 - chi) * psi + chi * pc)


def reference_cell_tensors(n, obstacle=(1 / 3, 2 / 3, 1 / 3, 2 / 3), d=(1.0, 1.0), mean_flow=None,
                           cutoff_radius=0.25, A_value=1.0, dirichlet_sides=()):
    """B*, M0, M1, M2 (dict) for constant diagonal D on an ``n x n`` grid."""
    h = 1.0 / n
    solid = np.zeros((n, n), dtype=bool)
    if obstacle is not None:
        I0, I1, J0, J1 = (int(round(v * n)) for v in obstacle)
        solid[I0:I1, J0:J1] = True
    else:
        I0 = I1 = J0 = J1 = -10
    num = -np.ones((n, n), dtype=int)
    fluid = np.argwhere(~solid)
    num[~solid] = np.arange(len(fluid))
    N = len(fluid)
    if mean_flow is None:
        ux = np.zeros((n, n))
        uy = np.zeros((n, n))
    else:
        psi = _stream(n, obstacle, mean_flow, cutoff_radius)
        ux = psi[:n, 1:] - psi[:n, :n]  # through the face at x = i h
        uy = psi[:n, :n] - psi[1:, :n]  # through the face at y = j h

    def side_of(i, j, di, dj):
        """Obstacle side hit when stepping from fluid (i, j) into solid."""
        if di == 1:
            return "left"
        if di == -1:
            return "right"
        if dj == 1:
            return "bottom"
        return "top"

    rows, cols, vals = [], [], []
    rhs = np.zeros((2, N))
    cellB = np.zeros((2, N))
    for p, (i, j) in enumerate(fluid):
        diag = 0.0
        cellB[0, p] = 0.5 * (ux[i, j] + ux[(i + 1) % n, j])
        cellB[1, p] = 0.5 * (uy[i, j] + uy[i, (j + 1) % n])
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ax = 0 if di else 1
            s = di + dj
            ni, nj = (i + di) % n, (j + dj) % n
            if ax == 0:
                beta = ux[ni, j] if s > 0 else -ux[i, j]
            else:
                beta = uy[i, nj] if s > 0 else -uy[i, j]
            dk = d[ax]
            if solid[ni, nj]:
                if side_of(i, j, di, dj) in dirichlet_sides:
                    diag += 2 * dk + A_value * h * max(beta, 0.0)
                    rhs[ax, p] += h * dk * s
                continue
            q = num[ni, nj]
            diag += dk + A_value * h * max(beta, 0.0)
            rows.append(p)
            cols.append(q)
            vals.append(-dk + A_value * h * min(beta, 0.0))
            rhs[ax, p] += h * dk * s
        rows.append(p)
        cols.append(p)
        vals.append(diag)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(N, N))
    area = 1.0 - (0.0 if obstacle is None else (obstacle[1] - obstacle[0]) * (obstacle[3] - obstacle[2]))
    Bint = cellB.sum(axis=1) * h * h
    Bstar = A_value * Bint / area
    for k in range(2):
        rhs[k] += h * h * (Bstar[k] - A_value * cellB[k])
    pinned = len(dirichlet_sides) == 0
    if pinned:
        # pin unknown 0 to zero (its balance row is implied by the others),
        # then shift to zero mean
        lu = spla.splu(A[1:, 1:].tocsc())
        W = np.zeros((2, N))
        for k in range(2):
            W[k, 1:] = lu.solve(rhs[k, 1:])
        W -= W.mean(axis=1, keepdims=True)
    else:
        lu = spla.splu(A.tocsc())
        W = np.stack([lu.solve(rhs[k]) for k in range(2)])

    # face-centred quadrature for M0: each active face owns a diamond of area h^2
    # (h^2/2 at obstacle faces)
    M0 = np.zeros((2, 2))
    wf = [np.full((n, n), np.nan) for _ in range(2)]
    for k in range(2):
        wf[k][~solid] = W[k]
    for ax, (di, dj) in enumerate(((1, 0), (0, 1))):
        for jj in range(2):
            w = wf[jj]
            nb = np.roll(np.roll(w, -di, 0), -dj, 1)
            nsolid = np.roll(np.roll(solid, -di, 0), -dj, 1)
            both = ~solid & ~nsolid
            flux = d[ax] * ((ax == jj) + (nb - w) / h)
            total = np.sum(flux[both]) * h * h
            # boundary faces: Neumann faces carry zero total flux, Dirichlet faces
            # use the one-sided difference to the zero face value
            if dirichlet_sides:
                for (ci, cj), side_sign in _dirichlet_faces(solid, ax, dirichlet_sides, n):
                    g = side_sign * (0.0 - w[ci, cj]) / (0.5 * h)
                    total += d[ax] * ((ax == jj) + g) * 0.5 * h * h
            M0[ax, jj] = total / area
    M1 = W.sum(axis=1) * h * h / area
    # M2 from face values of B times face-averaged w
    M2 = np.zeros((2, 2))
    for ax, (u, di, dj) in enumerate(((ux, 1, 0), (uy, 0, 1))):
        for jj in range(2):
            w = np.where(solid, 0.0, wf[jj])
            wlo = np.roll(np.roll(w, di, 0), dj, 1)
            fl = np.roll(np.roll(~solid, di, 0), dj, 1)
            cnt = (~solid).astype(float) + fl
            avg = np.where(cnt > 0, (w + wlo) / np.maximum(cnt, 1), 0.0)
            M2[ax, jj] = np.sum(u * avg) * h * h / area
    return dict(B_star=Bstar, M0=M0, M1=M1, M2=M2, n=n, A_value=A_value)


def _dirichlet_faces(solid, ax, sides, n):
    out = []
    fluid = ~solid
    for i, j in np.argwhere(fluid):
        if ax == 0:
            for di, side, sgn in ((1, "left", 1.0), (-1, "right", -1.0)):
                if solid[(i + di) % n, j] and side in sides:
                    out.append(((i, j), sgn))
        else:
            for dj, side, sgn in ((1, "bottom", 1.0), (-1, "top", -1.0)):
                if solid[i, (j + dj) % n] and side in sides:
                    out.append(((i, j), sgn))
    return out


def richardson(values, ratio=2.0):
    """Observed-order extrapolation from three successive refinements."""
    v1, v2, v3 = (np.asarray(v, dtype=np.float64) for v in values)
    num = v1 - v2
    den = v2 - v3
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.log(np.abs(num / den)) / math.log(ratio)
    p = np.where(np.isfinite(p) & (p > 0.5), p, 1.0)
    return v3 + den / (ratio ** p - 1.0), p


def reference_dispersion(levels=(120, 240, 480), **kwargs):
    """Richardson-extrapolated B*, M0, M2 over three grids (entrywise observed order)."""
    runs = [reference_cell_tensors(n, **kwargs) for n in levels]
    out = {"levels": list(levels), "runs": runs}
    for key in ("B_star", "M0", "M1", "M2"):
        ext, p = richardson([r[key] for r in runs])
        out[key] = ext
        out[key + "_order"] = p
    return out
