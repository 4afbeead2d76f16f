"""Numeric inner loops.

Every kernel exists twice: a loop version compiled with numba (``*_nb``) and a
vectorised numpy version (``*_np``). The public names at the bottom of the
module are bound to one family according to ``DRIFTHOM_DISABLE_JIT``; both
families stay importable so tests and the benchmark can compare them.
"""
import numpy as np

from ._jit import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# COO -> CSR compression (sum duplicates, drop exact zeros)
# ---------------------------------------------------------------------------


@njit
def coo_to_csr_nb(rows, cols, vals, n):
    nnz_in = rows.shape[0]
    # stable counting sort by row
    start = np.zeros(n + 1, dtype=np.int64)
    for t in range(nnz_in):
        start[rows[t] + 1] += 1
    for r in range(n):
        start[r + 1] += start[r]
    fill = start[:-1].copy()
    sc = np.empty(nnz_in, dtype=np.int64)
    sv = np.empty(nnz_in, dtype=np.float64)
    for t in range(nnz_in):
        q = fill[rows[t]]
        sc[q] = cols[t]
        sv[q] = vals[t]
        fill[rows[t]] += 1
    indptr = np.zeros(n + 1, dtype=np.int64)
    indices = np.empty(nnz_in, dtype=np.int64)
    data = np.empty(nnz_in, dtype=np.float64)
    slot = -np.ones(n, dtype=np.int64)  # column -> output position within the current row
    out = 0
    for r in range(n):
        a = out
        for t in range(start[r], start[r + 1]):
            c = sc[t]
            k = slot[c]
            if k < 0:
                slot[c] = out
                indices[out] = c
                data[out] = sv[t]
                out += 1
            else:
                data[k] += sv[t]
        # few distinct columns per row: insertion sort them
        for t in range(a + 1, out):
            c = indices[t]
            v = data[t]
            k = t - 1
            while k >= a and indices[k] > c:
                indices[k + 1] = indices[k]
                data[k + 1] = data[k]
                k -= 1
            indices[k + 1] = c
            data[k + 1] = v
        w = a
        for t in range(a, out):
            slot[indices[t]] = -1
            if data[t] != 0.0:  # entries that summed to exactly zero are dropped
                indices[w] = indices[t]
                data[w] = data[t]
                w += 1
        out = w
        indptr[r + 1] = out
    return indptr, indices[:out].copy(), data[:out].copy()


def coo_to_csr_np(rows, cols, vals, n):
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    key = rows * n + cols
    order = np.argsort(key, kind="mergesort")
    key = key[order]
    vals = vals[order]
    if key.size:
        starts = np.flatnonzero(np.concatenate(([True], key[1:] != key[:-1])))
        summed = np.add.reduceat(vals, starts)
        ukey = key[starts]
    else:
        summed = vals
        ukey = key
    keep = summed != 0.0
    ukey = ukey[keep]
    data = summed[keep]
    r = ukey // n
    indices = ukey - r * n
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=n), out=indptr[1:])
    return indptr, indices, data


# ---------------------------------------------------------------------------
# CSR matrix-vector product
# ---------------------------------------------------------------------------


@njit
def csr_matvec_nb(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    y = np.zeros(n)
    for i in range(n):
        s = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            s += data[k] * x[indices[k]]
        y[i] = s
    return y


def csr_matvec_np(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    prod = data * x[indices]
    rows = np.repeat(np.arange(n), np.diff(indptr))
    return np.bincount(rows, weights=prod, minlength=n)


# ---------------------------------------------------------------------------
# ILU(0)
# ---------------------------------------------------------------------------


@njit
def diag_pointers_nb(indptr, indices):
    n = indptr.shape[0] - 1
    dp = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        for k in range(indptr[i], indptr[i + 1]):
            if indices[k] == i:
                dp[i] = k
                break
    return dp


def diag_pointers_np(indptr, indices):
    n = indptr.shape[0] - 1
    rows = np.repeat(np.arange(n), np.diff(indptr))
    dp = np.full(n, -1, dtype=np.int64)
    hit = np.flatnonzero(indices == rows)
    dp[rows[hit]] = hit
    return dp


@njit
def ilu0_factor_nb(indptr, indices, data, dp, shift):
    """Incomplete LU with zero fill; L (unit diagonal) and U share ``data``'s pattern."""
    n = indptr.shape[0] - 1
    lu = data.copy()
    for i in range(n):
        lu[dp[i]] += shift
    for i in range(n):
        end_i = indptr[i + 1]
        for kk in range(indptr[i], dp[i]):
            k = indices[kk]
            piv = lu[dp[k]]
            lu[kk] /= piv
            lik = lu[kk]
            p = kk + 1
            for kj in range(dp[k] + 1, indptr[k + 1]):
                j = indices[kj]
                while p < end_i and indices[p] < j:
                    p += 1
                if p < end_i and indices[p] == j:
                    lu[p] -= lik * lu[kj]
        if lu[dp[i]] == 0.0:
            lu[dp[i]] = 1e-300
    return lu


def ilu0_factor_np(indptr, indices, data, dp, shift):
    n = indptr.shape[0] - 1
    lu = data.astype(np.float64).copy()
    lu[dp] += shift
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        cols_i = indices[lo:hi]
        for kk in range(lo, dp[i]):
            k = indices[kk]
            lu[kk] /= lu[dp[k]]
            ks, ke = dp[k] + 1, indptr[k + 1]
            if ke > ks:
                cols_k = indices[ks:ke]
                pos = np.searchsorted(cols_i, cols_k)
                pos = np.minimum(pos, hi - lo - 1)
                match = cols_i[pos] == cols_k
                lu[lo + pos[match]] -= lu[kk] * lu[ks:ke][match]
        if lu[dp[i]] == 0.0:
            lu[dp[i]] = 1e-300
    return lu


@njit
def ilu0_apply_nb(indptr, indices, lu, dp, r):
    n = indptr.shape[0] - 1
    z = r.copy()
    for i in range(n):
        s = z[i]
        for k in range(indptr[i], dp[i]):
            s -= lu[k] * z[indices[k]]
        z[i] = s
    for i in range(n - 1, -1, -1):
        s = z[i]
        for k in range(dp[i] + 1, indptr[i + 1]):
            s -= lu[k] * z[indices[k]]
        z[i] = s / lu[dp[i]]
    return z


class TriangularSchedule:
    """Level sets for vectorised forward/backward substitution (numpy path)."""

    def __init__(self, indptr, indices, dp):
        n = indptr.shape[0] - 1
        rows = np.repeat(np.arange(n), np.diff(indptr))
        lower = indices < rows
        upper = indices > rows
        self.levels_fwd = self._levels(n, rows[lower], indices[lower], forward=True)
        self.levels_bwd = self._levels(n, rows[upper], indices[upper], forward=False)
        self.rows = rows
        self.lower_idx = np.flatnonzero(lower)
        self.upper_idx = np.flatnonzero(upper)
        self.dp = dp
        self.n = n
        self._fwd = self._entries(n, self.levels_fwd, rows, self.lower_idx)
        self._bwd = self._entries(n, self.levels_bwd, rows, self.upper_idx)

    @staticmethod
    def _levels(n, r, c, forward):
        level = np.zeros(n, dtype=np.int64)
        order = np.argsort(r, kind="mergesort")
        r = r[order]
        c = c[order]
        starts = np.searchsorted(r, np.arange(n + 1))
        seq = range(n) if forward else range(n - 1, -1, -1)
        for i in seq:
            a, b = starts[i], starts[i + 1]
            if b > a:
                level[i] = level[c[a:b]].max() + 1
        nlev = level.max() + 1 if n else 0
        buckets = np.argsort(level, kind="mergesort")
        bounds = np.searchsorted(level[buckets], np.arange(nlev + 1))
        return [buckets[bounds[t]:bounds[t + 1]] for t in range(nlev)]

    @staticmethod
    def _entries(n, levels, rows, idx):
        lev_of_row = np.empty(n, dtype=np.int64)
        for t, rr in enumerate(levels):
            lev_of_row[rr] = t
        ent_lev = lev_of_row[rows[idx]] if idx.size else idx
        out = []
        for t in range(len(levels)):
            out.append(idx[ent_lev == t])
        return out


def ilu0_apply_np(indptr, indices, lu, dp, r, schedule=None):
    if schedule is None:
        schedule = TriangularSchedule(indptr, indices, dp)
    z = np.array(r, dtype=np.float64, copy=True)
    rows = schedule.rows
    for ent in schedule._fwd:
        if ent.size:
            np.subtract.at(z, rows[ent], lu[ent] * z[indices[ent]])
    for lev_rows, ent in zip(schedule.levels_bwd, schedule._bwd):
        if ent.size:
            np.subtract.at(z, rows[ent], lu[ent] * z[indices[ent]])
        z[lev_rows] /= lu[dp[lev_rows]]
    return z


# ---------------------------------------------------------------------------
# Godunov flux for f(u) = beta * P(u) on a structured periodic grid
# ---------------------------------------------------------------------------


@njit
def _poly(c, x):
    s = 0.0
    for k in range(c.shape[0] - 1, -1, -1):
        s = s * x + c[k]
    return s


@njit
def _godunov(beta, ul, ur, pc, crit):
    if ul <= ur:
        best = min(_poly(pc, ul), _poly(pc, ur)) if beta >= 0.0 else max(_poly(pc, ul), _poly(pc, ur))
        for t in range(crit.shape[0]):
            c = crit[t]
            if ul < c < ur:
                v = _poly(pc, c)
                if beta >= 0.0:
                    best = min(best, v)
                else:
                    best = max(best, v)
        return beta * best
    best = max(_poly(pc, ul), _poly(pc, ur)) if beta >= 0.0 else min(_poly(pc, ul), _poly(pc, ur))
    for t in range(crit.shape[0]):
        c = crit[t]
        if ur < c < ul:
            v = _poly(pc, c)
            if beta >= 0.0:
                best = max(best, v)
            else:
                best = min(best, v)
    return beta * best


@njit
def godunov_divergence_nb(u, fluid, bx, by, pc, crit):
    """Net outward drift flux per cell (per unit face length) on a periodic grid.

    ``bx[i, j]`` is the +x normal velocity on the face between cells (i-1, j)
    and (i, j); ``by`` likewise in y. Faces touching a solid cell carry no flux.
    """
    nx, ny = u.shape
    out = np.zeros((nx, ny))
    for i in range(nx):
        im = i - 1 if i > 0 else nx - 1
        for j in range(ny):
            if fluid[im, j] and fluid[i, j]:
                f = _godunov(bx[i, j], u[im, j], u[i, j], pc, crit)
                out[im, j] += f
                out[i, j] -= f
    for i in range(nx):
        for j in range(ny):
            jm = j - 1 if j > 0 else ny - 1
            if fluid[i, jm] and fluid[i, j]:
                f = _godunov(by[i, j], u[i, jm], u[i, j], pc, crit)
                out[i, jm] += f
                out[i, j] -= f
    return out


def _godunov_np(beta, ul, ur, pc, crit):
    pl = np.polynomial.polynomial.polyval(ul, pc)
    pr = np.polynomial.polynomial.polyval(ur, pc)
    lo = np.minimum(ul, ur)
    hi = np.maximum(ul, ur)
    rising = ul <= ur
    # minimise beta*P when ul <= ur, maximise otherwise
    want_min = rising == (beta >= 0.0)
    best = np.where(want_min, np.minimum(pl, pr), np.maximum(pl, pr))
    for c in crit:
        inside = (lo < c) & (c < hi)
        pv = np.polynomial.polynomial.polyval(c, pc)
        cand = np.where(want_min, np.minimum(best, pv), np.maximum(best, pv))
        best = np.where(inside, cand, best)
    return beta * best


def godunov_divergence_np(u, fluid, bx, by, pc, crit):
    ul = np.roll(u, 1, axis=0)
    active = fluid & np.roll(fluid, 1, axis=0)
    fx = np.where(active, _godunov_np(bx, ul, u, pc, crit), 0.0)
    ul = np.roll(u, 1, axis=1)
    active = fluid & np.roll(fluid, 1, axis=1)
    fy = np.where(active, _godunov_np(by, ul, u, pc, crit), 0.0)
    return (np.roll(fx, -1, axis=0) - fx) + (np.roll(fy, -1, axis=1) - fy)


# ---------------------------------------------------------------------------
# Macroscopic operator: backward-Euler step of du/dt = div(D*(u) grad u)
# ---------------------------------------------------------------------------


@njit
def _tensor_at(c0, m2, dpc, u):
    s = _poly(dpc, u)
    return (c0[0, 0] - s * m2[0, 0], c0[0, 1] - s * m2[0, 1],
            c0[1, 0] - s * m2[1, 0], c0[1, 1] - s * m2[1, 1])


@njit
def macro_triplets_nb(u, h, dt, c0, m2, dpc, periodic):
    """COO triplets of h^2/dt*I + h*div(flux) with fluxes frozen at ``u``.

    Cell (i, j) has flat index i*m + j; i runs along x.
    """
    m = u.shape[0]
    cap = 25 * m * m
    rows = np.empty(cap, dtype=np.int64)
    cols = np.empty(cap, dtype=np.int64)
    vals = np.empty(cap)
    cnt = 0
    for i in range(m):
        for j in range(m):
            p = i * m + j
            rows[cnt] = p
            cols[cnt] = p
            vals[cnt] = h * h / dt
            cnt += 1
    # x-faces: face between (i-1, j) and (i, j), i = 0..m (i=0 and i=m are boundary when not periodic)
    nfx = m if periodic else m + 1
    for i in range(nfx):
        for j in range(m):
            if periodic:
                il = i - 1 if i > 0 else m - 1
                ir = i
                boundary = False
            else:
                il = i - 1
                ir = i
                boundary = il < 0 or ir > m - 1
            if boundary:
                inner = ir if il < 0 else il
                ub = 0.5 * u[inner, j]
                d11, d12, d21, d22 = _tensor_at(c0, m2, dpc, ub)
                # normal term only; tangential derivative vanishes on the wall
                p = inner * m + j
                rows[cnt] = p
                cols[cnt] = p
                vals[cnt] = 2.0 * d11
                cnt += 1
                continue
            ub = 0.5 * (u[il, j] + u[ir, j])
            d11, d12, d21, d22 = _tensor_at(c0, m2, dpc, ub)
            pl = il * m + j
            pr = ir * m + j
            # flux F = -(d11*(u_r - u_l) + d12*h*dudy) per unit length * h ; out of l, into r
            # two-point part
            rows[cnt] = pl; cols[cnt] = pl; vals[cnt] = d11; cnt += 1
            rows[cnt] = pl; cols[cnt] = pr; vals[cnt] = -d11; cnt += 1
            rows[cnt] = pr; cols[cnt] = pr; vals[cnt] = d11; cnt += 1
            rows[cnt] = pr; cols[cnt] = pl; vals[cnt] = -d11; cnt += 1
            if d12 != 0.0:
                w = 0.25 * d12
                for side in range(2):
                    jj = j + 1 if side == 0 else j - 1
                    sg = 1.0 if side == 0 else -1.0
                    if periodic:
                        jj = jj % m
                    elif jj < 0 or jj > m - 1:
                        continue
                    for ic in (il, ir):
                        q = ic * m + jj
                        rows[cnt] = pl; cols[cnt] = q; vals[cnt] = -sg * w; cnt += 1
                        rows[cnt] = pr; cols[cnt] = q; vals[cnt] = sg * w; cnt += 1
    nfy = m if periodic else m + 1
    for i in range(m):
        for j in range(nfy):
            if periodic:
                jl = j - 1 if j > 0 else m - 1
                jr = j
                boundary = False
            else:
                jl = j - 1
                jr = j
                boundary = jl < 0 or jr > m - 1
            if boundary:
                inner = jr if jl < 0 else jl
                ub = 0.5 * u[i, inner]
                d11, d12, d21, d22 = _tensor_at(c0, m2, dpc, ub)
                p = i * m + inner
                rows[cnt] = p
                cols[cnt] = p
                vals[cnt] = 2.0 * d22
                cnt += 1
                continue
            ub = 0.5 * (u[i, jl] + u[i, jr])
            d11, d12, d21, d22 = _tensor_at(c0, m2, dpc, ub)
            pl = i * m + jl
            pr = i * m + jr
            rows[cnt] = pl; cols[cnt] = pl; vals[cnt] = d22; cnt += 1
            rows[cnt] = pl; cols[cnt] = pr; vals[cnt] = -d22; cnt += 1
            rows[cnt] = pr; cols[cnt] = pr; vals[cnt] = d22; cnt += 1
            rows[cnt] = pr; cols[cnt] = pl; vals[cnt] = -d22; cnt += 1
            if d21 != 0.0:
                w = 0.25 * d21
                for side in range(2):
                    ii = i + 1 if side == 0 else i - 1
                    sg = 1.0 if side == 0 else -1.0
                    if periodic:
                        ii = ii % m
                    elif ii < 0 or ii > m - 1:
                        continue
                    for jc in (jl, jr):
                        q = ii * m + jc
                        rows[cnt] = pl; cols[cnt] = q; vals[cnt] = -sg * w; cnt += 1
                        rows[cnt] = pr; cols[cnt] = q; vals[cnt] = sg * w; cnt += 1
    return rows[:cnt], cols[:cnt], vals[:cnt]


def _tensor_np(c0, m2, dpc, ub):
    s = np.polynomial.polynomial.polyval(ub, dpc)
    return (c0[0, 0] - s * m2[0, 0], c0[0, 1] - s * m2[0, 1],
            c0[1, 0] - s * m2[1, 0], c0[1, 1] - s * m2[1, 1])


def macro_triplets_np(u, h, dt, c0, m2, dpc, periodic):
    m = u.shape[0]
    idx = np.arange(m * m).reshape(m, m)
    R = [idx.ravel()]
    C = [idx.ravel()]
    V = [np.full(m * m, h * h / dt)]

    def add(r, c, v):
        R.append(np.ravel(r))
        C.append(np.ravel(c))
        V.append(np.ravel(np.broadcast_to(v, np.shape(r))))

    for axis in (0, 1):
        if periodic:
            ul = np.roll(u, 1, axis=axis)
            pl = np.roll(idx, 1, axis=axis)
            ur, pr = u, idx
        else:
            sl_l = (slice(0, m - 1), slice(None)) if axis == 0 else (slice(None), slice(0, m - 1))
            sl_r = (slice(1, m), slice(None)) if axis == 0 else (slice(None), slice(1, m))
            ul, pl, ur, pr = u[sl_l], idx[sl_l], u[sl_r], idx[sl_r]
        d11, d12, d21, d22 = _tensor_np(c0, m2, dpc, 0.5 * (ul + ur))
        dn = d11 if axis == 0 else d22
        dc = d12 if axis == 0 else d21
        add(pl, pl, dn)
        add(pl, pr, -dn)
        add(pr, pr, dn)
        add(pr, pl, -dn)
        w = 0.25 * np.broadcast_to(dc, np.shape(pl))
        if np.any(w != 0.0):
            other = 1 - axis
            for sg, shift in ((1.0, -1), (-1.0, 1)):
                # neighbour at +1 (sg=+1) or -1 (sg=-1) along the tangential axis
                for cells in (pl, pr):
                    if periodic:
                        q = np.roll(cells, shift, axis=other)
                        mask = np.ones(cells.shape, dtype=bool)
                    else:
                        q = np.roll(cells, shift, axis=other)
                        pos = np.arange(cells.shape[other])
                        ok = (pos + (-shift) >= 0) & (pos + (-shift) <= m - 1)
                        mask = ok[:, None] if other == 0 else ok[None, :]
                        mask = np.broadcast_to(mask, cells.shape)
                    add(pl[mask], q[mask], (-sg * w)[mask])
                    add(pr[mask], q[mask], (sg * w)[mask])
        if not periodic:
            for edge in (0, m - 1):
                line = (edge, slice(None)) if axis == 0 else (slice(None), edge)
                d11b, _, _, d22b = _tensor_np(c0, m2, dpc, 0.5 * u[line])
                dnb = d11b if axis == 0 else d22b
                add(idx[line], idx[line], 2.0 * np.broadcast_to(dnb, idx[line].shape))
    return np.concatenate(R), np.concatenate(C), np.concatenate(V)


# ---------------------------------------------------------------------------
# public bindings
# ---------------------------------------------------------------------------

if USE_NUMBA:
    coo_to_csr = coo_to_csr_nb
    csr_matvec = csr_matvec_nb
    diag_pointers = diag_pointers_nb
    ilu0_factor = ilu0_factor_nb
    godunov_divergence = godunov_divergence_nb
    macro_triplets = macro_triplets_nb
else:
    coo_to_csr = coo_to_csr_np
    csr_matvec = csr_matvec_np
    diag_pointers = diag_pointers_np
    ilu0_factor = ilu0_factor_np
    godunov_divergence = godunov_divergence_np
    macro_triplets = macro_triplets_np


def ilu0_apply(indptr, indices, lu, dp, r, schedule=None):
    if USE_NUMBA:
        return ilu0_apply_nb(indptr, indices, lu, dp, r)
    return ilu0_apply_np(indptr, indices, lu, dp, r, schedule)
