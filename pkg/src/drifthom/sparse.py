"""Compressed-sparse-row matrices and preconditioned Krylov solvers.

Only numpy (and optionally numba, through :mod:`drifthom.kernels`) is used;
scipy is reserved for the independent reference route in :mod:`drifthom.oracle`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import IncompatibleRightHandSide, IndexOutOfRange, NotConverged


@dataclass(frozen=True)
class SparseMatrix:
    """Square CSR matrix with sorted, duplicate-free column indices."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    n: int
    symmetric: bool = False

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    @property
    def shape(self):
        return (self.n, self.n)

    def matvec(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        return kernels.csr_matvec(self.indptr, self.indices, self.data, x)

    def __matmul__(self, x):
        return self.matvec(x)

    def diagonal(self):
        out = np.zeros(self.n)
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        hit = self.indices == rows
        out[rows[hit]] = self.data[hit]
        return out

    def to_dense(self):
        out = np.zeros((self.n, self.n))
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        out[rows, self.indices] = self.data
        return out

    def triplets(self):
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        return rows, self.indices.copy(), self.data.copy()

    def transpose(self) -> "SparseMatrix":
        r, c, v = self.triplets()
        return assemble_arrays(c, r, v, self.n)

    def is_symmetric(self, tol=0.0) -> bool:
        t = self.transpose()
        if t.nnz != self.nnz:
            return False
        if not (np.array_equal(t.indptr, self.indptr) and np.array_equal(t.indices, self.indices)):
            return False
        return bool(np.all(np.abs(t.data - self.data) <= tol * np.abs(self.data).max(initial=0.0)))


@dataclass
class LinearSolveReport:
    iterations: int
    final_residual: float
    converged: bool
    tol: float
    method: str = "bicgstab"
    history: list = field(default_factory=list, repr=False)


def assemble(triplets, n: int, symmetric: bool = False) -> SparseMatrix:
    """Build a CSR matrix from an iterable of ``(row, col, value)`` triplets."""
    trip = list(triplets)
    if trip:
        arr = np.asarray(trip, dtype=np.float64).reshape(-1, 3)
        rows, cols, vals = arr[:, 0], arr[:, 1], arr[:, 2]
        if np.any(rows != np.round(rows)) or np.any(cols != np.round(cols)):
            raise IndexOutOfRange("non-integer index in triplet list")
    else:
        rows = cols = vals = np.zeros(0)
    return assemble_arrays(rows.astype(np.int64), cols.astype(np.int64), vals, n, symmetric)


def assemble_arrays(rows, cols, vals, n: int, symmetric: bool = False) -> SparseMatrix:
    """Array form of :func:`assemble`; duplicates are summed and exact zeros dropped."""
    n = int(n)
    if n < 1:
        raise IndexOutOfRange(f"matrix dimension must be positive, got {n}")
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    vals = np.ascontiguousarray(vals, dtype=np.float64)
    if not (rows.shape == cols.shape == vals.shape):
        raise ValueError("rows, cols and vals must have equal length")
    if rows.size and (rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= n):
        bad = np.flatnonzero((rows < 0) | (rows >= n) | (cols < 0) | (cols >= n))[0]
        raise IndexOutOfRange(f"entry ({rows[bad]}, {cols[bad]}) outside a {n}x{n} matrix")
    indptr, indices, data = kernels.coo_to_csr(rows, cols, vals, n)
    return SparseMatrix(indptr, indices, data, n, symmetric)


# ---------------------------------------------------------------------------
# preconditioning
# ---------------------------------------------------------------------------


class ILU0:
    """Zero-fill incomplete LU of ``A + shift*I``."""

    def __init__(self, A: SparseMatrix, shift: float = 0.0):
        self.A = A
        self.dp = kernels.diag_pointers(A.indptr, A.indices)
        if np.any(self.dp < 0):
            raise ValueError("ILU(0) requires every diagonal entry to be stored")
        self.lu = kernels.ilu0_factor(A.indptr, A.indices, A.data, self.dp, float(shift))
        self.schedule = None if kernels.USE_NUMBA else kernels.TriangularSchedule(
            A.indptr, A.indices, self.dp)

    def __call__(self, r):
        r = np.ascontiguousarray(r, dtype=np.float64)
        return kernels.ilu0_apply(self.A.indptr, self.A.indices, self.lu, self.dp, r, self.schedule)


class Jacobi:
    def __init__(self, A: SparseMatrix):
        d = A.diagonal()
        d[d == 0.0] = 1.0
        self.inv = 1.0 / d

    def __call__(self, r):
        return self.inv * r


def make_preconditioner(A: SparseMatrix, kind: str = "ilu0", nullspace: bool = False):
    if kind == "none":
        return lambda r: np.array(r, dtype=np.float64)
    if kind == "jacobi":
        return Jacobi(A)
    if kind != "ilu0":
        raise ValueError(f"unknown preconditioner {kind!r}")
    shift = 0.0
    if nullspace:
        # a singular M-matrix has a vanishing last pivot; a tiny shift keeps
        # the factor finite and the projection removes the constant mode
        shift = 1e-6 * float(np.abs(A.diagonal()).mean())
    return ILU0(A, shift)


# ---------------------------------------------------------------------------
# Krylov solvers
# ---------------------------------------------------------------------------


def _project(v):
    return v - v.mean()


def _bicgstab(A, b, x, M, tol, max_iter, proj, history, max_restarts=8):
    bnorm = np.linalg.norm(b)
    it = 0
    restarts = 0
    while True:
        # true residual at every (re)start guards against recursive drift
        r = proj(b - A.matvec(x))
        res = np.linalg.norm(r) / bnorm
        history.append(res)
        if res <= tol or it >= max_iter or restarts > max_restarts:
            return x, it
        restarts += 1
        rhat = r.copy()
        rho_old = alpha = omega = 1.0
        v = np.zeros_like(b)
        p = np.zeros_like(b)
        while it < max_iter:
            it += 1
            rho = rhat @ r
            if rho == 0.0 or not np.isfinite(rho):
                break
            beta = (rho / rho_old) * (alpha / omega)
            p = r + beta * (p - omega * v)
            y = proj(M(p))
            v = proj(A.matvec(y))
            denom = rhat @ v
            if denom == 0.0 or not np.isfinite(denom):
                break
            alpha = rho / denom
            s = r - alpha * v
            if np.linalg.norm(s) / bnorm <= tol:
                x = x + alpha * y
                break
            z = proj(M(s))
            t = proj(A.matvec(z))
            tt = t @ t
            if tt == 0.0:
                x = x + alpha * y
                break
            omega = (t @ s) / tt
            x = x + alpha * y + omega * z
            r = s - omega * t
            rho_old = rho
            if np.linalg.norm(r) / bnorm <= tol or omega == 0.0:
                break


def _pcg(A, b, x, M, tol, max_iter, proj, history):
    bnorm = np.linalg.norm(b)
    r = proj(b - A.matvec(x))
    res = np.linalg.norm(r) / bnorm
    history.append(res)
    z = proj(M(r))
    p = z.copy()
    rz = r @ z
    it = 0
    while res > tol and it < max_iter:
        it += 1
        q = proj(A.matvec(p))
        pq = p @ q
        if pq <= 0.0:
            break
        a = rz / pq
        x = x + a * p
        r = r - a * q
        res = np.linalg.norm(r) / bnorm
        history.append(res)
        if res <= tol:
            break
        z = proj(M(r))
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, it


def check_compatible(b, tol: float):
    """Raise if ``b`` has a component along the constant vector."""
    b = np.asarray(b, dtype=np.float64)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return 0.0
    ratio = abs(b.sum()) / (np.sqrt(b.size) * nb)
    if ratio > max(tol, 1e-12):
        raise IncompatibleRightHandSide(
            f"right-hand side not orthogonal to constants: |1.b|/(sqrt(N)|b|) = {ratio:.3e}")
    return ratio


def solve(A: SparseMatrix, b, tol: float = 1e-10, max_iter: int | None = None,
          nullspace: bool = False, symmetric: bool | None = None, x0=None,
          preconditioner="ilu0", raise_on_failure: bool = True):
    """Solve ``A x = b`` to relative residual ``tol``.

    With ``nullspace=True`` the operator is taken to annihilate constants (from
    both sides); ``b`` must then be orthogonal to them and the returned ``x``
    has zero mean. Returns ``(x, LinearSolveReport)``.
    """
    b = np.ascontiguousarray(b, dtype=np.float64)
    if b.shape != (A.n,):
        raise ValueError(f"rhs has shape {b.shape}, expected ({A.n},)")
    if max_iter is None:
        max_iter = 10 * A.n
    sym = A.symmetric if symmetric is None else symmetric
    method = "cg" if sym else "bicgstab"
    if nullspace:
        check_compatible(b, tol)
        b = _project(b)
        proj = _project
    else:
        proj = lambda v: v  # noqa: E731
    if np.linalg.norm(b) == 0.0:
        return np.zeros(A.n), LinearSolveReport(0, 0.0, True, tol, method)
    M = preconditioner if callable(preconditioner) else make_preconditioner(
        A, preconditioner, nullspace)
    x = np.zeros(A.n) if x0 is None else proj(np.array(x0, dtype=np.float64))
    history: list = []
    if sym:
        x, it = _pcg(A, b, x, M, tol, max_iter, proj, history)
    else:
        x, it = _bicgstab(A, b, x, M, tol, max_iter, proj, history)
    if nullspace:
        x = _project(x)
    res = float(np.linalg.norm(b - A.matvec(x)) / np.linalg.norm(b))
    report = LinearSolveReport(it, res, res <= tol, tol, method, history)
    if not report.converged and raise_on_failure:
        raise NotConverged(
            f"{method} stopped after {it} iterations at relative residual {res:.3e} (tol {tol:.1e})",
            report)
    return x, report


def write_matrix_market(A: SparseMatrix, path) -> None:
    """Coordinate-format MatrixMarket dump (1-based indices, 17 significant digits)."""
    r, c, v = A.triplets()
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{A.n} {A.n} {A.nnz}\n")
        for i, j, x in zip(r, c, v):
            fh.write(f"{i + 1} {j + 1} {x:.17g}\n")


def read_matrix_market(path) -> SparseMatrix:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("%")]
    n, _, nnz = (int(t) for t in lines[0].split())
    arr = np.loadtxt(lines[1:1 + nnz], ndmin=2) if nnz else np.zeros((0, 3))
    return assemble_arrays(arr[:, 0].astype(np.int64) - 1, arr[:, 1].astype(np.int64) - 1,
                           arr[:, 2], n)
