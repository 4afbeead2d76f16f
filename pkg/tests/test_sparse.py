import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drifthom.errors import IncompatibleRightHandSide, IndexOutOfRange, NotConverged
from drifthom.sparse import (ILU0, Jacobi, assemble, assemble_arrays, read_matrix_market, solve,
                             write_matrix_market)


def periodic_laplacian(n):
    trip = []
    for i in range(n):
        trip += [(i, i, 2.0), (i, (i + 1) % n, -1.0), (i, (i - 1) % n, -1.0)]
    return assemble(trip, n, symmetric=True)


def dense_mean_zero_solve(A, b):
    """Small dense route: bordered system [A 1; 1^T 0]."""
    n = A.shape[0]
    K = np.zeros((n + 1, n + 1))
    K[:n, :n] = A
    K[:n, n] = 1.0
    K[n, :n] = 1.0
    return np.linalg.solve(K, np.append(b, 0.0))[:n]


def test_identity_one_iteration():
    A = assemble([(0, 0, 1), (1, 1, 1)], 2)
    assert np.array_equal(A.to_dense(), np.eye(2))
    x, rep = solve(A, np.array([3.0, -1.0]))
    assert np.allclose(x, [3, -1], atol=1e-14)
    assert rep.iterations == 1 and rep.converged


def test_duplicates_summed():
    A = assemble([(0, 0, 1), (0, 0, 2)], 1)
    assert A.nnz == 1 and A.data[0] == 3.0


def test_index_out_of_range():
    with pytest.raises(IndexOutOfRange):
        assemble([(0, 5, 1)], 2)
    with pytest.raises(IndexOutOfRange):
        assemble_arrays([-1], [0], [1.0], 2)


def test_explicit_zeros_dropped_and_sorted():
    A = assemble([(0, 1, 1.0), (0, 1, -1.0), (1, 1, 2.0), (1, 0, 4.0), (0, 0, 5.0)], 2)
    assert A.nnz == 3
    assert list(A.indices[A.indptr[1]:A.indptr[2]]) == [0, 1]


def test_periodic_laplacian_nullspace():
    A = periodic_laplacian(4)
    b = np.array([1.0, -1.0, 1.0, -1.0])
    x, rep = solve(A, b, nullspace=True)
    ref = dense_mean_zero_solve(A.to_dense(), b)
    assert abs(x.mean()) < 1e-15
    assert np.max(np.abs(A @ x - b)) < 1e-12
    assert np.allclose(x, ref, atol=1e-12)
    assert np.allclose(x, [0.25, -0.25, 0.25, -0.25], atol=1e-12)


def test_incompatible_rhs():
    with pytest.raises(IncompatibleRightHandSide):
        solve(periodic_laplacian(4), np.ones(4), nullspace=True)


def test_not_converged_carries_report():
    A = periodic_laplacian(50)
    b = np.sin(np.arange(50) * 0.7)
    b -= b.mean()
    with pytest.raises(NotConverged) as exc:
        solve(A, b, tol=1e-14, max_iter=1, nullspace=True, preconditioner="jacobi")
    rep = exc.value.report
    assert not rep.converged and rep.final_residual > rep.tol


def test_report_converged_iff_below_tol():
    A = periodic_laplacian(30)
    b = np.cos(np.arange(30))
    b -= b.mean()
    _, rep = solve(A, b, nullspace=True, raise_on_failure=False, max_iter=3, preconditioner="jacobi")
    assert rep.converged == (rep.final_residual <= rep.tol)


def random_dd(rng, n, density, symmetric):
    mask = rng.random((n, n)) < density
    M = np.where(mask, rng.normal(size=(n, n)), 0.0)
    if symmetric:
        M = 0.5 * (M + M.T)
    np.fill_diagonal(M, 0.0)
    np.fill_diagonal(M, np.abs(M).sum(axis=1) + 1.0 + rng.random(n))
    return M


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 200), seed=st.integers(0, 2**31 - 1), symmetric=st.booleans(),
       pc=st.sampled_from(["ilu0", "jacobi"]))
def test_random_dd_matches_dense(n, seed, symmetric, pc):
    rng = np.random.default_rng(seed)
    M = random_dd(rng, n, min(1.0, 6.0 / n), symmetric)
    r, c = np.nonzero(M)
    A = assemble_arrays(r, c, M[r, c], n, symmetric=symmetric)
    b = rng.normal(size=n)
    x, rep = solve(A, b, preconditioner=pc)
    ref = np.linalg.solve(M, b)
    assert np.linalg.norm(x - ref) <= 1e-8 * np.linalg.norm(ref)
    assert rep.method == ("cg" if symmetric else "bicgstab")


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 40), seed=st.integers(0, 2**31 - 1))
def test_matvec_matches_triplet_product(n, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, 4 * n + 1))
    rows = rng.integers(0, n, k)
    cols = rng.integers(0, n, k)
    vals = rng.integers(-4, 5, k).astype(float)  # small integers: exact in any order
    A = assemble_arrays(rows, cols, vals, n)
    x = rng.integers(-3, 4, n).astype(float)
    naive = np.zeros(n)
    for r, c, v in zip(rows, cols, vals):
        naive[r] += v * x[c]
    assert np.array_equal(A @ x, naive)


def test_jacobi_divides_by_diagonal():
    n = 8
    trip = [(i, i, 3.0) for i in range(n)] + [(i, (i + 1) % n, -1.0) for i in range(n)]
    r = np.arange(float(n))
    assert np.allclose(Jacobi(assemble(trip, n))(r), r / 3.0)


def test_ilu0_exact_for_tridiagonal():
    n = 10
    trip = [(i, i, 4.0) for i in range(n)] + [(i, i + 1, -1.0) for i in range(n - 1)] + \
           [(i + 1, i, -2.0) for i in range(n - 1)]
    A = assemble(trip, n)
    b = np.arange(1.0, n + 1)
    assert np.allclose(ILU0(A)(b), np.linalg.solve(A.to_dense(), b), atol=1e-13)


def test_matrix_market_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    M = random_dd(rng, 12, 0.3, False)
    r, c = np.nonzero(M)
    A = assemble_arrays(r, c, M[r, c], 12)
    p = tmp_path / "a.mtx"
    write_matrix_market(A, p)
    B = read_matrix_market(p)
    assert np.array_equal(A.to_dense(), B.to_dense())
    assert p.read_text().startswith("%%MatrixMarket matrix coordinate real general")


def test_symmetry_detection():
    assert periodic_laplacian(5).is_symmetric()
    A = assemble([(0, 0, 1.0), (0, 1, 2.0), (1, 1, 1.0)], 2)
    assert not A.is_symmetric()
