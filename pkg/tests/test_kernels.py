"""The numba kernels and their numpy twins must agree; the env flag must switch them."""
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from drifthom import kernels
from drifthom.cell import generate_admissible_drift, make_coefficients
from drifthom.geometry import build_cell_geometry
from drifthom.sparse import assemble_arrays
from drifthom.tensors import effective_tensors


def random_coo(rng, n, k):
    rows = rng.integers(0, n, k)
    cols = rng.integers(0, n, k)
    vals = rng.normal(size=k)
    vals[rng.random(k) < 0.1] = 0.0
    return rows, cols, vals


@pytest.mark.parametrize("seed", range(5))
def test_coo_to_csr(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 60))
    r, c, v = random_coo(rng, n, int(rng.integers(0, 6 * n)))
    # add exact cancellations
    r = np.concatenate([r, [0, 0]])
    c = np.concatenate([c, [n - 1, n - 1]])
    v = np.concatenate([v, [1.5, -1.5]])
    a = kernels.coo_to_csr_nb(r, c, v, n)
    b = kernels.coo_to_csr_np(r, c, v, n)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert np.allclose(a[2], b[2], rtol=1e-15, atol=1e-15)


def test_matvec_and_diag():
    rng = np.random.default_rng(3)
    n = 80
    r, c, v = random_coo(rng, n, 500)
    r = np.concatenate([r, np.arange(n)])
    c = np.concatenate([c, np.arange(n)])
    v = np.concatenate([v, np.full(n, 10.0)])
    ip, ix, d = kernels.coo_to_csr_np(r, c, v, n)
    x = rng.normal(size=n)
    assert np.allclose(kernels.csr_matvec_nb(ip, ix, d, x), kernels.csr_matvec_np(ip, ix, d, x),
                       rtol=1e-14, atol=1e-13)
    assert np.array_equal(kernels.diag_pointers_nb(ip, ix), kernels.diag_pointers_np(ip, ix))


def test_ilu0_factor_and_apply():
    rng = np.random.default_rng(4)
    n = 120
    r, c, v = random_coo(rng, n, 600)
    r = np.concatenate([r, np.arange(n)])
    c = np.concatenate([c, np.arange(n)])
    v = np.concatenate([np.abs(v), np.full(n, 20.0)])
    ip, ix, d = kernels.coo_to_csr_np(r, c, v, n)
    dp = kernels.diag_pointers_np(ip, ix)
    lu_a = kernels.ilu0_factor_nb(ip, ix, d, dp, 0.0)
    lu_b = kernels.ilu0_factor_np(ip, ix, d, dp, 0.0)
    assert np.allclose(lu_a, lu_b, rtol=1e-13, atol=1e-14)
    rhs = rng.normal(size=n)
    sched = kernels.TriangularSchedule(ip, ix, dp)
    za = kernels.ilu0_apply_nb(ip, ix, lu_a, dp, rhs)
    zb = kernels.ilu0_apply_np(ip, ix, lu_a, dp, rhs, sched)
    assert np.allclose(za, zb, rtol=1e-12, atol=1e-13)


def test_godunov_divergence():
    g = build_cell_geometry(48)
    bx, by = generate_admissible_drift(g, (0.8, -0.6))
    mask = g.cell_mask
    rng = np.random.default_rng(5)
    u = np.where(mask, rng.random(mask.shape), 0.0)
    for pc in ((0.0, 1.0, -1.0), (0.0, 1.0), (0.1, -0.5, 0.0, 2.0)):
        pc = np.asarray(pc)
        dpc = np.polynomial.polynomial.polyder(pc)
        crit = np.array([x.real for x in np.roots(dpc[::-1]) if abs(x.imag) < 1e-12]) \
            if dpc.size > 1 else np.zeros(0)
        a = kernels.godunov_divergence_nb(u, mask, bx, by, pc, crit)
        b = kernels.godunov_divergence_np(u, mask, bx, by, pc, crit)
        assert np.allclose(a, b, rtol=1e-13, atol=1e-14)


@pytest.mark.parametrize("periodic", [False, True])
def test_macro_triplets(periodic, tensors_drift96):
    t, _ = tensors_drift96
    m = 12
    rng = np.random.default_rng(6)
    u = rng.random((m, m))
    dpc = np.polynomial.polynomial.polyder(np.asarray(t.P_coeffs))
    args = (u, 0.25, 0.01, np.ascontiguousarray(t.C0), np.ascontiguousarray(t.M2), dpc, periodic)
    A = assemble_arrays(*kernels.macro_triplets_nb(*args), m * m).to_dense()
    B = assemble_arrays(*kernels.macro_triplets_np(*args), m * m).to_dense()
    assert np.allclose(A, B, rtol=1e-14, atol=1e-14)


def test_env_flag_switches_backend():
    code = ("import json; from drifthom import kernels; from drifthom._jit import backend_name;"
            "print(json.dumps([kernels.USE_NUMBA, backend_name()]))")
    env = dict(os.environ, DRIFTHOM_DISABLE_JIT="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert json.loads(out.stdout) == [False, "numpy"]


def test_pipeline_agrees_across_backends():
    code = ("import json; from drifthom.geometry import build_cell_geometry;"
            "from drifthom.cell import generate_admissible_drift, make_coefficients;"
            "from drifthom.tensors import effective_tensors;"
            "g = build_cell_geometry(48);"
            "t, _ = effective_tensors(g, make_coefficients(g, drift=generate_admissible_drift(g)), 1.0);"
            "print(json.dumps(t.to_dict()))")
    env = dict(os.environ, DRIFTHOM_DISABLE_JIT="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    ref = json.loads(out.stdout)
    g = build_cell_geometry(48)
    t, _ = effective_tensors(g, make_coefficients(g, drift=generate_admissible_drift(g)), 1.0)
    for key in ("B_star", "M0", "M1", "M2"):
        assert np.allclose(np.asarray(getattr(t, key)), ref[key], rtol=0, atol=1e-10), key
