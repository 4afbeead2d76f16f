import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drifthom.cell import generate_admissible_drift, make_coefficients
from drifthom.errors import CoercivityViolated, GeometryMismatch
from drifthom.geometry import build_cell_geometry
from drifthom.tensors import (EffectiveTensors, assemble_tensors, check_coercivity, decompose,
                              evaluate_dispersion, effective_tensors, min_eig_sym2,
                              snap_to_lattice)

SAMPLES = (0.0, 0.25, 0.5, 0.75, 1.0)


def test_empty_obstacle_reduces_to_D():
    g = build_cell_geometry(12, obstacle=None)
    D = np.diag([1.5, 0.5])
    c = make_coefficients(g, D=D, drift=generate_admissible_drift(g, (0.3, 0.4)))
    t, _ = effective_tensors(g, c, 1.0)
    assert np.array_equal(t.M0, D) and np.all(t.M1 == 0) and np.all(t.M2 == 0)
    for u in SAMPLES:
        assert np.array_equal(t.evaluate(u), D)


def test_geometry_mismatch():
    g, g2 = build_cell_geometry(24), build_cell_geometry(48)
    _, sol = effective_tensors(g, make_coefficients(g), 0.0)
    with pytest.raises(GeometryMismatch):
        assemble_tensors(g2, make_coefficients(g2), sol)


def test_classical_limit_against_oracle(tensors_plain96, oracle_fixture):
    t, _ = tensors_plain96
    ref = np.array(oracle_fixture["no_drift"]["M0"])
    assert np.all(t.M2 == 0) and np.abs(t.B_star).max() <= 1e-15
    for u in SAMPLES:
        D = t.evaluate(u)
        assert np.abs(D - ref).max() <= 0.01 * np.abs(ref).max()


def test_drift_tensor_against_oracle(tensors_drift96, oracle_fixture):
    t, _ = tensors_drift96
    o = oracle_fixture["drift"]
    ref = EffectiveTensors(np.array(o["B_star"]), np.array(o["M0"]), np.array(o["M1"]),
                           np.array(o["M2"]), t.P_coeffs, 1.0, t.fluid_area, 1.0)
    for u in SAMPLES:
        D, R = t.evaluate(u), ref.evaluate(u)
        assert np.abs(D - R).max() <= 0.01 * np.abs(R).max()


def test_default_P_at_half(tensors_drift96):
    t, _ = tensors_drift96
    assert np.array_equal(t.evaluate(0.5), snap_to_lattice(t.C0))
    assert np.abs(t.evaluate(0.5) - t.C0).max() <= 1e-13


def test_zero_M2_and_linear_P_independent_of_u0(tensors_plain96, tensors_drift96):
    t, _ = tensors_plain96
    assert np.array_equal(t.evaluate(0.1), t.evaluate(0.9))
    td, _ = tensors_drift96
    lin = EffectiveTensors(td.B_star, td.M0, td.M1, td.M2, (0.0, 1.0), 1.0, td.fluid_area, 1.0)
    assert np.array_equal(lin.evaluate(0.1), lin.evaluate(0.9))


def test_vectorised_evaluation(tensors_drift96):
    t, _ = tensors_drift96
    u = np.linspace(0, 1, 7).reshape(7, 1)
    D = evaluate_dispersion(t, u)
    assert D.shape == (7, 1, 2, 2)
    assert np.array_equal(D[3, 0], t.evaluate(u[3, 0]))


def test_decompose_example():
    A, J = decompose([[2.0, 1.0], [0.0, 2.0]])
    assert np.array_equal(A, [[2, 0.5], [0.5, 2]])
    assert np.array_equal(J, [[0, 0.5], [-0.5, 0]])
    _, J = decompose([[1.0, 3.0], [3.0, -2.0]])
    assert np.all(J == 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4), st.floats(0, 2 * np.pi))
def test_skew_part_has_no_quadratic_form(entries, ang):
    A, J = decompose(np.reshape(entries, (2, 2)))
    xi = np.array([np.cos(ang), np.sin(ang)])
    assert abs(xi @ J @ xi) <= 1e-12 * (1 + np.abs(entries).max())
    assert np.array_equal(A, A.T) and np.array_equal(J, -J.T)


def test_decomposition_exact_on_default(tensors_drift96):
    t, _ = tensors_drift96
    t0 = time.perf_counter()
    for u in SAMPLES:
        D = t.evaluate(u)
        A, J = decompose(D)
        assert np.array_equal(A, A.T)
        assert np.array_equal(J, -J.T)
        assert np.array_equal(A + J, D)
    assert time.perf_counter() - t0 < 1.0


def test_rayleigh_equals_symmetric_part(tensors_drift96):
    t, _ = tensors_drift96
    rng = np.random.default_rng(0)
    for u in SAMPLES:
        D = t.evaluate(u)
        A, _ = decompose(D)
        for xi in rng.normal(size=(16, 2)):
            assert xi @ D @ xi == pytest.approx(xi @ A @ xi, rel=1e-14)


def test_coercivity_identity_tensor():
    g = build_cell_geometry(12, obstacle=None)
    t, _ = effective_tensors(g, make_coefficients(g), 0.0)
    rep = check_coercivity(t, fluid_area=8 / 9)
    assert rep.min_rayleigh == pytest.approx(1.0, abs=1e-15) and rep.passed


def test_coercivity_default(tensors_plain96, tensors_drift96):
    for t, _ in (tensors_plain96, tensors_drift96):
        rep = check_coercivity(t)
        assert rep.passed
        assert rep.min_rayleigh >= t.theta * t.fluid_area * 0.95
        assert rep.min_eig == pytest.approx(rep.min_rayleigh, abs=2e-3)
    t, _ = tensors_plain96
    assert min_eig_sym2(t.evaluate(0.0)) >= t.theta * t.fluid_area - 0.02


def test_coercivity_violation_reported(tensors_plain96):
    t, _ = tensors_plain96
    with pytest.raises(CoercivityViolated) as exc:
        check_coercivity(t, theta=2.0)
    assert exc.value.report.min_rayleigh < exc.value.report.threshold
    rep = check_coercivity(t, theta=2.0, raise_on_failure=False)
    assert not rep.passed and len(rep.per_sample) == 11


@pytest.mark.parametrize("with_drift", [False, True])
def test_coercivity_deficit_shrinks(with_drift):
    deficits = []
    for n in (24, 48, 96):
        g = build_cell_geometry(n)
        c = make_coefficients(g, drift=generate_admissible_drift(g) if with_drift else None)
        t, _ = effective_tensors(g, c, 1.0)
        r = check_coercivity(t)
        deficits.append(r.alpha - r.min_rayleigh)
    assert np.all(np.diff(deficits) < 0), deficits


def test_symmetric_part_invariant_under_shift(geom96, drift96, tensors_drift96):
    t, sol = tensors_drift96
    s = assemble_tensors(geom96, drift96, sol.shifted(0.3, -0.7))
    # gradients of w + c differ from those of w only by rounding
    assert np.abs(s.A_energy - t.A_energy).max() <= 1e-13
    assert np.abs(s.M0 - t.M0).max() <= 1e-13
    assert np.abs(s.M1 - t.M1 - [0.3, -0.7]).max() <= 1e-13
    assert np.array_equal(t.A_energy, t.A_energy.T)


def test_energy_form_matches_flux_form_without_drift(tensors_plain96):
    t, _ = tensors_plain96
    assert np.allclose(t.A_energy, t.M0, atol=5e-3)


def test_linear_P_pipeline_constant(geom96):
    c = make_coefficients(geom96, drift=generate_admissible_drift(geom96), P_coeffs=(0.0, 1.0))
    t, _ = effective_tensors(geom96, c, 1.0)
    D = [t.evaluate(u) for u in SAMPLES]
    assert max(np.abs(d - D[0]).max() for d in D) <= 1e-13


def test_roundtrip_dict(tensors_drift96):
    t, _ = tensors_drift96
    back = EffectiveTensors.from_dict(t.to_dict())
    for u in SAMPLES:
        assert np.array_equal(back.evaluate(u), t.evaluate(u))
