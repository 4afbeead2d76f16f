import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drifthom.errors import (EmptyGammaN, InvalidResolution, NonGridAlignedObstacle,
                             ObstacleTouchesOuterBoundary)
from drifthom.geometry import (GAMMA_D, GAMMA_N, INACTIVE, INTERIOR, PERIODIC, build_cell_geometry,
                               build_macro_grid)


def test_three_by_three_all_neumann():
    g = build_cell_geometry(3)
    assert g.fluid_area == pytest.approx(8 / 9, abs=1e-15)
    assert g.gamma_N_length == pytest.approx(4 / 3, abs=1e-15)
    assert g.gamma_D_length == 0.0
    assert g.n_unknowns == 8


def test_left_face_dirichlet():
    g = build_cell_geometry(48, dirichlet_faces=("left",))
    assert g.gamma_D_length == pytest.approx(1 / 3, abs=1e-15)
    assert g.gamma_N_length == pytest.approx(1.0, abs=1e-15)
    assert (g.xface_tags == GAMMA_D).sum() == 16


def test_non_aligned_obstacle():
    with pytest.raises(NonGridAlignedObstacle):
        build_cell_geometry(4)


def test_obstacle_touching_boundary():
    with pytest.raises(ObstacleTouchesOuterBoundary):
        build_cell_geometry(6, obstacle=(0.0, 0.5, 1 / 3, 2 / 3))
    with pytest.raises(ObstacleTouchesOuterBoundary):
        build_cell_geometry(6, obstacle=("1/6", "1", "1/3", "2/3"))


def test_all_sides_dirichlet_leaves_no_neumann():
    with pytest.raises(EmptyGammaN):
        build_cell_geometry(6, dirichlet_faces=("left", "right", "bottom", "top"))


def test_small_n_rejected():
    with pytest.raises(InvalidResolution):
        build_cell_geometry(2, obstacle=None)


def test_fraction_strings_accepted():
    a = build_cell_geometry(9, obstacle=("1/3", "2/3", "1/3", "2/3"))
    b = build_cell_geometry(9)
    assert np.array_equal(a.cell_mask, b.cell_mask)


def test_empty_obstacle():
    g = build_cell_geometry(5, obstacle=None)
    assert g.fluid_area == 1.0 and g.gamma_N_length == 0.0
    assert g.cell_mask.all()


aligned = st.integers(3, 30).flatmap(
    lambda n: st.tuples(st.just(n), st.integers(1, n - 2), st.integers(1, n - 2),
                        st.integers(1, n - 2), st.integers(1, n - 2),
                        st.sets(st.sampled_from(["left", "right", "bottom", "top"]), max_size=3)))


@settings(max_examples=60, deadline=None)
@given(aligned)
def test_geometry_invariants(args):
    n, a, b, c, d, sides = args
    I0, I1 = sorted((a, b))
    J0, J1 = sorted((c, d))
    I1 += 1
    J1 += 1
    if I1 > n - 1 or J1 > n - 1:
        return
    g = build_cell_geometry(n, obstacle=(I0 / n, I1 / n, J0 / n, J1 / n), dirichlet_faces=sides)
    # area identity
    assert g.fluid_area + (I1 - I0) * (J1 - J0) / n**2 == pytest.approx(1.0, abs=1e-15)
    assert g.fluid_area == pytest.approx(g.cell_mask.sum() / n**2, abs=1e-15)
    # every face has one tag consistent with its two neighbours
    for tags, axis in ((g.xface_tags, 0), (g.yface_tags, 1)):
        lo = np.roll(g.cell_mask, 1, axis=axis)
        hi = g.cell_mask
        both = lo & hi
        neither = ~lo & ~hi
        one = lo ^ hi
        assert np.all(np.isin(tags[both], (INTERIOR, PERIODIC)))
        assert np.all(tags[neither] == INACTIVE)
        assert np.all(np.isin(tags[one], (GAMMA_D, GAMMA_N)))
    # Γ_D and Γ_N tile the obstacle boundary
    h = 1.0 / n
    nb = ((g.xface_tags == GAMMA_D).sum() + (g.yface_tags == GAMMA_D).sum()) * h
    nn = ((g.xface_tags == GAMMA_N).sum() + (g.yface_tags == GAMMA_N).sum()) * h
    assert nb == pytest.approx(g.gamma_D_length, abs=1e-12)
    assert nn == pytest.approx(g.gamma_N_length, abs=1e-12)
    assert nb + nn == pytest.approx(2 * ((I1 - I0) + (J1 - J0)) * h, abs=1e-12)
    # periodic pairing: the wrap faces are exactly row/column 0, one partner each
    assert np.all(g.xface_tags[0] == PERIODIC) and np.all(g.yface_tags[:, 0] == PERIODIC)
    assert (g.xface_tags == PERIODIC).sum() == n and (g.yface_tags == PERIODIC).sum() == n


def test_macro_grid_examples():
    g = build_macro_grid(1, 4)
    assert g.h == 0.5 and g.n_cells == 16
    assert build_macro_grid(8, 256).h == 0.0625
    with pytest.raises(InvalidResolution):
        build_macro_grid(0, 10)
    with pytest.raises(InvalidResolution):
        build_macro_grid(1, 3)


def test_macro_grid_centres_symmetric():
    X, Y = build_macro_grid(2, 8).centers()
    assert np.allclose(X + X[::-1], 0) and X[0, 0] == -1.75
