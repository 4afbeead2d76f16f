"""Structured grids for the perforated unit cell and the macroscopic domain.

Cell grid conventions (used throughout the package):

* cell ``(i, j)`` has centre ``((i + 1/2) h, (j + 1/2) h)``, ``i`` along y1;
* x-face ``(i, j)`` sits at ``y1 = i h`` between cells ``(i-1, j)`` and
  ``(i, j)``; y-face ``(i, j)`` sits at ``y2 = j h`` between ``(i, j-1)`` and
  ``(i, j)``. Index 0 is the periodic wrap face.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import (EmptyGammaN, InvalidResolution, NonGridAlignedObstacle,
                     ObstacleTouchesOuterBoundary)

# face tags
INACTIVE = -1  # both neighbours solid
INTERIOR = 0
PERIODIC = 1
GAMMA_D = 2
GAMMA_N = 3
TAG_NAMES = {INACTIVE: "inactive", INTERIOR: "interior", PERIODIC: "periodic",
             GAMMA_D: "gamma_D", GAMMA_N: "gamma_N"}

SIDES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class CellGeometry:
    n: int
    obstacle: tuple | None  # (x0, x1, y0, y1) or None for an unperforated cell
    obstacle_index: tuple | None  # (I0, I1, J0, J1) grid-line indices
    cell_mask: np.ndarray  # True on fluid cells, shape (n, n)
    xface_tags: np.ndarray
    yface_tags: np.ndarray
    dirichlet_sides: frozenset
    fluid_area: float
    gamma_D_length: float
    gamma_N_length: float
    index: np.ndarray = field(repr=False)  # fluid cell -> unknown number, -1 on solid
    cells: np.ndarray = field(repr=False)  # (N, 2) array of fluid (i, j)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def n_unknowns(self) -> int:
        return int(self.cells.shape[0])

    @property
    def obstacle_area(self) -> float:
        return 1.0 - self.fluid_area

    def centers(self):
        c = (np.arange(self.n) + 0.5) * self.h
        return np.meshgrid(c, c, indexing="ij")

    def tag_counts(self) -> dict:
        out = {}
        for tag, name in TAG_NAMES.items():
            out[name] = int((self.xface_tags == tag).sum() + (self.yface_tags == tag).sum())
        return out


def _snap(value, n, what):
    frac = Fraction(value).limit_denominator(10**6) if not isinstance(value, Fraction) else value
    k = frac * n
    ki = round(float(k))
    if abs(float(value) * n - ki) > 1e-9 * max(1, n):
        raise NonGridAlignedObstacle(
            f"obstacle {what} = {float(value):.12g} is not a multiple of 1/{n}")
    return ki


def _parse_fraction(v):
    if isinstance(v, str):
        return Fraction(v)
    return v


def build_cell_geometry(n: int, obstacle=(1 / 3, 2 / 3, 1 / 3, 2 / 3), dirichlet_faces=()) -> CellGeometry:
    """Perforated unit cell on an ``n x n`` grid.

    ``obstacle`` is ``(x0, x1, y0, y1)`` (strings such as ``"1/3"`` are
    accepted) or ``None`` for an empty obstacle. ``dirichlet_faces`` selects
    obstacle sides from ``("left", "right", "bottom", "top")`` carrying Γ_D;
    the rest of the obstacle boundary is Γ_N.
    """
    n = int(n)
    if n < 3:
        raise InvalidResolution(f"cell grid needs n >= 3, got {n}")
    sides = frozenset(dirichlet_faces or ())
    unknown = sides - set(SIDES)
    if unknown:
        raise ValueError(f"unknown obstacle sides {sorted(unknown)}; expected {SIDES}")
    mask = np.ones((n, n), dtype=bool)
    xt = np.full((n, n), INTERIOR, dtype=np.int8)
    yt = np.full((n, n), INTERIOR, dtype=np.int8)
    xt[0, :] = PERIODIC
    yt[:, 0] = PERIODIC
    if obstacle is None:
        if sides:
            raise ValueError("Dirichlet sides given without an obstacle")
        idx = -np.ones((n, n), dtype=np.int64)
        cells = np.argwhere(mask)
        idx[mask] = np.arange(cells.shape[0])
        return CellGeometry(n, None, None, mask, xt, yt, sides, 1.0, 0.0, 0.0, idx, cells)

    x0, x1, y0, y1 = (_parse_fraction(v) for v in obstacle)
    if not (x0 < x1 and y0 < y1):
        raise ValueError(f"degenerate obstacle {obstacle}")
    if min(x0, y0) <= 0 or max(x1, y1) >= 1:
        raise ObstacleTouchesOuterBoundary(f"obstacle {tuple(map(float, (x0, x1, y0, y1)))} "
                                           "must lie strictly inside the unit square")
    I0, I1 = _snap(x0, n, "x0"), _snap(x1, n, "x1")
    J0, J1 = _snap(y0, n, "y0"), _snap(y1, n, "y1")
    if I0 < 1 or J0 < 1 or I1 > n - 1 or J1 > n - 1:
        raise ObstacleTouchesOuterBoundary("obstacle must keep at least one fluid cell to the outer boundary")
    mask[I0:I1, J0:J1] = False

    # faces between two solid cells are not part of the mesh
    xt[I0 + 1:I1, J0:J1] = INACTIVE
    yt[I0:I1, J0 + 1:J1] = INACTIVE
    tag = lambda s: GAMMA_D if s in sides else GAMMA_N  # noqa: E731
    xt[I0, J0:J1] = tag("left")
    xt[I1, J0:J1] = tag("right")
    yt[I0:I1, J0] = tag("bottom")
    yt[I0:I1, J1] = tag("top")

    h = Fraction(1, n)
    lx, ly = (I1 - I0) * h, (J1 - J0) * h
    lengths = {"left": ly, "right": ly, "bottom": lx, "top": lx}
    gd = sum((lengths[s] for s in sides), Fraction(0))
    gn = sum((lengths[s] for s in SIDES if s not in sides), Fraction(0))
    if gn == 0:
        raise EmptyGammaN("every obstacle side is Dirichlet; the Neumann part must have positive length")
    fluid = 1 - lx * ly

    idx = -np.ones((n, n), dtype=np.int64)
    cells = np.argwhere(mask)
    idx[mask] = np.arange(cells.shape[0])
    return CellGeometry(n, tuple(float(v) for v in (x0, x1, y0, y1)), (I0, I1, J0, J1), mask, xt, yt,
                        sides, float(fluid), float(gd), float(gn), idx, cells)


@dataclass(frozen=True)
class MacroGrid:
    """Uniform ``m x m`` cell-centred grid on ``[c - L, c + L]^2``.

    ``periodic=False`` carries homogeneous Dirichlet data on the outer
    boundary (ghost value at distance h/2); ``periodic=True`` turns the square
    into a torus, which the two-scale comparison needs for the frame shift.
    """

    L: float
    m: int
    periodic: bool = False
    center: tuple = (0.0, 0.0)

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.m

    @property
    def n_cells(self) -> int:
        return self.m * self.m

    @property
    def area(self) -> float:
        return (2.0 * self.L) ** 2

    def axis(self, k=0):
        return self.center[k] - self.L + (np.arange(self.m) + 0.5) * self.h

    def centers(self):
        return np.meshgrid(self.axis(0), self.axis(1), indexing="ij")


def build_macro_grid(L: float, m: int, periodic: bool = False, center=(0.0, 0.0)) -> MacroGrid:
    L = float(L)
    if not np.isfinite(L) or L <= 0:
        raise InvalidResolution(f"half-width L must be positive, got {L}")
    if int(m) != m or m < 4:
        raise InvalidResolution(f"need an integer m >= 4 cells per side, got {m}")
    return MacroGrid(L, int(m), bool(periodic), (float(center[0]), float(center[1])))
