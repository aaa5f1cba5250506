"""Uniform square grid over the unit square, obstacles and cellwise fields.

Storage convention: arrays are ``(M, M)`` with axis 0 running over the
horizontal index ``i`` and axis 1 over the vertical index ``j``, so that
``rho[i - 1, j - 1]`` is the density of the cell centred at
``((2i - 1) h / 2, (2j - 1) h / 2)``.  Public functions taking cell
indices use 1-based ``(i, j)``.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import GridError

# Tolerance for deciding that a rectangle coordinate already sits on a cell edge.
_SNAP_TOL = 1e-9


def _snap_down(x: float, M: int) -> int:
    k = x * M
    r = round(k)
    return int(r) if abs(k - r) < _SNAP_TOL else int(np.floor(k))


def _snap_up(x: float, M: int) -> int:
    k = x * M
    r = round(k)
    return int(r) if abs(k - r) < _SNAP_TOL else int(np.ceil(k))


@dataclass(frozen=True)
class Grid:
    """Partition of ``[0, 1]^2`` into ``M x M`` square cells of side ``h = 1/M``.

    Attributes
    ----------
    M : int
        Cells per side.
    obstacles : tuple of (i0, i1, j0, j1)
        Snapped obstacle rectangles in half-open index units: the rectangle
        covers cells ``i0 <= i < i1``, ``j0 <= j < j1`` (0-based), i.e. the
        region ``[i0 h, i1 h] x [j0 h, j1 h]``.
    mask : ndarray of bool, shape (M, M)
        True where a cell lies inside an obstacle.
    """

    M: int
    obstacles: tuple[tuple[int, int, int, int], ...] = ()
    mask: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 2:
            raise GridError(f"grid needs M >= 2 cells per side, got {self.M}")
        mask = np.zeros((self.M, self.M), dtype=bool)
        for i0, i1, j0, j1 in self.obstacles:
            mask[i0:i1, j0:j1] = True
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def h(self) -> float:
        return 1.0 / self.M

    @property
    def shape(self) -> tuple[int, int]:
        return (self.M, self.M)

    @property
    def walkable(self) -> np.ndarray:
        return ~self.mask

    def obstacle_rects(self) -> list[tuple[float, float, float, float]]:
        """Obstacles as ``(xmin, ymin, xmax, ymax)`` in domain units."""
        h = self.h
        return [(i0 * h, j0 * h, i1 * h, j1 * h) for i0, i1, j0, j1 in self.obstacles]

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-centre coordinate arrays ``(X, Y)``, each of shape ``(M, M)``."""
        c = (np.arange(self.M) + 0.5) * self.h
        return np.meshgrid(c, c, indexing="ij")

    def cell_of(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """0-based indices of the cells containing ``points`` (shape ``(..., 2)``).

        Points on the outer boundary ``x = 1`` are assigned to the last cell.
        """
        points = np.asarray(points, dtype=float)
        idx = np.floor(points * self.M).astype(np.int64)
        np.clip(idx, 0, self.M - 1, out=idx)
        return idx[..., 0], idx[..., 1]


def make_grid(M: int, obstacle_rects: Sequence[Sequence[float]] = ()) -> Grid:
    """Build a grid, snapping each obstacle rectangle outward to cell edges.

    Rectangles are given as ``(xmin, ymin, xmax, ymax)`` and must lie in the
    unit square.
    """
    if int(M) != M or M < 2:
        raise GridError(f"grid needs M >= 2 cells per side, got {M}")
    M = int(M)
    snapped = []
    for rect in obstacle_rects:
        if len(rect) != 4:
            raise GridError(f"obstacle must be (xmin, ymin, xmax, ymax), got {rect!r}")
        xmin, ymin, xmax, ymax = (float(v) for v in rect)
        if not (0.0 <= xmin < xmax <= 1.0 and 0.0 <= ymin < ymax <= 1.0):
            raise GridError(f"obstacle {rect!r} is empty or leaves the unit square")
        box = (_snap_down(xmin, M), _snap_up(xmax, M), _snap_down(ymin, M), _snap_up(ymax, M))
        if box == (0, M, 0, M):
            raise GridError(f"obstacle {rect!r} covers the whole domain after snapping")
        snapped.append(box)
    grid = Grid(M, tuple(snapped))
    if grid.mask.all():
        raise GridError("obstacles leave no walkable cell")
    return grid


def cell_center(grid: Grid, i: int, j: int) -> tuple[float, float]:
    """Centre of cell ``(i, j)`` with 1-based indices."""
    if not (1 <= i <= grid.M and 1 <= j <= grid.M):
        raise IndexError(f"cell ({i}, {j}) outside 1..{grid.M}")
    h = grid.h
    return ((2 * i - 1) * h / 2, (2 * j - 1) * h / 2)


@dataclass(frozen=True)
class DensityField:
    """Piecewise-constant nonnegative density on a grid.

    Values on obstacle cells are zeroed on construction.  The stored array
    is a read-only copy.
    """

    grid: Grid
    rho: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=float)
        if rho.shape != self.grid.shape:
            raise GridError(f"density shape {rho.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(rho)):
            raise ValueError("density contains non-finite values")
        if np.any(rho < 0):
            raise ValueError(f"density must be nonnegative, min is {rho.min()!r}")
        rho[self.grid.mask] = 0.0
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def zeros(cls, grid: Grid) -> DensityField:
        return cls(grid, np.zeros(grid.shape))

    def cell_measures(self) -> np.ndarray:
        """Mass carried by each cell, ``h^2 rho``."""
        return self.grid.h ** 2 * self.rho


@dataclass(frozen=True)
class CellVelocityField:
    """One constant velocity vector per cell; ``u`` has shape ``(M, M, 2)``."""

    grid: Grid
    u: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        if u.shape != self.grid.shape + (2,):
            raise GridError(f"velocity shape {u.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(u)):
            raise ValueError("velocity contains non-finite values")
        u[self.grid.mask] = 0.0
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @classmethod
    def zeros(cls, grid: Grid) -> CellVelocityField:
        return cls(grid, np.zeros(grid.shape + (2,)))

    def max_component_speed(self) -> float:
        return float(np.abs(self.u).max()) if self.u.size else 0.0


def mass(field: DensityField) -> float:
    """Total mass ``h^2 * sum(rho)``."""
    return float(field.grid.h ** 2 * field.rho.sum())


def measure_of(field: DensityField, cells: Iterable[tuple[int, int]]) -> float:
    """Mass inside a set of cells given by 1-based ``(i, j)`` indices."""
    M = field.grid.M
    total = 0.0
    for i, j in set(cells):
        if not (1 <= i <= M and 1 <= j <= M):
            raise IndexError(f"cell ({i}, {j}) outside 1..{M}")
        total += field.rho[i - 1, j - 1]
    return float(field.grid.h ** 2 * total)


def norms(field: DensityField) -> dict[str, float]:
    rho = field.rho
    return {"l1": mass(field), "linf": float(rho.max()), "min": float(rho.min())}
