"""Harmonic potential guiding pedestrians toward an exit edge.

Solves the five-point discrete Laplace equation at cell centres with
Dirichlet data on ghost cells: ``1`` along the exit segment, ``0`` on the
rest of the outer boundary and on obstacle cells.  The desired velocity is
the (optionally normalised) gradient of the solution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import NonConvergence, ValidationError
from .grid import CellVelocityField, Grid
from .velocity import DesiredVelocitySpec

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class PotentialField:
    grid: Grid
    u: np.ndarray
    residual: float
    iterations: int = 0


def _edge_side(edge) -> tuple[str, float, float]:
    (x0, y0), (x1, y1) = edge
    if x0 == x1 and x0 in (0.0, 1.0):
        side, lo, hi = ("left" if x0 == 0.0 else "right"), min(y0, y1), max(y0, y1)
    elif y0 == y1 and y0 in (0.0, 1.0):
        side, lo, hi = ("bottom" if y0 == 0.0 else "top"), min(x0, x1), max(x0, x1)
    else:
        raise ValidationError(f"target_edge {edge} does not lie on one side of the unit square")
    if not hi > lo:
        raise ValidationError(f"target_edge {edge} has zero length")
    if lo < 0 or hi > 1:
        raise ValidationError(f"target_edge {edge} leaves the unit square")
    return side, lo, hi


def boundary_data(grid: Grid, edge) -> np.ndarray:
    """Padded ``(M + 2, M + 2)`` array of ghost values; the interior is zero.

    A ghost cell gets 1 when the centre of its boundary neighbour projects
    onto the exit segment (inclusive).
    """
    side, lo, hi = _edge_side(edge)
    M = grid.M
    c = (np.arange(M) + 0.5) * grid.h
    on = ((c >= lo) & (c <= hi)).astype(float)
    g = np.zeros((M + 2, M + 2))
    if side == "left":
        g[0, 1:-1] = on
    elif side == "right":
        g[-1, 1:-1] = on
    elif side == "bottom":
        g[1:-1, 0] = on
    else:
        g[1:-1, -1] = on
    return g


def _neighbour_sum(P: np.ndarray) -> np.ndarray:
    return P[:-2, 1:-1] + P[2:, 1:-1] + P[1:-1, :-2] + P[1:-1, 2:]


def laplace_residual(u: np.ndarray, grid: Grid, g: np.ndarray) -> float:
    """Relative 2-norm residual of ``4 u - sum(neighbours) = 0`` on walkable cells."""
    free = grid.walkable
    P = g.copy()
    P[1:-1, 1:-1] = np.where(free, u, 0.0)
    r = np.where(free, 4.0 * P[1:-1, 1:-1] - _neighbour_sum(P), 0.0)
    G = g.copy()
    G[1:-1, 1:-1] = 0.0
    b = np.where(free, _neighbour_sum(G), 0.0)
    bnorm = np.linalg.norm(b)
    return float(np.linalg.norm(r) / bnorm) if bnorm > 0 else float(np.linalg.norm(r))


def solve_potential(
    grid: Grid,
    spec: DesiredVelocitySpec,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
) -> PotentialField:
    """Red-black SOR solve of the discrete Laplace problem.

    Raises
    ------
    NonConvergence
        If ``max_iter`` sweeps (default ``100 M^2``) do not bring the relative
        residual below ``tol``.
    """
    if spec.target_edge is None:
        raise ValidationError("potential mode needs a target_edge")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    M = grid.M
    g = boundary_data(grid, spec.target_edge)
    if max_iter is None:
        max_iter = 100 * M * M
    free = grid.walkable
    I, J = np.meshgrid(np.arange(M), np.arange(M), indexing="ij")
    colours = [free & ((I + J) % 2 == c) for c in (0, 1)]
    w = 2.0 / (1.0 + np.sin(np.pi / (M + 1)))

    P = g.copy()
    inner = P[1:-1, 1:-1]
    it = 0
    res = laplace_residual(inner, grid, g)
    while res > tol:
        if it >= max_iter:
            raise NonConvergence(f"Laplace solve stalled at residual {res:.3e} after {it} sweeps (tol {tol:.1e})")
        for sel in colours:
            gs = 0.25 * _neighbour_sum(P)
            inner[sel] += w * (gs[sel] - inner[sel])
        it += 1
        if it % 10 == 0 or it >= max_iter:
            res = laplace_residual(inner, grid, g)
    log.debug("Laplace solve: %d sweeps, residual %.3e", it, res)
    return PotentialField(grid, inner.copy(), res, it)


def desired_from_potential(pot: PotentialField, spec: DesiredVelocitySpec) -> CellVelocityField:
    """Cellwise gradient of the potential.

    Central differences where both neighbours are walkable, one-sided where
    only one is, zero where neither is.  With ``spec.normalize_gradient`` the
    nonzero vectors are rescaled to length ``alpha``.
    """
    grid = pot.grid
    h = grid.h
    walk = np.pad(grid.walkable, 1, constant_values=False)
    U = np.pad(pot.u, 1)
    grad = np.zeros(grid.shape + (2,))
    for axis in (0, 1):
        sl_c = (slice(1, -1), slice(1, -1))
        lo = [slice(1, -1), slice(1, -1)]
        hi = [slice(1, -1), slice(1, -1)]
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        lo, hi = tuple(lo), tuple(hi)
        has_lo, has_hi = walk[lo], walk[hi]
        central = (U[hi] - U[lo]) / (2 * h)
        forward = (U[hi] - U[sl_c]) / h
        backward = (U[sl_c] - U[lo]) / h
        grad[..., axis] = np.select(
            [has_lo & has_hi, has_hi, has_lo], [central, forward, backward], default=0.0
        )
    grad[grid.mask] = 0.0
    if spec.normalize_gradient:
        speed = np.hypot(grad[..., 0], grad[..., 1])
        nz = speed > 0
        grad[nz] *= (spec.alpha / speed[nz])[:, None]
    return CellVelocityField(grid, grad)
