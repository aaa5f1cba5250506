"""One-step density update by exact overlap of translated cells.

Each cell ``E_lm`` is translated rigidly by ``u_lm * dt``.  Under the CFL
condition ``dt * max|u|_inf <= h`` the image overlaps at most four cells of
the grid, and the area it shares with each of them factorises into a
horizontal and a vertical length::

    offset -1 : U^- dt      offset 0 : h - |U| dt      offset +1 : U^+ dt

The new density of a cell is the sum of incoming masses divided by ``h^2``.
Because every weight is a nonnegative area and the weights of a source sum
to ``h^2``, the update conserves mass and preserves positivity.

Walls and obstacles are handled by shortening velocity components before
the step (``clamp_boundary``) so that no translated cell leaves the
walkable region.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np

from .errors import CflViolation, SupportEscape
from .grid import CellVelocityField, DensityField, Grid, mass

if TYPE_CHECKING:
    from .scenario import Scenario

log = logging.getLogger(__name__)

# dt * max speed may overshoot h by a few ulps after clamping to an exact gap.
_CFL_RTOL = 4 * np.finfo(float).eps
MAX_HALVINGS = 20


@dataclass(frozen=True)
class CflVerdict:
    ok: bool
    max_speed: float
    dt: float
    h: float

    @property
    def margin(self) -> float:
        return self.h - self.dt * self.max_speed

    def __bool__(self):
        return self.ok


def check_cfl(u: CellVelocityField, dt: float) -> CflVerdict:
    """Test ``dt * max_cells |u|_inf <= h``; equality passes."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    vmax = u.max_component_speed()
    h = u.grid.h
    return CflVerdict(dt * vmax <= h * (1 + _CFL_RTOL), vmax, dt, h)


# -- clamping --------------------------------------------------------------


def _free_runs(walk: np.ndarray, axis: int, direction: int) -> np.ndarray:
    """Count of consecutive walkable cells after each cell along ``axis``."""
    w = np.moveaxis(walk, axis, 0)
    M = w.shape[0]
    runs = np.zeros(w.shape, dtype=np.int64)
    order = range(M - 2, -1, -1) if direction > 0 else range(1, M)
    for k in order:
        nxt = k + direction
        runs[k] = np.where(w[nxt], runs[nxt] + 1, 0)
    return np.moveaxis(runs, 0, axis)


def _blocked_prefix(grid: Grid) -> np.ndarray:
    blocked = np.pad(grid.mask, 1, constant_values=True).astype(np.int64)
    S = np.zeros((grid.M + 3, grid.M + 3), dtype=np.int64)
    S[1:, 1:] = blocked.cumsum(0).cumsum(1)
    return S


def clamp_boundary(u: CellVelocityField, dt: float) -> tuple[CellVelocityField, int]:
    """Shorten velocity components so translated cells stay walkable.

    Each component keeps its sign and is cut to the free gap between the
    cell and the nearest wall or obstacle cell in its direction.  When both
    components survive but the diagonal corner would clip a blocked cell,
    the smaller component is dropped.

    Returns the clamped field and the number of cells that changed.
    """
    grid = u.grid
    h = grid.h
    walk = grid.walkable
    vel = np.array(u.u)
    disp = vel * dt

    for axis in (0, 1):
        d = disp[..., axis]
        gap_pos = _free_runs(walk, axis, +1) * h
        gap_neg = _free_runs(walk, axis, -1) * h
        gap = np.where(d > 0, gap_pos, gap_neg)
        cut = np.abs(d) > gap
        vel[..., axis] = np.where(cut, np.sign(d) * gap / dt, vel[..., axis])
        disp[..., axis] = np.where(cut, np.sign(d) * gap, d)

    # corner check on the rectangle of cells the translated square touches
    both = (disp[..., 0] != 0) & (disp[..., 1] != 0) & walk
    if both.any():
        S = _blocked_prefix(grid)
        li, mi = np.nonzero(both)
        dx, dy = disp[li, mi, 0], disp[li, mi, 1]
        kx = np.maximum(np.ceil(np.abs(dx) / h - 1e-9), 1).astype(np.int64)
        ky = np.maximum(np.ceil(np.abs(dy) / h - 1e-9), 1).astype(np.int64)
        # padded coordinates: cell (l, m) sits at (l + 1, m + 1)
        x0 = np.where(dx > 0, li + 1, li + 1 - kx)
        x1 = np.where(dx > 0, li + 1 + kx, li + 1)
        y0 = np.where(dy > 0, mi + 1, mi + 1 - ky)
        y1 = np.where(dy > 0, mi + 1 + ky, mi + 1)
        x0, x1 = np.clip(x0, 0, grid.M + 1), np.clip(x1, 0, grid.M + 1)
        y0, y1 = np.clip(y0, 0, grid.M + 1), np.clip(y1, 0, grid.M + 1)
        hits = S[x1 + 1, y1 + 1] - S[x0, y1 + 1] - S[x1 + 1, y0] + S[x0, y0]
        bad = hits > 0
        if bad.any():
            drop_x = np.abs(dx[bad]) < np.abs(dy[bad])
            bl, bm = li[bad], mi[bad]
            vel[bl[drop_x], bm[drop_x], 0] = 0.0
            vel[bl[~drop_x], bm[~drop_x], 1] = 0.0

    vel[grid.mask] = 0.0
    changed = int(np.any(vel != u.u, axis=-1).sum())
    return CellVelocityField(grid, vel), changed


# -- overlap stencil -------------------------------------------------------


@dataclass(frozen=True)
class OverlapStencil:
    """Areas shared between a translated source cell and its 3 x 3 neighbours.

    ``weights[di + 1, dj + 1]`` is the area deposited in the cell at index
    offset ``(di, dj)`` from the source ``(l, m)``.
    """

    weights: np.ndarray
    source: tuple[int, int] | None = None


def _axis_lengths(d: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lengths landing at offsets (-1, 0, +1) for displacements ``d``."""
    a = np.minimum(np.abs(d), h)
    return np.where(d < 0, a, 0.0), h - a, np.where(d > 0, a, 0.0)


def overlap_stencil(u_lm, dt: float, h: float, source=None) -> OverlapStencil:
    u_lm = np.asarray(u_lm, dtype=float)
    disp = u_lm * dt
    if np.abs(disp).max() > h * (1 + _CFL_RTOL):
        raise CflViolation(
            f"displacement {tuple(disp)} exceeds cell size {h}", float(np.abs(u_lm).max()), dt, h
        )
    ax = np.array(_axis_lengths(disp[0], h))
    ay = np.array(_axis_lengths(disp[1], h))
    return OverlapStencil(np.outer(ax, ay), source)


# -- step ------------------------------------------------------------------


@dataclass(frozen=True)
class StepReport:
    dt: float
    cfl_margin: float
    mass_before: float
    mass_after: float
    clamped_cells: int = 0


def step(field: DensityField, u: CellVelocityField, dt: float) -> tuple[DensityField, StepReport]:
    """Advance the density by one exact-overlap step.

    ``u`` must already be clamped (see :func:`clamp_boundary`).

    Raises
    ------
    CflViolation
        If ``dt * max|u|_inf > h``.
    SupportEscape
        If any mass would land outside the domain or on an obstacle.
    """
    grid = field.grid
    if u.grid is not grid and u.grid != grid:
        raise ValueError("density and velocity live on different grids")
    verdict = check_cfl(u, dt)
    if not verdict.ok:
        raise CflViolation(
            f"CFL violated: dt * max speed = {dt * verdict.max_speed:.6g} > h = {grid.h:.6g}",
            verdict.max_speed, dt, grid.h,
        )
    h = grid.h
    M = grid.M
    disp = u.u * dt
    fx = [w / h for w in _axis_lengths(disp[..., 0], h)]
    fy = [w / h for w in _axis_lengths(disp[..., 1], h)]
    rho = field.rho
    out = np.zeros((M + 2, M + 2))
    for a in range(3):
        part = rho * fx[a]
        for b in range(3):
            out[a:a + M, b:b + M] += part * fy[b]
    inner = out[1:-1, 1:-1]
    spill = np.any(out[[0, -1], :] != 0) or np.any(out[:, [0, -1]] != 0)
    if spill or np.any(inner[grid.mask] != 0):
        raise SupportEscape("translated cells leave the walkable region; clamp velocities first")
    new = DensityField(grid, inner)
    report = StepReport(dt, verdict.margin, mass(field), mass(new))
    return new, report


# -- time loop -------------------------------------------------------------


@dataclass(frozen=True)
class DiagnosticsRecord:
    """State after one completed step."""

    step: int
    t: float
    dt: float
    mass: float
    min_density: float
    max_density: float
    cfl_margin: float
    clamped_cells: int
    mass_drift: float
    loc_error: float | None = None


@dataclass
class RunResult:
    """Snapshots ``(step, t, field)`` including the initial state, plus per-step records."""

    snapshots: list[tuple[int, float, DensityField]] = field(default_factory=list)
    records: list[DiagnosticsRecord] = field(default_factory=list)

    @property
    def fields(self) -> list[DensityField]:
        return [f for _, _, f in self.snapshots]

    @property
    def final(self) -> DensityField:
        return self.snapshots[-1][2]

    @property
    def dts(self) -> list[float]:
        return [r.dt for r in self.records]


def admissible_velocity(
    u_raw: CellVelocityField, dt: float, adaptive: bool
) -> tuple[CellVelocityField, float, int, CflVerdict]:
    """Clamp and CFL-check ``u_raw``; in adaptive mode halve ``dt`` until it passes."""
    for _ in range(MAX_HALVINGS + 1):
        u, clamped = clamp_boundary(u_raw, dt)
        verdict = check_cfl(u, dt)
        if verdict.ok:
            return u, dt, clamped, verdict
        if not adaptive:
            break
        dt = dt / 2
    raise CflViolation(
        f"CFL violated: dt * max speed = {dt * verdict.max_speed:.6g} > h = {u.grid.h:.6g}",
        verdict.max_speed, dt, u.grid.h,
    )


def evolve(
    field0: DensityField,
    velocity: Callable[[DensityField], CellVelocityField],
    dt: float,
    steps: int,
    *,
    adaptive: bool = False,
    stride: int = 1,
    oracle: Callable[[int, float], np.ndarray] | None = None,
) -> RunResult:
    """Iterate clamp / CFL check / step with a density-dependent velocity.

    ``oracle(step, t)`` may return reference cell measures; the maximum
    cellwise discrepancy is then stored in each record.
    """
    if steps < 0 or stride < 1:
        raise ValueError("need steps >= 0 and stride >= 1")
    result = RunResult()
    cur, t = field0, 0.0
    m0 = mass(field0)
    result.snapshots.append((0, t, cur))
    for n in range(1, steps + 1):
        u, dt_eff, clamped, verdict = admissible_velocity(velocity(cur), dt, adaptive)
        cur, rep = step(cur, u, dt_eff)
        t += dt_eff
        loc = None
        if oracle is not None:
            loc = float(np.abs(oracle(n, t) - cur.cell_measures()).max())
        m = rep.mass_after
        result.records.append(
            DiagnosticsRecord(
                step=n, t=t, dt=dt_eff, mass=m,
                min_density=float(cur.rho.min()), max_density=float(cur.rho.max()),
                cfl_margin=verdict.margin, clamped_cells=clamped,
                mass_drift=abs(m - m0) / m0 if m0 > 0 else abs(m - m0),
                loc_error=loc,
            )
        )
        if n % stride == 0 or n == steps:
            result.snapshots.append((n, t, cur))
    return result


def run(scenario: Scenario, *, stride: int | None = None, adaptive: bool | None = None, oracle=None) -> RunResult:
    """Simulate a scenario; keyword arguments override its snapshot stride and dt policy."""
    grid = scenario.make_grid()
    field0 = scenario.initial_field(grid)
    model = scenario.velocity_model(grid)
    return evolve(
        field0, model, scenario.dt, scenario.steps,
        adaptive=scenario.adaptive if adaptive is None else adaptive,
        stride=scenario.stride if stride is None else stride,
        oracle=oracle,
    )
