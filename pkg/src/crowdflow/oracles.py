"""Reference solutions that do not go through the overlap scheme.

``exact_translation``
    Closed-form transport of a piecewise-constant density by a constant
    velocity.
``fine_pushforward``
    Push-forward of an arbitrary point map by subcell quadrature: every
    cell is split into ``k x k`` pieces that follow the map.
``particle_run``
    A Lagrangian cloud driven by the same velocity law as the grid scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np

from .errors import GridError, SupportEscape
from .grid import DensityField, Grid, mass
from .pushforward import admissible_velocity

if TYPE_CHECKING:
    from .scenario import Scenario

# Images may land a rounding error outside [0, 1] when a map sends the
# boundary onto itself.
_EDGE_TOL = 1e-12


def _subcell_centres(grid: Grid, k: int, rows=None) -> np.ndarray:
    """Centres of the ``k x k`` subcells of the cells in ``rows`` (all by default)."""
    h = grid.h
    rows = np.arange(grid.M) if rows is None else np.atleast_1d(rows)
    s = (np.arange(k) + 0.5) / k
    cols = np.arange(grid.M)
    px = (rows[:, None, None, None] + s[None, None, :, None]) * h
    py = (cols[None, :, None, None] + s[None, None, None, :]) * h
    px, py = np.broadcast_arrays(px, py)
    return np.stack([px, py], axis=-1)


def _overlap_lengths(M_in: int, M_out: int, shift: float) -> np.ndarray:
    """``L[I, l] = |out cell I  cap  (in cell l + shift)|`` along one axis."""
    a = np.arange(M_in) / M_in + shift
    b = np.arange(1, M_in + 1) / M_in + shift
    lo = np.arange(M_out) / M_out
    hi = np.arange(1, M_out + 1) / M_out
    return np.clip(np.minimum(hi[:, None], b[None, :]) - np.maximum(lo[:, None], a[None, :]), 0.0, None)


def exact_translation(field0: DensityField, a, t: float, out_grid: Grid | None = None) -> DensityField:
    """Density ``rho0(x - a t)`` averaged onto ``out_grid`` cells.

    ``field0`` is read as the piecewise-constant function it represents, so
    the cell averages are computed exactly from the 1D overlaps of the
    shifted cells with the output cells.

    Raises
    ------
    SupportEscape
        If the translated support of ``field0`` is not inside the unit square.
    """
    out_grid = out_grid or field0.grid
    if field0.grid.mask.any() or out_grid.mask.any():
        raise GridError("exact translation is defined on obstacle-free grids only")
    shift = np.asarray(a, dtype=float) * t
    nz = np.argwhere(field0.rho > 0)
    if len(nz):
        h0 = field0.grid.h
        lo = nz.min(axis=0) * h0 + shift
        hi = (nz.max(axis=0) + 1) * h0 + shift
        if np.any(lo < -_EDGE_TOL) or np.any(hi > 1 + _EDGE_TOL):
            raise SupportEscape(f"support shifted by {tuple(shift)} leaves the unit square")
    Lx = _overlap_lengths(field0.grid.M, out_grid.M, shift[0])
    Ly = _overlap_lengths(field0.grid.M, out_grid.M, shift[1])
    measures = Lx @ field0.rho @ Ly.T
    return DensityField(out_grid, measures / out_grid.h ** 2)


def _split_interval(lo: np.ndarray, s: float, h: float, M: int):
    """Split intervals ``[lo, lo + s]`` (``s <= h``) across grid lines.

    Returns the first cell index and the fraction of each interval lying in
    it; the remainder falls in the next cell.
    """
    lo = np.clip(lo, 0.0, 1.0 - s)
    idx = np.minimum(np.floor(lo / h).astype(np.int64), M - 1)
    first = np.clip(((idx + 1) * h - lo) / s, 0.0, 1.0)
    return idx, first


def fine_pushforward(
    field: DensityField,
    motion: Callable[[np.ndarray], np.ndarray],
    k: int = 64,
    out_grid: Grid | None = None,
    deposit: str = "overlap",
) -> np.ndarray:
    """Cell measures of the push-forward of ``field`` by the point map ``motion``.

    Every cell is split into ``k x k`` subcells and ``motion`` (a map from
    points ``(..., 2)`` to images) is evaluated at the subcell centres.

    ``deposit='center'`` drops each subcell's mass ``rho h^2 / k^2`` in the
    cell of ``out_grid`` holding the image of its centre.  Its error is of
    order ``mass / k`` whatever the grid size, which swamps first-order
    scheme errors once ``h`` is small.  ``deposit='overlap'`` (default)
    instead translates each subcell square with its centre and splits the
    mass by area over the cells it covers; squares poking through a wall
    are slid back inside.  Either way the total mass is conserved up to
    summation order.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if deposit not in ("overlap", "center"):
        raise ValueError(f"deposit must be 'overlap' or 'center', got {deposit!r}")
    grid = field.grid
    out_grid = out_grid or grid
    Mo, ho = out_grid.M, out_grid.h
    s = grid.h / k
    if s > ho:
        raise ValueError("subcells must not be larger than the output cells")
    acc = np.zeros(Mo * Mo)
    sub_mass = field.rho * grid.h ** 2 / (k * k)
    for i in range(grid.M):
        row = sub_mass[i]
        if not np.any(row):
            continue
        pts = _subcell_centres(grid, k, rows=i).reshape(-1, 2)
        w = np.broadcast_to(row[:, None, None], (grid.M, k, k)).reshape(-1)
        keep = w > 0
        w = w[keep]
        img = np.asarray(motion(pts[keep]), dtype=float)
        if np.any(img < -_EDGE_TOL) or np.any(img > 1 + _EDGE_TOL):
            raise SupportEscape("motion maps part of the support outside the unit square")
        if deposit == "center":
            ci, cj = out_grid.cell_of(img)
            acc += np.bincount(ci * Mo + cj, weights=w, minlength=Mo * Mo)
            continue
        ix, fx = _split_interval(img[:, 0] - s / 2, s, ho, Mo)
        iy, fy = _split_interval(img[:, 1] - s / 2, s, ho, Mo)
        for dx, wx in ((0, fx), (1, 1.0 - fx)):
            for dy, wy in ((0, fy), (1, 1.0 - fy)):
                part = w * wx * wy
                nz = part > 0
                acc += np.bincount(
                    (ix[nz] + dx) * Mo + iy[nz] + dy, weights=part[nz], minlength=Mo * Mo
                )
    return acc.reshape(Mo, Mo)


# -- particles -------------------------------------------------------------


@dataclass(frozen=True)
class ParticleCloud:
    positions: np.ndarray
    weight: float

    def __post_init__(self):
        if len(self.positions) < 1:
            raise ValueError("a particle cloud needs at least one particle")

    @property
    def total_mass(self) -> float:
        return self.weight * len(self.positions)


def bin_particles(cloud: ParticleCloud, grid: Grid) -> DensityField:
    ci, cj = grid.cell_of(cloud.positions)
    m = np.bincount(ci * grid.M + cj, weights=np.full(len(ci), cloud.weight), minlength=grid.M ** 2)
    m = m.reshape(grid.shape)
    if np.any(m[grid.mask] > 0):
        raise SupportEscape("particles found inside an obstacle")
    return DensityField(grid, m / grid.h ** 2)


def sample_particles(field: DensityField, N: int, seed: int) -> ParticleCloud:
    """Stratified sample of exactly ``N`` points.

    Each cell receives ``N * cell_mass / total`` points rounded by largest
    remainder.  Inside a cell with ``n`` points they occupy ``n`` randomly
    chosen strata of a ``ceil(sqrt(n))``-square sub-lattice, jittered
    uniformly within each stratum.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    grid = field.grid
    cm = field.cell_measures().ravel()
    total = cm.sum()
    if total <= 0:
        raise ValueError("cannot sample particles from an empty density")
    target = N * cm / total
    counts = np.floor(target).astype(np.int64)
    short = int(N - counts.sum())
    if short > 0:
        # largest remainders first; stable order keeps this deterministic
        order = np.argsort(-(target - counts), kind="stable")[:short]
        counts[order] += 1
    rng = np.random.default_rng(seed)
    pos = np.empty((N, 2))
    start = 0
    for cell in np.flatnonzero(counts):
        n = int(counts[cell])
        ci, cj = divmod(int(cell), grid.M)
        # jittered sub-lattice: n of the q x q strata, one point in each
        q = int(np.ceil(np.sqrt(n)))
        strata = rng.choice(q * q, size=n, replace=False)
        sx, sy = np.divmod(strata, q)
        u = (np.stack([sx, sy], axis=-1) + rng.random((n, 2))) / q
        pos[start:start + n] = (np.array([ci, cj]) + u) * grid.h
        start += n
    return ParticleCloud(pos, total / N)


@dataclass
class ParticleRun:
    steps: list[int] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    clouds: list[ParticleCloud] = field(default_factory=list)
    fields: list[DensityField] = field(default_factory=list)

    def record(self, n: int, t: float, cloud: ParticleCloud, binned: DensityField) -> None:
        self.steps.append(n)
        self.times.append(t)
        self.clouds.append(cloud)
        self.fields.append(binned)


def particle_run(scenario: Scenario, N: int, seed: int | None = None, *, steps: int | None = None) -> ParticleRun:
    """Move a particle cloud with the scenario's velocity law.

    At every step the cloud is binned to the scenario grid, the cellwise
    velocity is built from that density, clamped and CFL-checked exactly as
    in the grid scheme, and each particle moves with the velocity of its
    cell.  Snapshots follow the scenario stride.
    """
    seed = scenario.seed if seed is None else seed
    steps = scenario.steps if steps is None else steps
    grid = scenario.make_grid()
    model = scenario.velocity_model(grid)
    cloud = sample_particles(scenario.initial_field(grid), N, seed)
    out = ParticleRun()
    t = 0.0
    binned = bin_particles(cloud, grid)
    out.record(0, t, cloud, binned)
    for n in range(1, steps + 1):
        u, dt, _, _ = admissible_velocity(model(binned), scenario.dt, scenario.adaptive)
        ci, cj = grid.cell_of(cloud.positions)
        pos = cloud.positions + u.u[ci, cj] * dt
        cloud = ParticleCloud(pos, cloud.weight)
        binned = bin_particles(cloud, grid)
        t += dt
        if n % scenario.stride == 0 or n == steps:
            out.record(n, t, cloud, binned)
    return out


def particle_mass(run: ParticleRun) -> list[float]:
    return [mass(f) for f in run.fields]
