"""Per-step pedestrian velocity: desired velocity plus nonlocal interaction.

The total velocity at a point ``x`` is ``v(x) = v_d(x) + nu[rho](x)`` where
``v_d`` depends only on geometry and target, and ``nu`` looks at the crowd
inside the interaction neighbourhood ``B_R(x)``.  Two interaction laws are
provided:

``com_repulsion``
    ``beta * (x - x*)`` with ``x*`` the centre of mass of the crowd in
    ``B_R(x)``.
``low_crowding``
    ``beta * integral over B_R(x) of (y - x) * omega(rho(y)) dy`` with
    ``omega(s) = exp(-s / s_bar)``, a drift toward thinly populated areas.

Neighbourhood integrals are midpoint sums over cell centres, boundary
inclusive, restricted to walkable cells.  Two evaluation routes exist: the
pointwise functions (``interaction_com``, ``interaction_lowcrowd``) sum
over all cells for an arbitrary point, while ``total_velocity`` evaluates
every cell centre at once by correlating with a fixed offset stencil.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import NoVisibleTarget, ValidationError
from .grid import CellVelocityField, DensityField, Grid

DESIRED_MODES = ("direct", "waypoint", "potential", "constant")
INTERACTION_KINDS = ("com_repulsion", "low_crowding", "none")
NORMS = ("euclidean", "infinity")

# Relative slack on ``|y - x| <= R`` so that the pointwise and the stencil
# routes agree on cells whose centre sits exactly on the sphere.
_BALL_TOL = 1e-12


@dataclass(frozen=True)
class DesiredVelocitySpec:
    """Parameters of the desired velocity.

    ``mode='constant'`` ignores the target and returns ``velocity`` everywhere;
    it exists for pure-translation test scenarios.
    """

    mode: str = "direct"
    target: tuple[float, float] = (1.0, 0.5)
    alpha: float = 1.0
    waypoints: tuple[tuple[float, float], ...] = ()
    target_edge: tuple[tuple[float, float], tuple[float, float]] | None = None
    normalize_gradient: bool = False
    velocity: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.mode not in DESIRED_MODES:
            raise ValidationError(f"desired mode must be one of {DESIRED_MODES}, got {self.mode!r}")
        if not self.alpha >= 0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")
        x0 = np.asarray(self.target, dtype=float)
        if x0.shape != (2,) or np.any(x0 < 0) or np.any(x0 > 1):
            raise ValidationError(f"target {self.target} must lie in the closed unit square")
        if self.mode == "waypoint" and not self.waypoints:
            raise ValidationError("waypoint mode needs at least one waypoint")
        if self.mode == "potential" and self.target_edge is None:
            raise ValidationError("potential mode needs a target_edge")

    def check_against(self, grid: Grid) -> None:
        """Reject a target or waypoint that sits inside an obstacle."""
        pts = [self.target] if self.mode in ("direct", "waypoint") else []
        if self.mode == "waypoint":
            pts += list(self.waypoints)
        for p in pts:
            if _inside_any_obstacle(np.asarray(p, dtype=float), grid):
                raise ValidationError(f"point {tuple(p)} lies inside an obstacle")


@dataclass(frozen=True)
class InteractionSpec:
    kind: str = "none"
    beta: float = 0.0
    R: float = 0.1
    norm: str = "euclidean"
    omega_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in INTERACTION_KINDS:
            raise ValidationError(f"interaction kind must be one of {INTERACTION_KINDS}, got {self.kind!r}")
        if self.norm not in NORMS:
            raise ValidationError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if not self.beta >= 0:
            raise ValidationError(f"beta must be >= 0, got {self.beta}")
        if not 0 < self.R < 1:
            raise ValidationError(f"interaction radius must satisfy 0 < R < 1, got {self.R}")
        if not self.omega_scale > 0:
            raise ValidationError(f"omega_scale must be > 0, got {self.omega_scale}")


def omega(s, scale: float = 1.0):
    """Crowding weight ``exp(-s / scale)``: 1 at zero density, nonincreasing."""
    return np.exp(-np.asarray(s, dtype=float) / scale)


# -- desired velocity ------------------------------------------------------


def desired_direct(x, spec: DesiredVelocitySpec) -> np.ndarray:
    """``alpha * (x0 - x)``."""
    x = np.asarray(x, dtype=float)
    return spec.alpha * (np.asarray(spec.target, dtype=float) - x)


def _inside_any_obstacle(p: np.ndarray, grid: Grid) -> bool:
    for xmin, ymin, xmax, ymax in grid.obstacle_rects():
        if xmin < p[0] < xmax and ymin < p[1] < ymax:
            return True
    return False


def segment_blocked(a: np.ndarray, b: np.ndarray, rects) -> np.ndarray:
    """Whether segments ``a -> b`` cross the open interior of any rectangle.

    ``a`` has shape ``(n, 2)``; ``b`` is ``(2,)`` or ``(n, 2)``.  Touching a
    rectangle's edge or corner does not block.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.broadcast_to(np.asarray(b, dtype=float), a.shape)
    d = b - a
    blocked = np.zeros(len(a), dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for xmin, ymin, xmax, ymax in rects:
            t_in = np.zeros(len(a))
            t_out = np.ones(len(a))
            ok = np.ones(len(a), dtype=bool)
            for k, (lo, hi) in enumerate(((xmin, xmax), (ymin, ymax))):
                p, q = a[:, k], d[:, k]
                par = q == 0
                ok &= ~par | ((lo < p) & (p < hi))
                t1 = (lo - p) / q
                t2 = (hi - p) / q
                t_lo = np.where(par, -np.inf, np.minimum(t1, t2))
                t_hi = np.where(par, np.inf, np.maximum(t1, t2))
                t_in = np.maximum(t_in, t_lo)
                t_out = np.minimum(t_out, t_hi)
            blocked |= ok & (t_in < t_out)
    return blocked


def _waypoint_directions(points: np.ndarray, spec: DesiredVelocitySpec, grid: Grid) -> np.ndarray:
    rects = grid.obstacle_rects()
    aim = np.full(points.shape, np.nan)
    pending = np.ones(len(points), dtype=bool)
    for goal in (spec.target, *spec.waypoints):
        if not pending.any():
            break
        goal = np.asarray(goal, dtype=float)
        visible = pending.copy()
        visible[pending] = ~segment_blocked(points[pending], goal, rects)
        aim[visible] = goal
        pending &= ~visible
    if pending.any():
        p = points[np.argmax(pending)]
        raise NoVisibleTarget(f"no target or waypoint visible from ({p[0]:.6g}, {p[1]:.6g})")
    return spec.alpha * (aim - points)


def desired_waypoint(x, spec: DesiredVelocitySpec, grid: Grid) -> np.ndarray:
    """Head for the target if it is in sight, else for the first visible waypoint."""
    x = np.asarray(x, dtype=float)
    return _waypoint_directions(x.reshape(1, 2), spec, grid)[0]


def desired_field(grid: Grid, spec: DesiredVelocitySpec, potential=None) -> CellVelocityField:
    """Desired velocity sampled at every walkable cell centre.

    ``potential`` is a solved :class:`~crowdflow.potential.PotentialField`;
    it is computed on demand when ``spec.mode == 'potential'`` and omitted.
    """
    X, Y = grid.centers()
    walk = grid.walkable
    u = np.zeros(grid.shape + (2,))
    if spec.mode == "constant":
        u[walk] = np.asarray(spec.velocity, dtype=float)
    elif spec.mode == "direct":
        x0 = np.asarray(spec.target, dtype=float)
        u[..., 0] = spec.alpha * (x0[0] - X)
        u[..., 1] = spec.alpha * (x0[1] - Y)
    elif spec.mode == "waypoint":
        pts = np.stack([X[walk], Y[walk]], axis=-1)
        u[walk] = _waypoint_directions(pts, spec, grid)
    else:
        from .potential import desired_from_potential, solve_potential

        if potential is None:
            potential = solve_potential(grid, spec)
        return desired_from_potential(potential, spec)
    return CellVelocityField(grid, u)


# -- interaction velocity --------------------------------------------------


def _in_ball(offsets: np.ndarray, R: float, norm: str) -> np.ndarray:
    if norm == "euclidean":
        dist = np.hypot(offsets[..., 0], offsets[..., 1])
    else:
        dist = np.abs(offsets).max(axis=-1)
    return dist <= R * (1 + _BALL_TOL)


def _neighbourhood(field: DensityField, x: np.ndarray, spec: InteractionSpec):
    grid = field.grid
    X, Y = grid.centers()
    offs = np.stack([X - x[0], Y - x[1]], axis=-1)
    sel = _in_ball(offs, spec.R, spec.norm) & grid.walkable
    return offs[sel], field.rho[sel]


def interaction_com(field: DensityField, x, spec: InteractionSpec) -> np.ndarray:
    """Repulsion from the neighbourhood centre of mass, ``beta * (x - x*)``.

    Returns zero when the neighbourhood carries no mass.
    """
    x = np.asarray(x, dtype=float)
    offs, rho = _neighbourhood(field, x, spec)
    m = rho.sum()
    if m <= 0:
        return np.zeros(2)
    # x - x* = -sum((c - x) rho) / sum(rho); the h^2 factors cancel
    return -spec.beta * (offs * rho[:, None]).sum(axis=0) / m


def interaction_lowcrowd(field: DensityField, x, spec: InteractionSpec) -> np.ndarray:
    """Drift toward low density, ``beta h^2 sum (c - x) omega(rho_c)`` over ``B_R(x)``."""
    x = np.asarray(x, dtype=float)
    offs, rho = _neighbourhood(field, x, spec)
    w = omega(rho, spec.omega_scale)
    return spec.beta * field.grid.h ** 2 * (offs * w[:, None]).sum(axis=0)


def interaction_at(field: DensityField, x, spec: InteractionSpec) -> np.ndarray:
    if spec.kind == "com_repulsion":
        return interaction_com(field, x, spec)
    if spec.kind == "low_crowding":
        return interaction_lowcrowd(field, x, spec)
    return np.zeros(2)


def offset_stencils(h: float, spec: InteractionSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stencils ``(K0, Kx, Ky)`` over lattice offsets inside the ball.

    ``K0`` is the ball indicator; ``Kx``/``Ky`` carry the offset components
    in domain units.  Axis 0 is the horizontal offset.
    """
    r = int(np.floor(spec.R / h * (1 + _BALL_TOL)))
    a = np.arange(-r, r + 1) * h
    A, B = np.meshgrid(a, a, indexing="ij")
    K0 = _in_ball(np.stack([A, B], axis=-1), spec.R, spec.norm).astype(float)
    return K0, A * K0, B * K0


def interaction_field(field: DensityField, spec: InteractionSpec) -> np.ndarray:
    """Interaction velocity at every cell centre, shape ``(M, M, 2)``."""
    grid = field.grid
    nu = np.zeros(grid.shape + (2,))
    if spec.kind == "none" or spec.beta == 0:
        return nu
    K0, Kx, Ky = offset_stencils(grid.h, spec)
    walk = grid.walkable
    if spec.kind == "low_crowding":
        w = np.where(walk, omega(field.rho, spec.omega_scale), 0.0)
        scale = spec.beta * grid.h ** 2
        nu[..., 0] = scale * ndimage.correlate(w, Kx, mode="constant", cval=0.0)
        nu[..., 1] = scale * ndimage.correlate(w, Ky, mode="constant", cval=0.0)
    else:
        rho = field.rho
        m = ndimage.correlate(rho, K0, mode="constant", cval=0.0)
        sx = ndimage.correlate(rho, Kx, mode="constant", cval=0.0)
        sy = ndimage.correlate(rho, Ky, mode="constant", cval=0.0)
        has_mass = m > 0
        safe = np.where(has_mass, m, 1.0)
        nu[..., 0] = np.where(has_mass, -spec.beta * sx / safe, 0.0)
        nu[..., 1] = np.where(has_mass, -spec.beta * sy / safe, 0.0)
    nu[grid.mask] = 0.0
    return nu


def total_velocity(
    field: DensityField,
    desired_spec: DesiredVelocitySpec,
    interaction_spec: InteractionSpec,
    *,
    desired: CellVelocityField | None = None,
) -> CellVelocityField:
    """Cellwise ``u_ij = v_d(x_ij) + nu[rho](x_ij)``; zero on obstacle cells.

    Pass a precomputed ``desired`` field to skip recomputing the
    density-independent part.
    """
    grid = field.grid
    if desired is None:
        desired = desired_field(grid, desired_spec)
    return CellVelocityField(grid, desired.u + interaction_field(field, interaction_spec))


@dataclass(frozen=True)
class VelocityModel:
    """Desired and interaction specs bundled with the cached desired field."""

    grid: Grid
    desired_spec: DesiredVelocitySpec
    interaction_spec: InteractionSpec
    desired: CellVelocityField = field(default=None, repr=False)

    def __post_init__(self):
        if self.desired is None:
            object.__setattr__(self, "desired", desired_field(self.grid, self.desired_spec))

    def __call__(self, density: DensityField) -> CellVelocityField:
        return total_velocity(density, self.desired_spec, self.interaction_spec, desired=self.desired)
