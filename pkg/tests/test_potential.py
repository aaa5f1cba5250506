from __future__ import annotations

import numpy as np
import pytest

from crowdflow import DesiredVelocitySpec, NonConvergence, ValidationError, make_grid, solve_potential
from crowdflow.potential import PotentialField, boundary_data, desired_from_potential, laplace_residual

RIGHT_EDGE = ((1.0, 0.0), (1.0, 1.0))


def _spec(edge=RIGHT_EDGE, **kw):
    return DesiredVelocitySpec(mode="potential", target_edge=edge, **kw)


def direct_solve(grid, edge):
    """Assemble and solve the five-point system densely."""
    M = grid.M
    g = boundary_data(grid, edge)
    free = grid.walkable
    idx = -np.ones((M, M), dtype=int)
    idx[free] = np.arange(free.sum())
    A = np.zeros((free.sum(), free.sum()))
    b = np.zeros(free.sum())
    for i in range(M):
        for j in range(M):
            if not free[i, j]:
                continue
            r = idx[i, j]
            A[r, r] = 4.0
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                k, l = i + di, j + dj
                if 0 <= k < M and 0 <= l < M:
                    if free[k, l]:
                        A[r, idx[k, l]] = -1.0
                else:
                    b[r] += g[k + 1, l + 1]
    u = np.zeros((M, M))
    u[free] = np.linalg.solve(A, b)
    return u


def test_maximum_principle_interior():
    pot = solve_potential(make_grid(16), _spec())
    assert np.all((pot.u > 0) & (pot.u < 1))
    assert pot.residual <= 1e-10


def test_matches_direct_solve_m3():
    g = make_grid(3)
    pot = solve_potential(g, _spec())
    exact = direct_solve(g, RIGHT_EDGE)
    np.testing.assert_allclose(pot.u, exact, atol=1e-10)
    # the centre value of the 3 x 3 problem is 1/4 by symmetry of the four sides
    assert exact[1, 1] == pytest.approx(0.25, abs=1e-14)


def test_matches_direct_solve_with_obstacle():
    g = make_grid(8, [(0.25, 0.25, 0.5, 0.75)])
    edge = ((1.0, 0.25), (1.0, 0.75))
    pot = solve_potential(g, _spec(edge))
    np.testing.assert_allclose(pot.u, direct_solve(g, edge), atol=1e-9)
    assert np.all(pot.u[g.mask] == 0)
    assert pot.u.min() >= 0 and pot.u.max() <= 1


@pytest.mark.parametrize("edge", [((1.0, 0.3), (1.0, 0.3)), ((0.5, 0.0), (0.5, 1.0))])
def test_bad_edge(edge):
    with pytest.raises(ValidationError):
        solve_potential(make_grid(8), _spec(edge))


def test_iteration_cap():
    with pytest.raises(NonConvergence):
        solve_potential(make_grid(16), _spec(), max_iter=3)


def test_residual_definition():
    g = make_grid(3)
    u = direct_solve(g, RIGHT_EDGE)
    assert laplace_residual(u, g, boundary_data(g, RIGHT_EDGE)) < 1e-14


class TestGradient:
    def test_constant(self):
        g = make_grid(6)
        pf = PotentialField(g, np.full(g.shape, 0.3), 0.0)
        assert np.all(desired_from_potential(pf, _spec()).u == 0)

    def test_linear_exact(self):
        g = make_grid(10)
        X, _ = g.centers()
        v = desired_from_potential(PotentialField(g, X.copy(), 0.0), _spec()).u
        np.testing.assert_allclose(v[1:-1, 1:-1], np.broadcast_to([1.0, 0.0], (8, 8, 2)), atol=1e-12)
        # one-sided differences at the walls are exact for linear data too
        np.testing.assert_allclose(v[0, 3], [1.0, 0.0], atol=1e-12)

    def test_normalised(self):
        g = make_grid(16, [(0.25, 0.25, 0.5, 0.5)])
        spec = _spec(alpha=1.0, normalize_gradient=True)
        v = desired_from_potential(solve_potential(g, spec), spec).u
        speed = np.hypot(v[..., 0], v[..., 1])
        nz = speed > 0
        np.testing.assert_allclose(speed[nz], 1.0, rtol=1e-14)
        assert np.all(speed[g.mask] == 0)

    def test_points_toward_exit(self):
        g = make_grid(16)
        spec = _spec(((1.0, 0.4), (1.0, 0.6)))
        v = desired_from_potential(solve_potential(g, spec), spec).u
        assert np.all(v[:, 7:9, 0] > 0)
