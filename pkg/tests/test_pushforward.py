from __future__ import annotations

import numpy as np
import pytest

from crowdflow import (
    CellVelocityField,
    CflViolation,
    DensityField,
    DesiredVelocitySpec,
    InteractionSpec,
    Scenario,
    SupportEscape,
    check_cfl,
    clamp_boundary,
    load_bundled,
    make_grid,
    mass,
    overlap_stencil,
    run,
    step,
)
from crowdflow.oracles import exact_translation


def _const(grid, v):
    return CellVelocityField(grid, np.broadcast_to(np.asarray(v, float), grid.shape + (2,)).copy())


class TestCfl:
    def test_examples(self):
        g = make_grid(100)
        u = _const(g, (1.0, -0.5))
        assert check_cfl(u, 0.005).ok
        assert not check_cfl(u, 0.02).ok

    def test_equality_passes(self):
        g = make_grid(8)
        assert check_cfl(_const(g, (1.0, 0.0)), g.h).ok

    def test_margin(self):
        g = make_grid(10)
        v = check_cfl(_const(g, (0.5, 0.2)), 0.1)
        assert v.margin == pytest.approx(0.05)

    def test_infinity_norm(self):
        # |u|_2 dt > h but each component is within the cell
        g = make_grid(10)
        assert check_cfl(_const(g, (1.0, 1.0)), 0.1).ok


class TestStencil:
    def test_zero_velocity(self):
        w = overlap_stencil((0, 0), 0.1, 0.1).weights
        assert w[1, 1] == 0.1 * 0.1
        assert np.count_nonzero(w) == 1

    def test_figure_five_corner(self):
        w = overlap_stencil((-0.5, -0.5), 0.1, 0.1).weights
        assert abs(w[0, 0] - 0.0025) <= 1e-15
        assert abs(w.sum() - 0.01) <= 1e-15 * 0.01
        assert np.count_nonzero(w) == 4

    def test_full_shift(self):
        h, dt = 0.1, 0.1
        w = overlap_stencil((h / dt, 0.0), dt, h).weights
        expected = np.zeros((3, 3))
        expected[2, 1] = h * h
        np.testing.assert_allclose(w, expected, atol=1e-18)

    def test_sign_convention(self):
        w = overlap_stencil((0.3, -0.2), 0.1, 0.1).weights
        assert w[2, 0] > 0 and w[0, 2] == 0

    def test_cfl_violation(self):
        with pytest.raises(CflViolation):
            overlap_stencil((2.0, 0.0), 0.1, 0.1)


class TestClamp:
    def test_interior_unchanged(self):
        g = make_grid(10)
        u = _const(g, (0.5, 0.5))
        c, n = clamp_boundary(u, 0.1)
        assert np.array_equal(c.u[2:8, 2:8], u.u[2:8, 2:8])

    def test_wall_normal_component_zeroed(self):
        g = make_grid(10)
        c, n = clamp_boundary(_const(g, (0.7, 0.3)), 0.1)
        assert np.all(c.u[-1, :, 0] == 0)
        assert np.all(c.u[-1, :-1, 1] == 0.3)
        assert n > 0

    def test_gap_to_obstacle(self):
        g = make_grid(10, [(0.5, 0.0, 0.6, 1.0)])
        u = np.zeros(g.shape + (2,))
        u[3, 4] = (1.5, 0.0)
        c, n = clamp_boundary(CellVelocityField(g, u), 0.1)
        # cell 3 (x in [0.3, 0.4]) is one free cell away from the obstacle at 0.5
        assert c.u[3, 4, 0] * 0.1 == pytest.approx(0.1)
        assert n == 1

    def test_never_flips_sign(self):
        rng = np.random.default_rng(0)
        g = make_grid(12, [(0.25, 0.25, 0.5, 0.5), (0.75, 0.0, 0.8333333333, 0.5)])
        u = CellVelocityField(g, rng.uniform(-2, 2, g.shape + (2,)))
        c, _ = clamp_boundary(u, 0.05)
        assert np.all(c.u * u.u >= 0)
        assert np.all(np.abs(c.u) <= np.abs(u.u))

    def test_diagonal_corner(self):
        # moving diagonally toward an obstacle corner would clip it
        g = make_grid(4, [(0.5, 0.5, 0.75, 0.75)])
        u = np.zeros(g.shape + (2,))
        u[1, 1] = (2.0, 1.0)
        c, _ = clamp_boundary(CellVelocityField(g, u), 0.1)
        assert c.u[1, 1, 1] == 0 and c.u[1, 1, 0] == 2.0


class TestStep:
    def test_zero_velocity_identity(self):
        rng = np.random.default_rng(1)
        g = make_grid(9)
        f = DensityField(g, rng.random(g.shape))
        new, rep = step(f, CellVelocityField.zeros(g), 0.1)
        assert np.array_equal(new.rho, f.rho)

    def test_aligned_shift(self):
        g = make_grid(10)
        rho = np.zeros(g.shape)
        rho[2:5, 3:6] = np.arange(9.0).reshape(3, 3) + 1
        f = DensityField(g, rho)
        new, rep = step(f, _const(g, (1.0, 0.0)), g.h)
        np.testing.assert_array_equal(new.rho[3:6, 3:6], rho[2:5, 3:6])
        assert rep.mass_after == pytest.approx(rep.mass_before, rel=1e-15)

    def test_half_split(self):
        g = make_grid(10)
        rho = np.zeros(g.shape)
        rho[4, 4] = 1.0
        dt = 0.1
        new, _ = step(DensityField(g, rho), _const(g, (g.h / (2 * dt), 0.0)), dt)
        assert new.rho[4, 4] == pytest.approx(0.5, abs=1e-15)
        assert new.rho[5, 4] == pytest.approx(0.5, abs=1e-15)

    def test_unclamped_escape(self):
        g = make_grid(6)
        f = DensityField(g, np.ones(g.shape))
        with pytest.raises(SupportEscape):
            step(f, _const(g, (1.0, 0.0)), 0.1)

    def test_cfl_enforced(self):
        g = make_grid(6)
        with pytest.raises(CflViolation):
            step(DensityField.zeros(g), _const(g, (1.0, 0.0)), 1.0)

    def test_matches_exact_translation(self):
        g = make_grid(16)
        rho = np.zeros(g.shape)
        rho[3:7, 5:9] = 2.0
        f = DensityField(g, rho)
        a, dt = np.array([0.5, 0.25]), 0.125  # a dt = (h, h/2)
        new, _ = step(f, _const(g, a), dt)
        ref = exact_translation(f, a, dt)
        np.testing.assert_allclose(new.rho, ref.rho, atol=1e-12)


class TestRun:
    def _scenario(self, **kw):
        base = dict(
            M=16,
            desired=DesiredVelocitySpec(alpha=0.0),
            interaction=InteractionSpec(kind="none"),
            steps=10,
        )
        base.update(kw)
        return Scenario(**base)

    def test_zero_steps(self):
        r = run(self._scenario(steps=0))
        assert len(r.snapshots) == 1 and not r.records

    def test_static(self):
        r = run(self._scenario())
        f0 = r.snapshots[0][2]
        assert len(r.snapshots) == 11
        assert all(np.array_equal(f.rho, f0.rho) for f in r.fields)

    def test_corridor_conserves(self):
        r = run(load_bundled("corridor").replace(steps=200))
        m0 = mass(r.snapshots[0][2])
        assert all(abs(rec.mass - m0) <= 1e-12 * m0 for rec in r.records)

    def test_fixed_dt_cfl_error(self):
        sc = self._scenario(desired=DesiredVelocitySpec(mode="constant", velocity=(5.0, 0.0)), dt=0.1)
        with pytest.raises(CflViolation):
            run(sc)

    def test_adaptive_halves(self):
        sc = self._scenario(desired=DesiredVelocitySpec(mode="constant", velocity=(5.0, 0.0)), dt=0.1,
                            adaptive=True, steps=3)
        r = run(sc)
        h = 1 / 16
        for dt in r.dts:
            assert dt * 5.0 <= h
            assert dt * 2 * 5.0 > h
        assert r.records[-1].t == pytest.approx(sum(r.dts))

    def test_stride(self):
        r = run(self._scenario(steps=10, stride=4))
        assert [n for n, _, _ in r.snapshots] == [0, 4, 8, 10]

    def test_deterministic(self):
        sc = load_bundled("obstacle_waypoint").replace(steps=40)
        a, b = run(sc), run(sc)
        assert all(np.array_equal(x.rho, y.rho) for x, y in zip(a.fields, b.fields))

    def test_obstacles_never_loaded(self):
        r = run(load_bundled("obstacle_waypoint").replace(steps=150, stride=10))
        g = r.final.grid
        assert all(np.all(f.rho[g.mask] == 0) for f in r.fields)
