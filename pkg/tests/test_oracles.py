from __future__ import annotations

import numpy as np
import pytest

from crowdflow import (
    DensityField,
    DesiredVelocitySpec,
    InitialDensitySpec,
    InteractionSpec,
    Scenario,
    SupportEscape,
    exact_translation,
    fine_pushforward,
    load_bundled,
    make_grid,
    mass,
    particle_run,
)
from crowdflow.oracles import particle_mass, sample_particles


def _blob(M, lo, hi, value=1.0):
    g = make_grid(M)
    rho = np.zeros(g.shape)
    rho[lo:hi, lo:hi] = value
    return DensityField(g, rho)


class TestExactTranslation:
    def test_zero_shift(self):
        rng = np.random.default_rng(0)
        g = make_grid(8)
        f = DensityField(g, rng.random(g.shape))
        np.testing.assert_array_equal(exact_translation(f, (0, 0), 1.0).rho, f.rho)

    def test_resample_to_finer_grid(self):
        f = _blob(4, 1, 3, 2.0)
        out = exact_translation(f, (0, 0), 0.0, out_grid=make_grid(8))
        assert out.rho[2:6, 2:6].min() == 2.0 and mass(out) == pytest.approx(mass(f))

    def test_aligned_shift(self):
        f = _blob(10, 3, 6)
        out = exact_translation(f, (1.0, 0.0), 0.1)
        np.testing.assert_allclose(out.rho[4:7, 3:6], 1.0, atol=1e-14)
        assert out.rho[3, 4] == 0.0

    def test_half_cell(self):
        g = make_grid(8)
        rho = np.zeros(g.shape)
        rho[3, 3] = 1.0
        out = exact_translation(DensityField(g, rho), (g.h / 2, 0.0), 1.0)
        assert out.rho[3, 3] == pytest.approx(0.5) and out.rho[4, 3] == pytest.approx(0.5)

    def test_escape(self):
        with pytest.raises(SupportEscape):
            exact_translation(_blob(8, 5, 8), (1.0, 0.0), 0.2)


def _swirl(p):
    x, y = p[..., 0], p[..., 1]
    v = np.stack([np.sin(np.pi * x) * np.cos(np.pi * y), -np.cos(np.pi * x) * np.sin(np.pi * y)], -1)
    return p + 0.02 * v


class TestFinePushforward:
    @pytest.mark.parametrize("deposit", ["overlap", "center"])
    def test_identity(self, deposit):
        rng = np.random.default_rng(1)
        g = make_grid(8)
        f = DensityField(g, rng.random(g.shape))
        out = fine_pushforward(f, lambda p: p, k=4, deposit=deposit)
        np.testing.assert_allclose(out, f.cell_measures(), rtol=1e-14, atol=0)

    def test_aligned_k1(self):
        f = _blob(10, 2, 5, 3.0)
        out = fine_pushforward(f, lambda p: p + [0.1, 0.0], k=1)
        np.testing.assert_allclose(out, exact_translation(f, (1.0, 0.0), 0.1).cell_measures(), atol=1e-15)

    @pytest.mark.parametrize("k", [1, 3, 8])
    def test_constant_velocity_any_k(self, k):
        f = _blob(12, 3, 7, 2.0)
        a, t = np.array([0.37, -0.21]), 0.1
        out = fine_pushforward(f, lambda p: p + a * t, k=k)
        ref = exact_translation(f, a, t).cell_measures()
        assert np.abs(out - ref).max() <= 1e-12 * mass(f)

    def test_mass_exact(self):
        rng = np.random.default_rng(2)
        g = make_grid(16)
        f = DensityField(g, rng.random(g.shape))
        for deposit in ("overlap", "center"):
            out = fine_pushforward(f, _swirl, k=8, deposit=deposit)
            assert out.sum() == pytest.approx(mass(f), rel=1e-13)

    def test_quadrature_self_convergence(self):
        g = make_grid(16)
        X, Y = g.centers()
        f = DensityField(g, 1 + np.exp(-((X - 0.4) ** 2 + (Y - 0.6) ** 2) / 0.03))
        for deposit in ("overlap", "center"):
            a = fine_pushforward(f, _swirl, k=64, deposit=deposit)
            b = fine_pushforward(f, _swirl, k=128, deposit=deposit)
            assert np.abs(a - b).max() <= 2 * mass(f) / 64

    def test_image_outside(self):
        f = _blob(8, 5, 8)
        with pytest.raises(SupportEscape):
            fine_pushforward(f, lambda p: p + 0.3, k=2)


def _still(M=16, **kw):
    return Scenario(
        M=M,
        initial=InitialDensitySpec(kind="cosine", center=(0.5, 0.5), radius=0.2),
        desired=DesiredVelocitySpec(alpha=0.0),
        interaction=InteractionSpec(kind="none"),
        steps=5,
        **kw,
    )


class TestParticles:
    def test_zero_velocity(self):
        pr = particle_run(_still(), 2000, seed=1)
        assert all(np.array_equal(c.positions, pr.clouds[0].positions) for c in pr.clouds)

    def test_constant_velocity(self):
        a = np.array([0.3, -0.2])
        sc = _still(dt=0.05).replace(desired=DesiredVelocitySpec(mode="constant", velocity=tuple(a)))
        pr = particle_run(sc, 2000, seed=2)
        p0 = pr.clouds[0].positions
        for n, c in zip(pr.steps, pr.clouds):
            np.testing.assert_allclose(c.positions - p0, np.broadcast_to(n * a * 0.05, p0.shape), atol=1e-14)

    def test_corridor_mass(self):
        sc = load_bundled("corridor").replace(steps=100, stride=20)
        pr = particle_run(sc, 100_000)
        m0 = mass(sc.initial_field())
        assert all(abs(m - m0) <= 1e-12 * m0 for m in particle_mass(pr))

    def test_deterministic(self):
        sc = load_bundled("com_repulsion").replace(steps=10)
        a, b = particle_run(sc, 5000, seed=3), particle_run(sc, 5000, seed=3)
        assert np.array_equal(a.clouds[-1].positions, b.clouds[-1].positions)
        c = particle_run(sc, 5000, seed=4)
        assert not np.array_equal(a.clouds[0].positions, c.clouds[0].positions)

    def test_sampling_is_stratified(self):
        g = make_grid(8)
        rho = np.zeros(g.shape)
        rho[2, 3], rho[5, 5] = 1.0, 3.0
        cloud = sample_particles(DensityField(g, rho), 1000, seed=0)
        assert len(cloud.positions) == 1000
        ci, cj = g.cell_of(cloud.positions)
        assert np.sum((ci == 2) & (cj == 3)) == 250 and np.sum((ci == 5) & (cj == 5)) == 750
