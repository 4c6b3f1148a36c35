"""Tests for the reflection construction on the truncated half-space."""

import numpy as np
import pytest

from slipflow import halfspace as hs


def bump_force(p):
    """Smooth swirl supported in a small ball around (0, -1/2)."""
    p = np.atleast_2d(p)
    d = p - np.array([0.0, -0.5])
    r2 = (d ** 2).sum(axis=1) / 0.25 ** 2
    w = np.maximum(1.0 - r2, 0.0) ** 2
    return np.stack([w * (3.0 + d[:, 1]), w * d[:, 0]], axis=1)


class TestParityClosures:
    def test_constant_tangential_even(self):
        v = hs.reflect_velocity(lambda p: np.tile([1.0, 0.0], (np.atleast_2d(p).shape[0], 1)))
        pts = np.random.default_rng(0).uniform(-1, 1, size=(40, 2))
        assert np.allclose(v(pts), [1.0, 0.0])

    def test_normal_component_odd(self):
        def v_half(p):
            p = np.atleast_2d(p)
            return np.stack([np.zeros(p.shape[0]), p[:, 1]], axis=1)

        v = hs.reflect_velocity(v_half)
        pts = np.random.default_rng(1).uniform(-1, 1, size=(40, 2))
        lower = pts.copy()
        lower[:, 1] = -np.abs(lower[:, 1])
        up = lower.copy()
        up[:, 1] = -up[:, 1]
        assert np.allclose(v(up)[:, 1], -v(lower)[:, 1], atol=1e-15)
        # for this particular field the odd extension is x2 everywhere
        assert np.allclose(v(pts)[:, 1], pts[:, 1], atol=1e-15)

    def test_pressure_even(self):
        q = hs.reflect_scalar_even(lambda p: np.atleast_2d(p)[:, 0])
        pts = np.random.default_rng(2).uniform(-1, 1, size=(30, 2))
        assert np.allclose(q(pts), pts[:, 0], atol=1e-15)

    def test_reflect_then_fold_is_identity(self):
        rng = np.random.default_rng(3)

        def v_half(p):
            p = np.atleast_2d(p)
            return np.stack([np.sin(p[:, 0] + p[:, 1]), p[:, 1] * np.cos(p[:, 0])], axis=1)

        def q_half(p):
            p = np.atleast_2d(p)
            return np.cos(p[:, 0]) * np.exp(p[:, 1])

        pair = hs.reflect_data(v_half, q_half)
        folded = hs.fold_solution(pair.full_velocity, pair.full_pressure)
        pts = rng.uniform(-1, 0, size=(50, 2))
        pts[:, 1] = -np.abs(pts[:, 1])
        assert np.max(np.abs(folded.half_velocity(pts) - v_half(pts))) < 1e-14
        assert np.max(np.abs(folded.half_pressure(pts) - q_half(pts))) < 1e-14

    def test_fold_constant_normal_vanishes(self):
        v = lambda p: np.tile([0.0, 1.0], (np.atleast_2d(p).shape[0], 1))
        folded = hs.fold_velocity(v)
        pts = np.random.default_rng(4).uniform(-1, 0, size=(30, 2))
        assert np.max(np.abs(folded(pts)[:, 1])) < 1e-15

    def test_fold_is_projection(self):
        rng = np.random.default_rng(5)

        def v_full(p):
            p = np.atleast_2d(p)
            return np.stack([np.sin(p[:, 0] * p[:, 1]), np.cos(p[:, 0]) + p[:, 1] ** 3],
                            axis=1)

        once = hs.fold_velocity(hs.reflect_velocity(hs.fold_velocity(v_full)))
        single = hs.fold_velocity(v_full)
        pts = rng.uniform(-1, 0, size=(50, 2))
        pts[:, 1] = -np.abs(pts[:, 1]) - 1e-12
        assert np.max(np.abs(once(pts) - single(pts))) < 1e-14

    def test_random_fold_flat_normal_zero(self):
        rng = np.random.default_rng(6)
        coef = rng.normal(size=4)

        def v_full(p):
            p = np.atleast_2d(p)
            return np.stack([coef[0] * np.sin(p[:, 0]) + coef[1] * p[:, 1],
                             coef[2] * np.cos(p[:, 1]) + coef[3] * p[:, 0]], axis=1)

        folded = hs.fold_velocity(v_full)
        xs = np.linspace(-0.9, 0.9, 60)
        flat = np.stack([xs, np.zeros_like(xs)], axis=1)
        assert np.max(np.abs(folded(flat)[:, 1])) <= 1e-14


class TestSymmetricDisc:
    def test_meshes_valid_and_mirrored(self):
        sym = hs.symmetric_disc(0.2)
        sym.full.validate()
        sym.half.validate()
        m = sym.mirror_vertex
        assert np.allclose(sym.full.vertices[m][:, 0], sym.full.vertices[:, 0])
        assert np.allclose(sym.full.vertices[m][:, 1], -sym.full.vertices[:, 1])
        assert np.all(m[m] == np.arange(sym.full.num_vertices))

    def test_half_embeds_in_full(self):
        sym = hs.symmetric_disc(0.2)
        nvh = sym.half.num_vertices
        assert np.allclose(sym.full.vertices[:nvh], sym.half.vertices)


@pytest.fixture(scope="module")
def report():
    return hs.verify_reflection_consistency(bump_force, h=0.15)


class TestCrossValidation:
    def test_zero_data_both_zero(self):
        def zero(p):
            return np.zeros((np.atleast_2d(p).shape[0], 2))

        rep = hs.verify_reflection_consistency(zero, h=0.25)
        assert np.abs(rep.full_report.velocity.values).max() < 1e-12
        assert np.abs(rep.direct_report.velocity.values).max() < 1e-12

    def test_folded_matches_direct(self, report):
        assert report.velocity_scale > 1e-4  # a genuinely nonzero flow
        assert report.velocity_difference <= 5.0 * report.discretization_error

    def test_flat_normal_trace(self, report):
        assert report.flat_normal_max <= 1e-12 * max(report.velocity_scale, 1.0)

    def test_energy_doubles(self, report):
        assert report.energy_ratio == pytest.approx(2.0, rel=0.01)

    def test_parity_of_discrete_solution(self, report):
        assert report.parity_defect <= 1e-9 * max(report.velocity_scale, 1.0)

    def test_csv(self, report):
        lines = report.csv().strip().splitlines()
        assert lines[0].startswith("quantity,")
        assert len(lines) == 6
