"""Tests for boundary graphs, the fractional seminorm and cutoffs."""

import math

import numpy as np
import pytest

from _oracles import brute_force_seminorm
from slipflow import fracgeom as fg


def quadratic_graph(delta=0.4, eps=1.0, s=4.0):
    return fg.graph_from_profile(
        lambda x: eps * (x ** 2 - delta ** 2 / 3.0),
        lambda x: 2.0 * eps * x,
        center=0.0, delta=delta, s=s)


class TestGagliardoSeminorm:
    def test_constant_is_zero(self):
        val = fg.gagliardo_seminorm(lambda p: np.ones(p.shape[0]), [0.0], 0.5,
                                    theta=0.75, p=4.0)
        assert val == 0.0

    @pytest.mark.parametrize("delta", [0.2, 0.5, 1.0])
    def test_linear_graph_closed_form(self, delta):
        # for f(x) = x with p = s = 4, theta = 3/4 the kernel cancels the
        # increment exactly and the double integral is the patch measure
        # squared: seminorm^4 = (2 delta)^2
        val = fg.gagliardo_seminorm(lambda p: p[:, 0], [0.0], delta,
                                    theta=0.75, p=4.0)
        assert val == pytest.approx((4.0 * delta ** 2) ** 0.25, rel=1e-6)

    def test_square_profile_vs_brute_force(self):
        val = fg.gagliardo_seminorm(lambda p: p[:, 0] ** 2, [0.0], 1.0,
                                    theta=0.75, p=4.0)
        oracle = brute_force_seminorm(lambda x: x ** 2, -1.0, 1.0, 0.75, 4.0)
        assert val == pytest.approx(oracle, rel=1e-4)
        # sanity: the closed form of the simplified integrand is (64/15)^(1/4)
        assert oracle == pytest.approx((64.0 / 15.0) ** 0.25, rel=1e-4)

    def test_absolute_homogeneity_and_translation(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            coef = rng.normal(size=4)
            freq = rng.integers(1, 4, size=2)

            def f(pts, coef=coef, freq=freq):
                x = pts[:, 0]
                return (coef[0] * np.sin(freq[0] * x) + coef[1] * np.cos(freq[1] * x)
                        + coef[2] * x + coef[3] * x ** 2)

            c = float(rng.uniform(0.2, 5.0))
            shift = float(rng.normal())
            base = fg.gagliardo_seminorm(f, [0.0], 0.7, theta=0.75, p=4.0)
            scaled = fg.gagliardo_seminorm(lambda p: c * f(p), [0.0], 0.7,
                                           theta=0.75, p=4.0)
            shifted = fg.gagliardo_seminorm(lambda p: f(p) + shift, [0.0], 0.7,
                                            theta=0.75, p=4.0)
            assert scaled == pytest.approx(c * base, rel=1e-12)
            assert shifted == pytest.approx(base, rel=1e-12)

    def test_level_doubling_converged(self):
        def f(pts):
            x = pts[:, 0]
            return np.sin(2.0 * x) + 0.3 * x ** 3

        lo = fg.gagliardo_seminorm(f, [0.0], 0.5, theta=0.75, p=4.0, level=3)
        hi = fg.gagliardo_seminorm(f, [0.0], 0.5, theta=0.75, p=4.0, level=6)
        assert abs(hi - lo) < 1e-6 * abs(hi)

    def test_vector_valued(self):
        def f(pts):
            x = pts[:, 0]
            return np.stack([x, np.zeros_like(x)], axis=1)

        val = fg.gagliardo_seminorm(f, [0.0], 0.3, theta=0.75, p=4.0)
        assert val == pytest.approx((4.0 * 0.3 ** 2) ** 0.25, rel=1e-6)

    def test_jump_rejected(self):
        def f(pts):
            return np.sign(pts[:, 0])

        with pytest.raises(fg.SmoothnessError):
            fg.gagliardo_seminorm(f, [0.0], 0.5, theta=0.75, p=4.0)

    def test_bad_order_rejected(self):
        with pytest.raises(ValueError):
            fg.gagliardo_seminorm(lambda p: p[:, 0], [0.0], 0.5, theta=1.2, p=4.0)


class TestNormalizeGraph:
    def test_constant_becomes_zero(self):
        g = fg.graph_from_profile(lambda x: 3.7 + 0.0 * x, lambda x: 0.0 * x,
                                  center=0.0, delta=0.5, s=4.0)
        ng = fg.normalize_graph(g)
        assert ng.normalized
        line = ng.sample_line(101)
        assert np.max(np.abs(ng.eval(line))) < 1e-14

    def test_line_rotates_to_horizontal(self):
        delta = 0.4
        g = fg.graph_from_profile(lambda x: x.copy(), lambda x: np.ones_like(x),
                                  center=0.0, delta=delta, s=4.0)
        ng = fg.normalize_graph(g)
        ng.check_normalized()
        line = ng.sample_line(257)
        assert np.max(np.abs(ng.eval(line))) < 1e-12
        assert np.max(np.abs(ng.grad_eval(line))) < 1e-12

    def test_curved_graph_matches_explicit_rotation(self):
        # rotate samples of the curve by hand and compare heights
        delta, c = 0.4, 0.0
        omega = lambda t: t + 0.3 * t ** 2
        omegap = lambda t: 1.0 + 0.6 * t
        g = fg.graph_from_profile(omega, omegap, center=c, delta=delta, s=4.0)
        ng = fg.normalize_graph(g)
        ng.check_normalized()

        slope = omegap(0.0)
        cos_t = 1.0 / math.sqrt(1.0 + slope ** 2)
        sin_t = slope * cos_t
        ts = np.linspace(-0.7 * delta, 0.7 * delta, 41)
        w = omega(ts) - omega(0.0)
        u = cos_t * ts + sin_t * w
        height = omega(0.0) - sin_t * ts + cos_t * w
        # remove the same mean the normalization removed
        got = ng.eval(u.reshape(-1, 1))
        shift = np.mean(height - got)
        assert np.max(np.abs(height - shift - got)) < 1e-10

    def test_prenormalized_quadratic_unchanged(self):
        g = quadratic_graph(delta=0.4)
        ng = fg.normalize_graph(g)
        line = g.sample_line(129)
        assert np.max(np.abs(ng.eval(line) - g.eval(line))) < 1e-12

    def test_idempotent(self):
        g = fg.graph_from_profile(lambda x: 0.3 * np.sin(2 * x) + 0.1 * x,
                                  lambda x: 0.6 * np.cos(2 * x) + 0.1,
                                  center=0.2, delta=0.3, s=4.0)
        n1 = fg.normalize_graph(g)
        n2 = fg.normalize_graph(n1)
        line = n1.sample_line(101)
        assert np.max(np.abs(n2.eval(line) - n1.eval(line))) < 1e-12

    def test_nonfinite_rejected(self):
        g = fg.graph_from_profile(lambda x: np.where(x > 0, np.nan, 0.0),
                                  lambda x: 0.0 * x, center=0.0, delta=0.5, s=4.0)
        with pytest.raises(fg.NormalizationError):
            fg.normalize_graph(g)


class TestGraphEstimates:
    def test_flat_graph_not_applicable(self):
        g = fg.graph_from_profile(lambda x: 0.0 * x, lambda x: 0.0 * x,
                                  center=0.0, delta=0.5, s=4.0, normalized=True)
        rep = fg.verify_graph_estimates(g)
        assert rep.sup_height_ratio is None
        assert rep.sup_gradient_ratio is None
        assert rep.low_seminorm_ratio is None

    def test_ratios_independent_of_amplitude(self):
        reps = [fg.verify_graph_estimates(
            fg.normalize_graph(quadratic_graph(delta=0.4, eps=eps)), level=2)
            for eps in (1e-3, 1.0, 1e3)]
        for attr in ("sup_height_ratio", "sup_gradient_ratio", "low_seminorm_ratio"):
            vals = np.array([getattr(r, attr) for r in reps])
            assert np.all(np.isfinite(vals))
            assert np.max(np.abs(vals - vals[0])) < 1e-10 * abs(vals[0])

    def test_ratios_bounded_across_scales(self):
        # fixed profile rescaled with the seminorm-preserving amplitude
        # delta^{2 - n/s}; every ratio must then be delta-independent
        s, n = 4.0, 2
        a = 2.0 - n / s
        rows = []
        for k in range(1, 7):
            d = 2.0 ** (-k)
            amp = 0.2 * d ** a
            g = fg.graph_from_profile(
                lambda x, d=d, amp=amp: amp * ((x / d) ** 2 - 1.0 / 3.0),
                lambda x, d=d, amp=amp: 2.0 * amp * x / d ** 2,
                center=0.0, delta=d, s=s, normalized=True)
            rows.append(fg.verify_graph_estimates(g, level=2))
        for attr in ("sup_height_ratio", "sup_gradient_ratio", "low_seminorm_ratio"):
            vals = np.array([getattr(r, attr) for r in rows])
            assert np.max(vals) / np.min(vals) < 1.0 + 1e-6


class TestCutoff:
    def test_plateau_and_support(self):
        c = fg.make_cutoff([0.5, -0.25], 0.4)
        assert c.eval(np.array([[0.5, -0.25]]))[0] == 1.0
        assert c.eval(np.array([[0.5 + 1.01 * 0.4, -0.25]]))[0] == 0.0
        inner = np.array([[0.5 + 0.49 * 0.4, -0.25]])
        assert c.eval(inner)[0] == 1.0

    def test_transition_profile_closed_form(self):
        delta = 0.4
        c = fg.make_cutoff([0.0, 0.0], delta)
        p = np.array([[0.75 * delta, 0.0]])
        got = c.eval(p)[0]
        assert 0.0 < got < 1.0
        # radial coordinate t = (0.75 - 0.5)/0.5 = 1/2; at the midpoint the
        # two exponential weights tie and the profile is exactly 1/2
        t = 0.5
        ea, eb = math.exp(-1 / t), math.exp(-1 / (1 - t))
        expect = 1.0 - ea / (ea + eb)
        assert abs(got - expect) < 1e-14
        assert abs(got - 0.5) < 1e-14

    def test_values_in_unit_interval(self):
        c = fg.make_cutoff([0.0, 0.0], 1.0)
        rng = np.random.default_rng(2)
        pts = rng.uniform(-1.2, 1.2, size=(500, 2))
        v = c.eval(pts)
        assert (v >= 0.0).all() and (v <= 1.0).all()

    def test_gradient_matches_finite_differences(self):
        c = fg.make_cutoff([0.0, 0.0], 1.0)
        rng = np.random.default_rng(3)
        ang = rng.uniform(0, 2 * np.pi, 20)
        rad = rng.uniform(0.55, 0.95, 20)
        pts = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
        g = c.grad_eval(pts)
        h = 1e-6
        for d in range(2):
            e = np.zeros(2)
            e[d] = h
            fd = (c.eval(pts + e) - c.eval(pts - e)) / (2 * h)
            assert np.max(np.abs(fd - g[:, d])) < 1e-6

    def test_second_differences_bounded(self):
        # smoothness probe: centered second differences stay bounded as the
        # step shrinks, at 20 random annulus points
        c = fg.make_cutoff([0.0, 0.0], 1.0)
        rng = np.random.default_rng(4)
        ang = rng.uniform(0, 2 * np.pi, 20)
        rad = rng.uniform(0.55, 0.95, 20)
        pts = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
        prev = None
        for h in (1e-2, 1e-3, 1e-4):
            e = np.array([h, 0.0])
            dd = (c.eval(pts + e) - 2 * c.eval(pts) + c.eval(pts - e)) / h ** 2
            assert np.all(np.isfinite(dd))
            assert np.max(np.abs(dd)) < 100.0
            if prev is not None:
                assert np.max(np.abs(dd - prev)) < 0.05 * max(1.0, np.max(np.abs(prev)))
            prev = dd
