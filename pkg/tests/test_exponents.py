"""Tests for the exponent ladders and the friction gate."""

from fractions import Fraction

import numpy as np
import pytest

from slipflow.exponents import (
    ChainReport,
    check_embedding_chain,
    conjugate,
    friction_exponent_gate,
    navier_ladder,
    slip_ladder,
    sobolev_star,
)


class TestSlipLadder:
    def test_reference_case_s4_n2(self):
        # hand evaluation of the recurrence: 1/t0 = 1 - 2/6 = 2/3,
        # step = 1/4 - 1/2 = -1/4, M = ceil(4 * (1/2 - 1/3)) = 1,
        # 1/t1 = 2/3 - 1/4 = 5/12
        lad = slip_ladder(4, 2)
        assert lad.t_start == Fraction(4, 3)
        assert lad.levels[0] == Fraction(3, 2)
        assert lad.M == 1
        assert lad.levels[1] == Fraction(12, 5)
        assert lad.final == Fraction(12, 5)

    def test_large_s_limit(self):
        # at s = 1000 the first rung is just above 1 and each later rung
        # moves 1/t by almost 1/n = 1/2
        lad = slip_ladder(1000, 2)
        t0 = float(lad.levels[0])
        assert abs(t0 - 1 / (1 - 2 / 1002)) < 1e-12
        invs = [1 / float(t) for t in lad.levels]
        steps = np.diff(invs)
        assert np.allclose(steps, 1 / 1000 - 1 / 2)

    @pytest.mark.parametrize("s,n", [(3, 2), (5, 2), (10, 2), (Fraction(7, 2), 2)])
    def test_reaches_two(self, s, n):
        lad = slip_ladder(s, n)
        assert lad.final >= 2
        assert lad.levels[lad.first_ge_two] >= 2

    def test_monotone_increasing_random(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = 2
            s = float(rng.uniform(n + 1e-3, 20.0))
            lad = slip_ladder(s, n)
            ts = [float(t) for t in lad.levels]
            assert all(b > a for a, b in zip(ts, ts[1:]))
            assert ts[-1] >= 2

    def test_rejects_s_below_n(self):
        with pytest.raises(ValueError):
            slip_ladder(2, 2)
        with pytest.raises(ValueError):
            slip_ladder(1.5, 2)


class TestNavierLadder:
    def test_reference_case_s4_n2_q3(self):
        # t0 = s' = 4/3; step in 1/t is (1/2)(1 - 1/3) = 1/3;
        # 1/t1 = 3/4 - 1/3 = 5/12
        lad = navier_ladder(4, 2, 3)
        assert lad.levels[0] == Fraction(4, 3)
        assert lad.levels[1] == Fraction(12, 5)
        assert lad.first_ge_two == 1
        # guaranteed-length bound: ceil(1/t0 - 1/2) = 1, over step 1/3
        assert lad.M == 3

    def test_large_q_step_limit(self):
        lad = navier_ladder(4, 2, 1e9)
        inv0 = 1 / float(lad.levels[0])
        inv1 = 1 / float(lad.levels[1])
        assert abs((inv0 - inv1) - 1 / 2) < 1e-8

    def test_tiny_q_blows_up_M_but_returns(self):
        lad = navier_ladder(4, 2, Fraction(101, 100))  # q = n - 1 + 0.01
        assert lad.M > 100
        assert lad.final >= 2

    def test_monotone(self):
        lad = navier_ladder(6, 2, 2.5)
        ts = [float(t) for t in lad.levels]
        assert all(b > a for a, b in zip(ts, ts[1:]))

    def test_rejects_bad_q(self):
        with pytest.raises(ValueError):
            navier_ladder(4, 2, 1)


class TestEmbeddingChain:
    def test_slip_s4_n2_first_gap_value(self):
        # the m = 0 surplus is (n^2 + s^2)/(s n (s + n)) = 20/48 = 5/12
        s, n = Fraction(4), 2
        t_start = conjugate(s)
        star = sobolev_star(t_start, n)
        lad = slip_ladder(s, n)
        surplus = 1 / lad.levels[0] - 1 / star
        assert surplus == Fraction(n * n + s * s, s * n * (s + n))
        assert surplus > 0

    @pytest.mark.parametrize("s", [3, 5, 10])
    def test_chain_holds(self, s):
        rep = check_embedding_chain(slip_ladder(s, 2))
        assert isinstance(rep, ChainReport)
        assert rep.ok
        assert all(h for _, h in rep.checks)

    def test_friction_chain_holds(self):
        rep = check_embedding_chain(navier_ladder(4, 2, 3))
        assert rep.ok

    def test_degenerate_exponent_terminates(self):
        lad = slip_ladder(20, 2)
        # exponents past 2 can exceed n = 2; the chain must then report a
        # clean termination instead of failing
        rep = check_embedding_chain(lad)
        assert rep.ok
        if any(t >= 2 for t in lad.levels[:-1]):
            assert rep.terminated_at >= 0


class TestFrictionGate:
    def test_middle_case(self):
        assert friction_exponent_gate(2, 2, 1.5) is True
        assert friction_exponent_gate(2, 2, 1.0) is False

    def test_high_case(self):
        # r = 3 > n = 2: need q >= r/n' = 1.5
        assert friction_exponent_gate(3, 2, 1.4) is False
        assert friction_exponent_gate(3, 2, 1.5) is True

    def test_low_case(self):
        # r = 4/3 < n' = 2: need q > r'/n' = 4/2 = 2
        assert friction_exponent_gate(Fraction(4, 3), 2, Fraction(5, 2)) is True
        assert friction_exponent_gate(Fraction(4, 3), 2, 2) is False

    def test_monotone_in_q(self):
        rng = np.random.default_rng(3)
        for _ in range(40):
            r = float(rng.uniform(1.05, 6.0))
            qs = np.sort(rng.uniform(0.2, 6.0, size=8))
            flags = [friction_exponent_gate(r, 2, q) for q in qs]
            # once true, stays true
            assert flags == sorted(flags)

    def test_case_oracle_grid(self):
        # independent case-by-case oracle, written out longhand
        def oracle(r, n, q):
            n_prime = n / (n - 1)
            if r > n:
                return q >= r / n_prime
            if n_prime <= r <= n:
                return q > n - 1
            return q > (r / (r - 1)) / n_prime

        rs = np.linspace(1.1, 5.0, 10)
        qs = np.linspace(0.3, 4.0, 10)
        for r in rs:
            for q in qs:
                r_f, q_f = Fraction(r).limit_denominator(10**6), Fraction(q).limit_denominator(10**6)
                assert friction_exponent_gate(r_f, 2, q_f) == oracle(float(r_f), 2, float(q_f))
