import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monolb.mollifier import (
    BUMP_C,
    BUMP_INTEGRAL,
    Mollifier1D,
    OrthantMollifier,
    alpha,
    box_mollifier_pair,
    box_sandwich,
    bump_cdf,
    bump_eval,
    derivative_bound_check,
    orthant_sandwich,
    phi_eps,
    phi_eps_prime,
    psi_orthant_union,
    psi_support_check,
    richardson_derivative,
)


class TestBump:
    def test_normalization_oracle(self):
        mpmath.mp.dps = 30
        ref = mpmath.quad(lambda t: mpmath.exp(-1 / (1 - t * t)), [-1, 0, 1])
        assert BUMP_INTEGRAL == pytest.approx(float(ref), rel=1e-14)

    def test_values(self):
        np.testing.assert_array_equal(bump_eval([-1.0, 1.0, 2.0]), [0, 0, 0])
        assert bump_eval(0.0) == pytest.approx(BUMP_C / math.e)
        assert BUMP_C / math.e < 1

    def test_integral_grid(self):
        t = np.linspace(-1, 1, 100_001)
        assert np.trapezoid(bump_eval(t), t) == pytest.approx(1.0, abs=1e-8)

    def test_cdf_against_mpmath(self):
        mpmath.mp.dps = 30
        for t in (-0.7, -0.2, 0.35, 0.9):
            ref = BUMP_C * mpmath.quad(lambda y: mpmath.exp(-1 / (1 - y * y)), [-1, t])
            assert bump_cdf(t) == pytest.approx(float(ref), abs=1e-14)


class TestPhi:
    @pytest.mark.parametrize("eps", [0.05, 0.1, 0.5])
    def test_examples(self, eps):
        assert phi_eps(-0.1, eps) == 0.0
        assert phi_eps(eps / 2, eps) == pytest.approx(0.5, abs=1e-15)
        assert phi_eps(2 * eps, eps) == 1.0

    @pytest.mark.parametrize("eps", [0.05, 0.1, 0.5])
    def test_exact_outside_probe(self, eps):
        rng = np.random.default_rng(0)
        below = -rng.exponential(1.0, 1000)
        above = eps + rng.exponential(1.0, 1000)
        m = Mollifier1D(eps)
        assert np.all(phi_eps(below, eps) == 0) and np.all(m(below) == 0)
        assert np.all(phi_eps(above, eps) == 1) and np.all(m(above) == 1)

    def test_monotone(self):
        # round-off in the quadrature gives dips of order 1e-16
        x = np.linspace(-0.01, 0.11, 20_001)
        assert np.all(np.diff(phi_eps(x, 0.1)) >= -1e-15)
        assert np.all(np.diff(Mollifier1D(0.1)(x)) >= 0)

    def test_table_accuracy(self):
        x = np.linspace(0, 0.2, 5001)
        np.testing.assert_allclose(Mollifier1D(0.2)(x), phi_eps(x, 0.2), atol=1e-10)

    def test_continuity_modulus(self):
        x = np.linspace(-0.1, 0.2, 30_001)
        step = x[1] - x[0]
        jumps = np.abs(np.diff(phi_eps(x, 0.1)))
        assert jumps.max() <= phi_eps_prime(0.05, 0.1) * step * 1.01

    def test_rejects_eps(self):
        with pytest.raises(ValueError):
            phi_eps(0.1, 0.0)
        with pytest.raises(ValueError):
            Mollifier1D(-1.0)


class TestDerivatives:
    def test_alpha(self):
        assert alpha(1) == pytest.approx(128 * math.e)
        assert alpha(2) == pytest.approx(2 * math.e * 64**2 * 2 * 2**6)
        vals = [alpha(k) for k in range(1, 8)]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_richardson_on_polynomial_and_sine(self):
        x = np.linspace(-1, 1, 7)
        np.testing.assert_allclose(richardson_derivative(np.sin, x, 1, 0.1), np.cos(x), atol=1e-10)
        np.testing.assert_allclose(richardson_derivative(np.sin, x, 3, 0.1), -np.cos(x), atol=1e-7)
        np.testing.assert_allclose(richardson_derivative(lambda t: t**4, x, 4, 0.1), 24, atol=1e-6)

    def test_first_derivative_closed_form(self):
        eps = 0.1
        x = np.linspace(0.005, 0.095, 19)
        fd = richardson_derivative(lambda t: phi_eps(t, eps), x, 1, eps / 64)
        np.testing.assert_allclose(fd, phi_eps_prime(x, eps), rtol=1e-6, atol=1e-6)

    def test_k1_density_maximum(self):
        rep = derivative_bound_check(0.1, 1)
        assert rep.max_abs == pytest.approx(2 / 0.1 * BUMP_C / math.e, rel=1e-4)

    @pytest.mark.parametrize("eps", [0.05, 0.1, 0.5])
    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_bound(self, eps, k):
        rep = derivative_bound_check(eps, k)
        assert rep.holds and rep.to_dict()["holds"]

    def test_guard(self):
        with pytest.raises(ValueError):
            derivative_bound_check(0.1, 5)
        with pytest.raises(ArithmeticError):
            richardson_derivative(np.sin, np.array([1e6]), 1, 1e-7)


def all_orthants(d):
    return np.array(list(itertools.product([-1, 1], repeat=d)))


class TestOrthantMollifier:
    def test_inside_and_outside(self):
        m = OrthantMollifier(np.array([[1, 1], [-1, 1]]), 0.1)
        assert psi_orthant_union(m, [0.5, 0.3]) == 1.0
        assert psi_orthant_union(m, [-0.2, 0.7]) == 1.0
        assert psi_orthant_union(m, [0.5, -0.3]) == 0.0

    def test_partition_of_unity(self):
        m = OrthantMollifier(all_orthants(3), 0.1)
        x = np.random.default_rng(1).uniform(0.2, 1, (500, 3)) * np.random.default_rng(2).choice([-1, 1], (500, 3))
        np.testing.assert_array_equal(m(x), 1.0)

    def test_at_most_one_summand(self):
        m = OrthantMollifier(all_orthants(3), 0.2)
        x = np.random.default_rng(3).normal(0, 0.2, (10_000, 3))
        nonzero = sum((np.prod(m._phi(x * o), axis=1) > 0).astype(int) for o in m.orthants)
        assert nonzero.max() <= 1
        np.testing.assert_allclose(m(x), m.literal(x), atol=1e-15)

    def test_range(self):
        m = OrthantMollifier(all_orthants(2)[:3], 0.3)
        v = m(np.random.default_rng(4).normal(0, 0.3, (5000, 2)))
        assert v.min() >= 0 and v.max() <= 1

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            OrthantMollifier(np.array([[1, -1], [1, -1]]), 0.1)

    def test_support_check(self):
        m = OrthantMollifier(np.array([[1, 1, -1], [-1, 1, 1]]), 0.1)
        for j in ([0], [0, 2], [0, 1, 2]):
            rep = psi_support_check(m, j, samples=1000, rng=5)
            assert rep.holds, rep.to_dict()
            assert rep.checked_zero > 0 and rep.checked_inside > 0

    def test_support_generic_nonzero_inside(self):
        m = OrthantMollifier(np.array([[1, 1]]), 0.1)
        rep = psi_support_check(m, [0, 1], samples=2000, rng=6)
        assert rep.nonzero_inside > 0.9 * rep.checked_inside


class TestSandwich:
    def test_box_examples(self):
        p = box_mollifier_pair(0.1, 0.05, 3)
        assert p.psi_in(np.zeros(3)) == 1.0 and p.psi_out(np.zeros(3)) == 1.0
        assert p.psi_in([0.3, 0, 0]) == 0.0 and p.psi_out([0.3, 0, 0]) == 0.0

    def test_box_pointwise(self):
        p = box_mollifier_pair(0.1, 0.05, 2)
        z = np.random.default_rng(7).uniform(-0.4, 0.4, (20_000, 2))
        assert np.all(p.psi_in(z) <= p.indicator(z)) and np.all(p.indicator(z) <= p.psi_out(z))
        assert np.all(p.psi_in(z, exact=True) <= p.indicator(z))

    def test_box_regions(self):
        p = box_mollifier_pair(0.2, 0.1, 1)
        assert p.psi_in([[0.29]]) == 1.0 and p.psi_in([[0.41]]) == 0.0
        assert p.psi_out([[0.4]]) == 1.0 and p.psi_out([[0.51]]) == 0.0

    def test_box_order_violation(self):
        with pytest.raises(ValueError):
            box_mollifier_pair(0.1, 0.2, 2)

    def test_box_mc(self):
        p = box_mollifier_pair(0.2, 0.1, 2)
        s = box_sandwich(p, np.random.default_rng(8).normal(0, 0.4, (100_000, 2)))
        assert s.holds() and s.lower < s.middle < s.upper

    def test_orthant_mc(self):
        m = OrthantMollifier(np.array([[1, 1], [-1, -1]]), 0.2)
        s = orthant_sandwich(m, np.random.default_rng(9).normal(0, 1, (100_000, 2)))
        assert s.holds()
        assert s.middle == pytest.approx(0.5, abs=4 * s.stderr + 0.01)

    @settings(deadline=None, max_examples=20)
    @given(st.floats(0.02, 1.0), st.integers(0, 1000))
    def test_psi_below_indicator(self, eps, seed):
        m = OrthantMollifier(np.array([[1, -1]]), eps)
        z = np.random.default_rng(seed).normal(size=(200, 2))
        assert np.all(m(z) <= m.contains(z))
