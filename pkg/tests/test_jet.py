from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from pinntk.activations import get_activation, relu_power
from pinntk.jet import (
    MAX_ORDER,
    Jet,
    JetLayout,
    bijet_inputs,
    constant_jet,
    jet_compose_scalar,
    jet_linear_combine,
    jet_product,
    seed_coordinate_jet,
    variable_jet,
)
from pinntk.multiindex import MultiIndex


def poly_jet(coeffs, x0, k):
    """Jet of a univariate polynomial from its symbolic derivatives."""
    p = np.polynomial.Polynomial(coeffs)
    return Jet(JetLayout(1, k), np.array([p.deriv(j)(x0) for j in range(k + 1)]))


def fd_derivative(f, x, n, h):
    """Central n-th difference, 2nd order accurate, via Richardson on two steps."""
    def cd(step):
        pts = np.arange(-n, n + 1, 2) * step / 2 if n > 0 else np.array([0.0])
        w = np.array([(-1) ** (n - j) * comb(n, j) for j in range(n + 1)], dtype=float)
        return np.sum(w * f(x + pts)) / step**n

    return (4 * cd(h / 2) - cd(h)) / 3


class TestSeed:
    def test_first_coordinate(self):
        j = seed_coordinate_jet(np.array([3.0, 5.0]), 0, 2)
        assert j.value == 3.0
        assert j[(1, 0)] == 1.0
        rest = [a for a in j.layout.indices if a not in (MultiIndex((0, 0)), MultiIndex((1, 0)))]
        assert all(j[a] == 0 for a in rest)

    def test_second_coordinate(self):
        j = seed_coordinate_jet(np.array([3.0, 5.0]), 1, 2)
        assert j.value == 5.0 and j[(0, 1)] == 1.0 and j[(1, 0)] == 0.0

    def test_order_zero(self):
        j = seed_coordinate_jet(np.array([3.0, 5.0]), 1, 0)
        assert_array_equal(j.table, [5.0])

    @pytest.mark.parametrize("d,k", [(1, 6), (2, 4), (3, 3)])
    def test_table_length(self, d, k):
        assert JetLayout(d, k).size == comb(d + k, k)

    def test_order_cap(self):
        with pytest.raises(ValueError):
            JetLayout(1, MAX_ORDER + 1)


class TestLinearCombine:
    def test_sum_of_x_and_x2(self):
        out = jet_linear_combine([poly_jet([0, 1], 1.0, 2), poly_jet([0, 0, 1], 1.0, 2)], [1, 1])
        assert_allclose(out.table, [2, 3, 2])

    def test_zero_weight(self):
        out = jet_linear_combine([poly_jet([1, 2, 3], 0.5, 2)], [0.0])
        assert_array_equal(out.table, 0)

    def test_doubling(self):
        j = poly_jet([1, 2, 3], 0.5, 2)
        assert_allclose(jet_linear_combine([j], [2.0]).table, 2 * j.table)

    def test_layout_mismatch(self):
        with pytest.raises(ValueError):
            jet_linear_combine([poly_jet([1], 0, 2), poly_jet([1], 0, 3)], [1, 1])


class TestProduct:
    def test_leibniz_hand_check(self):
        out = jet_product(poly_jet([0, 0, 1], 1.0, 2), poly_jet([0, 0, 0, 1], 1.0, 2))
        assert_allclose(out.table, [1, 5, 20])

    def test_unit_and_zero(self):
        j = poly_jet([1, -2, 0.5, 3], 0.4, 3)
        one = constant_jet(j.layout, 1.0)
        assert_allclose(jet_product(j, one).table, j.table)
        assert_array_equal(jet_product(j, constant_jet(j.layout, 0.0)).table, 0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            jet_product(poly_jet([1], 0, 2), poly_jet([1], 0, 3))

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.lists(st.floats(-3, 3), min_size=3, max_size=3))
    def test_polynomials_exact_in_two_dims(self, ca, cb):
        # p = ca0 + ca1 x + ca2 x y, q = cb0 + cb1 y + cb2 x^2
        pt = np.array([0.3, -0.7])
        X = seed_coordinate_jet(pt, 0, 3)
        Y = seed_coordinate_jet(pt, 1, 3)
        one = constant_jet(X.layout, 1.0)
        p = jet_linear_combine([one, X, jet_product(X, Y)], ca)
        q = jet_linear_combine([one, Y, jet_product(X, X)], cb)
        r = jet_product(p, q)
        x, y = pt
        # symbolic derivatives of p*q at pt
        expect = {
            (0, 0): (ca[0] + ca[1] * x + ca[2] * x * y) * (cb[0] + cb[1] * y + cb[2] * x * x),
            (1, 0): (ca[1] + ca[2] * y) * (cb[0] + cb[1] * y + cb[2] * x * x)
            + (ca[0] + ca[1] * x + ca[2] * x * y) * 2 * cb[2] * x,
            (0, 1): ca[2] * x * (cb[0] + cb[1] * y + cb[2] * x * x) + (ca[0] + ca[1] * x + ca[2] * x * y) * cb[1],
        }
        for alpha, v in expect.items():
            assert_allclose(r[alpha], v, rtol=1e-12, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 3), st.integers(0, 4))
    def test_commutative_associative(self, seed, d, k):
        g = np.random.default_rng(seed)
        layout = JetLayout(d, k)
        a, b, c = (Jet(layout, g.standard_normal(layout.size)) for _ in range(3))
        assert_allclose(jet_product(a, b).table, jet_product(b, a).table, rtol=1e-12, atol=1e-12)
        lhs = jet_product(jet_product(a, b), c).table
        rhs = jet_product(a, jet_product(b, c)).table
        assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * np.max(np.abs(lhs)))


class TestCompose:
    def test_square_of_x(self):
        sq = lambda y, n: np.stack([y * y, 2 * y, 2 + 0 * y, 0 * y, 0 * y][: n + 1])
        out = jet_compose_scalar(sq, seed_coordinate_jet(np.array([3.0]), 0, 2))
        assert_allclose(out.table, [9, 6, 2])

    def test_identity(self):
        inner = poly_jet([0.1, 2, -1, 0.5], 0.3, 3)
        out = jet_compose_scalar(get_activation("identity").derivatives, inner)
        assert_allclose(out.table, inner.table)

    def test_tanh_of_2x_matches_fd(self):
        inner = jet_linear_combine([seed_coordinate_jet(np.array([0.3]), 0, 3)], [2.0])
        out = jet_compose_scalar(get_activation("tanh").derivatives, inner)
        f = lambda t: np.tanh(2 * t)
        for n in range(4):
            assert_allclose(out.table[n], fd_derivative(f, 0.3, n, 1e-2), rtol=1e-6)

    @pytest.mark.parametrize("name", ["tanh", "relu^6", "identity", "square"])
    def test_affine_inner_matches_fd(self, name):
        if name == "square":
            derivs = lambda y, n: np.stack([y * y, 2 * y, 2 + 0 * y, 0 * y][: n + 1])
            f = lambda t: t * t
            k = 2
        else:
            act = get_activation(name)
            derivs, f, k = act.derivatives, act, 3
        w, c, x0 = 1.7, -0.2, 0.45
        inner = jet_linear_combine([seed_coordinate_jet(np.array([x0]), 0, k), constant_jet(JetLayout(1, k), 1.0)], [w, c])
        out = jet_compose_scalar(derivs, inner)
        g = lambda t: f(w * t + c)
        for n in range(k + 1):
            assert_allclose(out.table[n], fd_derivative(g, x0, n, 1e-2), rtol=1e-5, atol=1e-7)

    def test_insufficient_derivatives(self):
        relu = relu_power(1)
        inner = jet_linear_combine([seed_coordinate_jet(np.array([0.3]), 0, 3)], [1.0])
        with pytest.raises(ValueError):
            jet_compose_scalar(relu.derivatives, inner)

    def test_multivariate_chain_rule(self):
        pt = np.array([0.2, 0.5])
        X, Y = seed_coordinate_jet(pt, 0, 2), seed_coordinate_jet(pt, 1, 2)
        out = jet_compose_scalar(get_activation("sin").derivatives, jet_product(X, Y))
        x, y = pt
        assert_allclose(out[(1, 1)], np.cos(x * y) - x * y * np.sin(x * y), rtol=1e-13)
        assert_allclose(out[(2, 0)], -y * y * np.sin(x * y), rtol=1e-13)


class TestBiJet:
    def test_layout(self):
        xs, xps = bijet_inputs(np.array([0.3, 0.1]), np.array([0.7, 0.2]), 2)
        lay = xs[0].layout
        assert lay.size == comb(2 + 2, 2) ** 2
        assert xs[0].entry((1, 0), (0, 0)) == 1.0 and xps[1].entry((0, 0), (0, 1)) == 1.0

    def test_product_symmetry(self):
        xs, xps = bijet_inputs(np.array([0.3]), np.array([0.7]), 2)
        k = jet_product(xs[0], xps[0])  # x x'
        assert k.entry((1,), (1,)) == 1.0
        assert k.entry((2,), (0,)) == 0.0
        assert_allclose(k.entry((0,), (1,)), 0.3)


class TestActivations:
    @pytest.mark.parametrize("p", range(1, 7))
    def test_relu_power_smoothness(self, p):
        act = relu_power(p)
        y = np.array([-0.5, 0.0, 0.5])
        d = act.derivatives(y, p)
        # right-continuous convention: all orders below p vanish at 0
        assert_array_equal(d[:p, 1], 0.0)
        assert_allclose(d[0], np.maximum(y, 0) ** p)
        with pytest.raises(ValueError):
            act.derivatives(y, p + 1)

    def test_tanh_derivatives_vs_fd(self):
        act = get_activation("tanh")
        y = np.array([-1.3, 0.2, 0.9])
        d = act.derivatives(y, 6)
        for n in range(1, 5):
            assert_allclose(d[n], [fd_derivative(np.tanh, v, n, 1e-2) for v in y], rtol=1e-5, atol=1e-8)

    def test_unknown(self):
        with pytest.raises(KeyError):
            get_activation("swish")
