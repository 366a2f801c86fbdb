import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from pinntk.kernel import KernelSpec, kernel_gram
from pinntk.spectral import (
    GramSpectrum,
    NystromProblem,
    SpectrumError,
    decay_index,
    normalize_spectra,
    nystrom_eigs,
    ratio_bound_check,
    svg_line_chart,
    sym_eigvals,
)


def sine_kernel(coeffs):
    def k(X, Y):
        x, y = X[:, 0][:, None], Y[:, 0][None, :]
        return sum(c * 2 * np.sin(j * np.pi * x) * np.sin(j * np.pi * y) for j, c in enumerate(coeffs, start=1))

    return k


class TestSymEigvals:
    def test_examples(self):
        assert_allclose(sym_eigvals([[2.0, 0.0], [0.0, 1.0]]), [2, 1])
        assert_allclose(sym_eigvals([[1.0, 1.0], [1.0, 1.0]]), [2, 0], atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_trace_identity(self, seed):
        A = np.random.default_rng(seed).normal(size=(20, 20))
        M = A + A.T
        ev = sym_eigvals(M)
        assert np.all(np.diff(ev) <= 0)
        assert_allclose(ev.sum(), np.trace(M), rtol=1e-9, atol=1e-9 * np.abs(ev).max())
        assert_allclose((ev**2).sum(), np.sum(M * M), rtol=1e-9)

    def test_rejects_asymmetric(self):
        with pytest.raises(SpectrumError):
            sym_eigvals([[1.0, 2.0], [0.0, 1.0]])
        with pytest.raises(SpectrumError):
            sym_eigvals(np.ones((2, 3)))

    def test_gram_spectrum(self):
        A = np.random.default_rng(1).normal(size=(15, 6))
        g = GramSpectrum(A @ A.T)
        assert g.reconstruction_error() < 1e-13
        assert_allclose(g.eigenvectors.T @ g.eigenvectors, np.eye(15), atol=1e-10)
        assert np.all(g.eigenvalues >= -1e-8 * g.eigenvalues[0])


class TestNormalize:
    def test_examples(self):
        (a,) = normalize_spectra([[4, 2, 1]])
        assert_allclose(a, [1, 0.5, 0.25])
        (b,) = normalize_spectra([[1.0, 0.3]])
        assert_array_equal(b, [1.0, 0.3])

    @given(st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=10))
    def test_scale_invariant(self, s):
        s = sorted(s, reverse=True)
        assert_allclose(normalize_spectra([np.array(s) * 7])[0], normalize_spectra([s])[0], rtol=1e-14)

    @pytest.mark.parametrize("bad", [[], [0.0, 1.0], [-1.0]])
    def test_rejects(self, bad):
        with pytest.raises(SpectrumError):
            normalize_spectra([bad])


class TestDecayIndex:
    def test_examples(self):
        assert decay_index([1, 0.5, 1e-9], 1e-6) == 3
        assert decay_index([1, 0.5, 1e-9], 2.0) == 1
        eigs = 1.0 / np.arange(1, 1001) ** 2
        assert decay_index(eigs, 1e-4) == 101

    def test_never_crossed(self):
        assert decay_index([1.0, 0.9], 1e-6) == 3


class TestNystrom:
    def test_rank_one_sine(self):
        ev = nystrom_eigs(NystromProblem.midpoint(sine_kernel([1.0]), 200))
        assert abs(ev[0] - 1) <= 1e-3
        assert abs(ev[1]) <= 1e-3

    def test_constant_kernel(self):
        ev = nystrom_eigs(NystromProblem.midpoint(lambda X, Y: np.ones((len(X), len(Y))), 50))
        assert_allclose(ev[0], 1.0, rtol=1e-12)
        assert np.all(np.abs(ev[1:]) < 1e-12)

    def test_spectral_synthesis(self):
        coeffs = [1.0 / k**2 for k in range(1, 6)]
        ev = nystrom_eigs(NystromProblem.midpoint(sine_kernel(coeffs), 200))
        assert_allclose(ev[:5], coeffs, atol=1e-3)
        assert np.all(np.abs(ev[5:]) < 1e-3)

    def test_grid_doubling(self):
        spec = KernelSpec(1, "tanh")
        ev = [nystrom_eigs(NystromProblem.midpoint(lambda X, Y: kernel_gram(spec, X, Y), n))[:20] for n in (200, 400)]
        # below ~1e-14 * lambda_1 the eigenvalues are rounding noise of the dense solve
        resolved = ev[1] > 1e-14 * ev[1][0]
        assert resolved.sum() >= 8
        assert_allclose(ev[0][resolved], ev[1][resolved], rtol=0.01)
        assert np.all(np.abs(ev[0] - ev[1])[~resolved] <= 1e-15 * ev[1][0])

    def test_weights_checked(self):
        k = sine_kernel([1.0])
        with pytest.raises(SpectrumError):
            NystromProblem(k, np.array([0.2, 0.8]), np.array([0.5, -0.5]))
        with pytest.raises(SpectrumError):
            NystromProblem(k, np.array([0.2, 0.8]), np.array([0.5, 0.6]), volume=1.0)


class TestRatioBound:
    def test_equal_spectra(self):
        mu = np.array([3.0, 1.0, 0.2])
        res = ratio_bound_check(mu, mu, 1.0)
        assert res.passed and res.max_ratio == 1.0

    def test_constructed_violation(self):
        mu = np.array([3.0, 1.0, 0.2])
        res = ratio_bound_check(0.5 * mu, mu, 0.5, slack=0.1)
        assert not res.passed
        assert res.bound == pytest.approx(0.275)

    def test_count_and_positivity(self):
        with pytest.raises(SpectrumError):
            ratio_bound_check([1.0, 1.0], [1.0, 0.0], 1.0)
        assert ratio_bound_check([1.0, 1.0], [1.0, 0.0], 1.0, count=1).passed
        with pytest.raises(SpectrumError):
            ratio_bound_check([1.0], [1.0], 1.0, count=2)


def test_svg_chart_is_valid_xml():
    svg = svg_line_chart({"a": [1, 0.1, 1e-3], "b": [1, 0.5]}, title="spectra")
    root = ET.fromstring(svg)
    lines = [e for e in root.iter() if e.tag.endswith("polyline")]
    assert len(lines) == 2
