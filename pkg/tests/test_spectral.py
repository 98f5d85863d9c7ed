import math

import numpy as np
import pytest
from scipy import linalg

from nrdf.errors import DomainError, ModelError
from nrdf.gauss import GaussMarkovModel, solve
from nrdf.spectral import SpectralDensity, classical_rdf, spectrum_from_model, zero_delay_rate_loss


def ar1_pure():
    return GaussMarkovModel([[0.9]], [[1.0]], [[1.0]], [[0.0]])


def white(sigma):
    return GaussMarkovModel([[0.0]], [[0.0]], [[1.0]], [[sigma]])


class TestSpectrum:
    def test_white_noise_is_flat(self):
        S = spectrum_from_model(white(1.5), grid_size=64).matrices()
        assert np.allclose(S, 2.25, atol=1e-14)

    def test_ar1_closed_form(self, ar1):
        spec = spectrum_from_model(ar1, grid_size=256)
        w = spec.omega
        expected = 1 / (1 - 1.8 * np.cos(w) + 0.81) + 0.01
        got = spec.matrices()[:, 0, 0]
        assert np.allclose(got.real, expected, rtol=1e-12)
        assert np.allclose(got.imag, 0, atol=1e-12)
        assert got[0].real == pytest.approx(100.01, rel=1e-12)
        assert got[-1].real == pytest.approx(1 / 3.61 + 0.01, rel=1e-12)
        assert 1 / 3.61 + 0.01 == pytest.approx(0.28701, abs=1e-5)

    def test_hermitian(self, model2):
        S = spectrum_from_model(model2, grid_size=32).matrices()
        assert np.allclose(S, np.conj(np.swapaxes(S, 1, 2)), atol=1e-13)

    @pytest.mark.parametrize("fixture", ["ar1", "model2"])
    def test_total_power_lyapunov(self, fixture, request):
        model = request.getfixturevalue(fixture)
        Sig = linalg.solve_discrete_lyapunov(model.A, model.B @ model.B.T)
        expected = float(np.trace(model.C @ Sig @ model.C.T + model.N @ model.N.T))
        assert spectrum_from_model(model).total_power() == pytest.approx(expected, abs=1e-6)

    def test_unstable_rejected(self):
        with pytest.raises(ModelError):
            spectrum_from_model(GaussMarkovModel([[1.1]], [[1.0]], [[1.0]], [[0.1]]))

    def test_pointwise_evaluator(self):
        spec = SpectralDensity(lambda w: np.array([[2.0 + math.cos(w)]]), grid_size=1024)
        assert spec.total_power() == pytest.approx(2.0, abs=1e-12)

    def test_small_grid_rejected(self):
        with pytest.raises(DomainError):
            SpectralDensity(lambda w: np.eye(1), grid_size=1)


class TestClassicalRdf:
    @pytest.mark.parametrize("D", [0.1, 0.5, 2.0])
    def test_white(self, D):
        spec = spectrum_from_model(white(math.sqrt(2.0)), grid_size=16)
        assert classical_rdf(spec, D) == pytest.approx(0.5 * math.log2(2.0 / D), abs=1e-12)

    @pytest.mark.parametrize("D", [0.01, 0.1, 0.2, 0.27])
    def test_ar1_anchor(self, D):
        assert 1 / 1.9**2 == pytest.approx(0.27701, abs=1e-5)
        r = classical_rdf(spectrum_from_model(ar1_pure()), D)
        assert abs(r - 0.5 * math.log2(1 / D)) <= 1e-4

    def test_total_power_zero(self, ar1):
        spec = spectrum_from_model(ar1)
        assert classical_rdf(spec, spec.total_power()) == 0.0

    def test_grid_doubling(self, model2):
        spec = spectrum_from_model(model2)
        for D in (0.1, 1.0, 3.0):
            assert abs(classical_rdf(spec, D) - classical_rdf(spec.refined(), D)) < 1e-6

    def test_convex_nonincreasing(self, model2):
        spec = spectrum_from_model(model2, grid_size=2**10)
        grid = np.linspace(0.05, spec.total_power(), 30)
        r = np.array([classical_rdf(spec, D) for D in grid])
        assert np.all(np.diff(r) <= 1e-12)
        assert np.all(r[1:-1] <= 0.5 * (r[:-2] + r[2:]) + 1e-10)

    @pytest.mark.parametrize("D", [0.0, -1.0])
    def test_bad_D(self, D):
        with pytest.raises(DomainError):
            classical_rdf(spectrum_from_model(white(1.0), 8), D)

    @pytest.mark.parametrize("D", [0.1, 0.25, 0.9])
    def test_flat_equals_nrdf(self, memoryless, D):
        r_nc = classical_rdf(spectrum_from_model(memoryless), D)
        assert abs(r_nc - solve(memoryless, D).rate) <= 1e-6


class TestRateLoss:
    def test_memoryless_zero(self, memoryless):
        for D in (0.1, 0.5, 1.0):
            assert abs(zero_delay_rate_loss(memoryless, D)) <= 1e-6

    def test_ar1_positive(self, ar1):
        for D in (0.1, 0.5, 1.0, 3.0):
            assert zero_delay_rate_loss(ar1, D) > 0

    def test_nonnegative_two_dim(self, model2):
        for D in np.linspace(0.1, 3.0, 8):
            assert zero_delay_rate_loss(model2, float(D)) >= -1e-6

    def test_vanishes_at_total_power(self, ar1):
        total = spectrum_from_model(ar1).total_power()
        assert zero_delay_rate_loss(ar1, total + 1e-9) == pytest.approx(0.0, abs=1e-6)
