import math

import mpmath
import numpy as np
import pytest

from nrdf.bsms import nrdf, optimal_kernel
from nrdf.errors import ConvergenceError, DegenerateChainError, DomainError, InfeasibleCertificateError
from nrdf.iterative import (
    FiniteKernelPair,
    FiniteMarkovSource,
    certify,
    directed_information,
    dual_certificate_value,
    evaluate_kernel,
    hamming_distortion,
    max_distortion,
    primal_multipliers,
    solve_for_distortion,
    solve_stationary,
    trivial_certificate,
)

mpmath.mp.dps = 40
RHO = hamming_distortion(2)


def h_mp(p):
    p = mpmath.mpf(p)
    return float(-p * mpmath.log(p, 2) - (1 - p) * mpmath.log(1 - p, 2))


def bsms(p):
    return FiniteMarkovSource.binary_symmetric(p)


def three_letter():
    T = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.3, 0.3, 0.4]])
    return FiniteMarkovSource(T)


class TestSourceValidation:
    def test_rows_must_sum_to_one(self):
        with pytest.raises(DomainError):
            FiniteMarkovSource(np.array([[0.5, 0.4], [0.5, 0.5]]))

    def test_initial_must_be_stationary(self):
        with pytest.raises(DomainError):
            FiniteMarkovSource(np.array([[0.9, 0.1], [0.1, 0.9]]), initial=np.array([0.9, 0.1]))

    def test_reducible_chain(self):
        with pytest.raises(DegenerateChainError):
            FiniteMarkovSource(np.eye(2))

    def test_stationary_initial(self):
        src = three_letter()
        assert np.allclose(src.initial @ src.transition, src.initial, atol=1e-14)


class TestSolveStationary:
    def test_closed_form_example(self):
        expected = h_mp("0.64") - h_mp("0.15")
        assert expected == pytest.approx(0.332843, abs=1e-6)
        sol = solve_for_distortion(bsms(0.3), RHO, 0.15)
        assert sol.distortion == pytest.approx(0.15, abs=1e-9)
        assert abs(sol.rate - expected) <= 1e-3
        assert sol.rate == pytest.approx(expected, abs=1e-8)

    def test_zero_tilt_decouples(self):
        sol = solve_stationary(bsms(0.25), RHO, 0.0)
        q, nu = sol.kernel.q_kernel, sol.kernel.nu_kernel
        for x in range(2):
            assert np.allclose(q[:, x, :], nu, atol=1e-14)
        assert sol.rate == pytest.approx(0.0, abs=1e-12)
        assert sol.distortion == pytest.approx(max_distortion(bsms(0.25), RHO), abs=1e-12)

    def test_iid_uniform(self):
        expected = 1 - h_mp("0.25")
        assert expected == pytest.approx(0.188722, abs=1e-6)
        sol = solve_for_distortion(FiniteMarkovSource.iid([0.5, 0.5]), RHO, 0.25)
        assert sol.rate == pytest.approx(expected, abs=1e-8)

    def test_tilt_shape(self):
        sol = solve_stationary(three_letter(), hamming_distortion(3), -1.7)
        k = sol.kernel
        resid = (np.log(k.q_kernel) - np.log(k.nu_kernel)[:, None, :]
                 - k.s * k.distortion_matrix[None, :, :])
        spread = resid.max(axis=2) - resid.min(axis=2)
        assert spread.max() <= 1e-12
        assert np.allclose(k.q_kernel.sum(axis=2), 1.0, atol=1e-14)
        assert np.allclose(k.nu_kernel.sum(axis=1), 1.0, atol=1e-14)

    def test_positive_s_rejected(self):
        with pytest.raises(DomainError):
            solve_stationary(bsms(0.25), RHO, 0.5)

    def test_non_convergence_reported(self):
        with pytest.raises(ConvergenceError) as info:
            solve_stationary(bsms(0.25), RHO, -1.0, max_iter=2, tol=1e-15)
        assert info.value.iterations == 2
        assert info.value.residual > 0

    @pytest.mark.parametrize("src,rho", [(bsms(0.25), RHO), (three_letter(), hamming_distortion(3))])
    def test_monotone_in_s(self, src, rho):
        sols = [solve_stationary(src, rho, s) for s in np.linspace(-6, 0, 25)]
        d = np.array([x.distortion for x in sols])
        r = np.array([x.rate for x in sols])
        assert np.all(np.diff(d) >= -1e-10)
        assert np.all(np.diff(r) <= 1e-10)

    def test_memory_two_agrees(self):
        s = math.log(0.1 / 0.9)
        a = solve_stationary(bsms(0.25), RHO, s)
        b = solve_stationary(bsms(0.25), RHO, s, memory=2)
        assert b.kernel.q_kernel.shape == (4, 2, 2)
        assert b.rate == pytest.approx(a.rate, abs=1e-8)
        assert b.distortion == pytest.approx(a.distortion, abs=1e-8)

    def test_evaluate_closed_form_kernel(self):
        q = optimal_kernel(0.25, 0.1).as_array()
        _, D, R = evaluate_kernel(bsms(0.25), q, RHO)
        assert D == pytest.approx(0.1, abs=1e-12)
        assert R == pytest.approx(nrdf(0.25, 0.1), abs=1e-12)


class TestSolveForDistortion:
    def test_bsms_example(self):
        sol = solve_for_distortion(bsms(0.25), RHO, 0.1)
        assert sol.rate == pytest.approx(h_mp("0.7") - h_mp("0.1"), abs=1e-8)
        assert sol.kernel.s < 0

    def test_d_max(self):
        src = bsms(0.25)
        sol = solve_for_distortion(src, RHO, max_distortion(src, RHO))
        assert sol.rate == 0.0

    def test_iid_half(self):
        sol = solve_for_distortion(bsms(0.5), RHO, 0.2)
        assert sol.rate == pytest.approx(1 - h_mp("0.2"), abs=1e-8)
        assert sol.rate == pytest.approx(0.278072, abs=1e-6)

    def test_zero_distortion(self):
        sol = solve_for_distortion(bsms(0.3), RHO, 0.0)
        assert sol.distortion == pytest.approx(0.0, abs=1e-15)
        assert sol.rate == pytest.approx(h_mp("0.3"), abs=1e-10)

    def test_negative_target(self):
        with pytest.raises(DomainError):
            solve_for_distortion(bsms(0.3), RHO, -0.1)

    def test_convex_nonincreasing(self):
        src, rho = three_letter(), hamming_distortion(3)
        grid = np.linspace(0.02, 0.5, 17)
        r = np.array([solve_for_distortion(src, rho, D).rate for D in grid])
        assert np.all(np.diff(r) <= 1e-9)
        assert np.all(r[1:-1] <= 0.5 * (r[:-2] + r[2:]) + 1e-8)

    def test_rate_below_entropy_rate(self):
        src, rho = three_letter(), hamming_distortion(3)
        P, pi = src.transition, src.initial
        h = -float(np.sum(pi[:, None] * P * np.log2(P)))
        for D in (0.01, 0.1, 0.3):
            sol = solve_for_distortion(src, rho, D)
            assert 0 < sol.rate < h
            assert sol.kernel.s < 0


class TestDualCertificate:
    def test_trivial_value(self):
        src = bsms(0.25)
        ref = solve_for_distortion(src, RHO, 0.1).kernel
        cert = trivial_certificate(src, RHO, 2, ref)
        assert cert.value == 0.0

    def test_iid_single_letter_brute_force(self):
        """Grid search over s with the symmetric multiplier at its feasibility boundary."""
        src = FiniteMarkovSource.iid([0.5, 0.5])
        ref = solve_stationary(src, RHO, 0.0).kernel
        D = 0.2
        best = -math.inf
        for s in np.linspace(-5, 0, 5001):
            c = 2.0 / (1.0 + math.exp(s))
            lam = [np.full((2, 2), c)]
            best = max(best, dual_certificate_value(src, RHO, D, 0, s, lam, ref).value)
        assert best == pytest.approx(1 - h_mp("0.2"), abs=1e-6)

    def test_iid_boundary_is_tight(self):
        src = FiniteMarkovSource.iid([0.5, 0.5])
        ref = solve_stationary(src, RHO, 0.0).kernel
        s = math.log(0.2 / 0.8)
        c = 2.0 / (1.0 + math.exp(s))
        with pytest.raises(InfeasibleCertificateError):
            dual_certificate_value(src, RHO, 0.2, 0, s, [np.full((2, 2), c * (1 + 1e-9))], ref)

    @pytest.mark.parametrize("n", [0, 1, 2, 3, 4])
    def test_primal_built_multipliers(self, n):
        src = bsms(0.25)
        sol = solve_for_distortion(src, RHO, 0.1)
        lam = primal_multipliers(sol, n)
        cert = dual_certificate_value(src, RHO, 0.1, n, sol.kernel.s, lam, sol.kernel)
        primal = directed_information(src, sol.kernel, n)
        assert primal == pytest.approx((n + 1) * (h_mp("0.7") - h_mp("0.1")), abs=1e-7)
        assert cert.value <= primal + 1e-9
        assert abs(cert.value - primal) <= 1e-6

    def test_scaling_property(self):
        src = bsms(0.25)
        sol = solve_for_distortion(src, RHO, 0.1)
        n = 2
        lam = primal_multipliers(sol, n)
        base = dual_certificate_value(src, RHO, 0.1, n, sol.kernel.s, lam, sol.kernel)
        for c in (0.9, 0.5, 0.1):
            scaled = dual_certificate_value(src, RHO, 0.1, n, sol.kernel.s,
                                            [c * L for L in lam], sol.kernel)
            assert scaled.value == pytest.approx(base.value + (n + 1) * math.log2(c), abs=1e-12)

    def test_infeasible_rejected_with_location(self):
        src = bsms(0.25)
        sol = solve_for_distortion(src, RHO, 0.1)
        lam = primal_multipliers(sol, 1)
        lam[1] = lam[1] * 1.01
        with pytest.raises(InfeasibleCertificateError) as info:
            dual_certificate_value(src, RHO, 0.1, 1, sol.kernel.s, lam, sol.kernel)
        assert info.value.stage == 1
        assert len(info.value.index) == 3
        assert info.value.excess == pytest.approx(0.01, rel=1e-6)

    def test_wrong_stage_count(self):
        src = bsms(0.25)
        ref = solve_stationary(src, RHO, 0.0).kernel
        with pytest.raises(DomainError):
            dual_certificate_value(src, RHO, 0.1, 2, -1.0, [np.ones((2, 2))], ref)


class TestCertify:
    def test_matched_instance(self):
        src = bsms(0.25)
        sol = solve_for_distortion(src, RHO, 0.1)
        cert = dual_certificate_value(src, RHO, 0.1, 3, sol.kernel.s, primal_multipliers(sol, 3), sol.kernel)
        rep = certify(sol, cert)
        assert rep.optimal and rep.gap <= 1e-6 and rep.gap >= -1e-9

    def test_trivial_dual_gap_is_primal(self):
        src = bsms(0.25)
        sol = solve_for_distortion(src, RHO, 0.1)
        cert = trivial_certificate(src, RHO, 1, sol.kernel)
        rep = certify(sol, cert)
        assert rep.gap == pytest.approx(rep.primal_value, abs=1e-15)
        assert not rep.optimal

    def test_d_max_zero_gap(self):
        src = bsms(0.25)
        sol = solve_for_distortion(src, RHO, max_distortion(src, RHO))
        rep = certify(sol, trivial_certificate(src, RHO, 2, sol.kernel))
        assert rep.primal_value == 0 and rep.dual_value == 0 and rep.gap == 0

    def test_mismatched_problem(self):
        sol = solve_for_distortion(bsms(0.25), RHO, 0.1)
        other = bsms(0.3)
        cert = trivial_certificate(other, RHO, 0, sol.kernel)
        with pytest.raises(DomainError):
            certify(sol, cert)


def test_kernel_pair_normalizer():
    nu = np.array([[0.6, 0.4], [0.3, 0.7]])
    s = -1.2
    z = np.exp(s * RHO)[None] * nu[:, None, :]
    q = z / z.sum(axis=2, keepdims=True)
    pair = FiniteKernelPair(q, nu, s, RHO)
    assert np.allclose(pair.normalizer, z.sum(axis=2), atol=1e-15)
