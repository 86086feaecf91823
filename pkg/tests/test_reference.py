"""
Tests for the reference protocol, rate helpers and piecewise-linear certification.
"""

import dataclasses
import math

import numpy as np
import pytest


class TestOracle:
    """Dense Jacobians and the implicit-derivative oracle."""

    def test_jacobians_of_linear_map(self):
        from fixdiff.maps import linear_map
        from fixdiff.reference import jacobians

        a1 = np.array([[0.1, 0.2], [0.3, 0.4]])
        a2 = np.array([[1.0], [2.0]])
        j1, j2 = jacobians(linear_map(a1, a2), [0.5, -0.5], [1.0])
        np.testing.assert_array_equal(j1, a1)
        np.testing.assert_array_equal(j2, a2)

    def test_oracle_linear(self):
        from fixdiff.maps import linear_map
        from fixdiff.reference import implicit_jacobian_oracle

        a1 = np.array([[0.5, 0.1], [0.0, 0.2]])
        a2 = np.array([[1.0, 0.0], [0.0, 1.0]])
        got = implicit_jacobian_oracle(linear_map(a1, a2), [1.0, 1.0], 10)
        np.testing.assert_allclose(got, np.linalg.inv(np.eye(2) - a1), atol=1e-12)

    def test_oracle_size_limit(self):
        from fixdiff.errors import ArgumentError
        from fixdiff.maps import identity_map
        from fixdiff.reference import ORACLE_MAX_DIM, implicit_jacobian_oracle

        with pytest.raises(ArgumentError):
            implicit_jacobian_oracle(identity_map(ORACLE_MAX_DIM + 1, 1), [0.0], 1)


class TestReferenceVjp:
    """Tests for reference_vjp."""

    def test_budgets_from_contraction(self, contraction_map):
        from fixdiff.reference import reference_iterations, reference_vjp

        y = np.ones(contraction_map.d)
        ref = reference_vjp(contraction_map, [0.3, 0.1], y)
        n_ref = reference_iterations(contraction_map.contraction)
        assert ref.meta["tref"] == n_ref
        assert ref.meta["kref"] == n_ref
        assert ref.method == "reference"
        assert ref.meta["w_ref"].shape == (contraction_map.d,)

    def test_agrees_with_oracle(self, contraction_map):
        from fixdiff.reference import implicit_jacobian_oracle, reference_vjp

        lam = np.array([0.3, 0.1])
        y = np.arange(1.0, contraction_map.d + 1.0)
        ref = reference_vjp(contraction_map, lam, y)
        oracle = implicit_jacobian_oracle(contraction_map, lam, 300)
        np.testing.assert_allclose(ref.value, oracle.T @ y, atol=1e-7)

    def test_explicit_budgets(self, contraction_map):
        from fixdiff.reference import reference_vjp

        ref = reference_vjp(contraction_map, [0.0, 0.0], np.ones(contraction_map.d), t_ref=5, k_ref=7)
        assert (ref.t, ref.k) == (5, 7)

    def test_needs_contraction(self, contraction_map):
        from fixdiff.errors import ArgumentError
        from fixdiff.reference import reference_vjp

        mp = dataclasses.replace(contraction_map, lipschitz=None)
        with pytest.raises(ArgumentError):
            reference_vjp(mp, [0.0, 0.0], np.ones(mp.d))

    def test_iterations(self):
        from fixdiff.reference import reference_iterations

        assert reference_iterations(0.5, 1e-3) == 10
        assert reference_iterations(0.999999, cap=50) == 50


class TestRates:
    def test_finite_diff(self):
        from fixdiff.reference import finite_diff_hypergrad

        grad = finite_diff_hypergrad(lambda x: float(x[0] ** 2 + 3.0 * x[1]), [1.0, 2.0])
        np.testing.assert_allclose(grad, [2.0, 3.0], atol=1e-8)

    def test_finite_diff_errors(self):
        from fixdiff.errors import ArgumentError, NonFiniteError
        from fixdiff.reference import finite_diff_hypergrad

        with pytest.raises(ArgumentError):
            finite_diff_hypergrad(lambda x: 0.0, [1.0], h=0.0)
        with pytest.raises(NonFiniteError):
            finite_diff_hypergrad(lambda x: math.inf, [1.0])

    def test_local_contraction(self):
        from fixdiff.maps import linear_map
        from fixdiff.reference import local_contraction

        mp = linear_map(np.diag([0.7, 0.2, -0.1]), np.ones((3, 1)))
        assert local_contraction(mp, np.zeros(3), [0.0]) == pytest.approx(0.7, rel=1e-9)

    def test_local_contraction_nilpotent(self):
        from fixdiff.maps import linear_map
        from fixdiff.reference import local_contraction

        mp = linear_map(np.array([[0.0, 1.0], [0.0, 0.0]]), np.ones((2, 1)))
        assert local_contraction(mp, np.zeros(2), [0.0]) == 0.0

    def test_log_slope(self):
        from fixdiff.reference import log_slope

        ns = np.arange(1, 11)
        assert log_slope(ns, 3.0 * 0.5**ns) == pytest.approx(math.log(0.5))

    def test_log_slope_errors(self):
        from fixdiff.errors import ArgumentError
        from fixdiff.reference import log_slope

        with pytest.raises(ArgumentError):
            log_slope([1], [0.1])
        with pytest.raises(ArgumentError):
            log_slope([1, 2], [0.1, 0.0])

    def test_rate_constants(self):
        from fixdiff.maps import linear_map
        from fixdiff.reference import rate_constants

        mp = linear_map([[0.5]], [[2.0]])
        rc = rate_constants(mp, [1.0], [4.0])
        assert rc.q == pytest.approx(0.5)
        assert rc.kappa == pytest.approx(2.0)
        assert rc.b_hat == pytest.approx(2.0)
        assert rc.L == 0.0
        assert rc.tau is None


class TestCertifyPwl:
    """Tests for certify_pwl_bound."""

    def test_scalar_linear(self):
        from fixdiff.maps import linear_map
        from fixdiff.reference import certify_pwl_bound

        report = certify_pwl_bound(linear_map([[0.5]], [[1.0]]), [1.0], t=10)
        assert report.applicable
        assert report.passed
        assert len(report.checks) == 31
        assert all(line.endswith("ok") for line in report.lines())

    def test_relu_after_identification(self):
        """w = 0.5 relu(w) + (1, -1) lam identifies its pieces after one step."""
        from fixdiff.maps import relu_linear_map
        from fixdiff.reference import certify_pwl_bound

        mp = relu_linear_map(0.5 * np.eye(2), np.array([[1.0], [-1.0]]))
        report = certify_pwl_bound(mp, [1.0], t=20)
        assert report.applicable
        assert report.constants.tau == 1
        assert report.details["radius"] == pytest.approx(1.0)
        assert report.passed

    def test_fixed_point_on_kink(self):
        """w = 0.5 relu(w) at lam = 0 sits on the kink; the ITD bound has no radius."""
        from fixdiff.maps import relu_linear_map
        from fixdiff.reference import certify_pwl_bound

        report = certify_pwl_bound(relu_linear_map(0.5 * np.eye(1), [[1.0]]), [0.0], t=10)
        assert not report.applicable
        assert not report.passed
        assert report.reason == "fixed point lies on a kink"
        assert report.details["radius"] == 0.0
        assert report.lines() == ["not applicable: fixed point lies on a kink"]

    def test_missing_kink_distance(self):
        from fixdiff.maps import relu_linear_map
        from fixdiff.reference import certify_pwl_bound

        mp = relu_linear_map(0.5 * np.eye(2), np.array([[1.0], [-1.0]]))
        meta = {k: v for k, v in mp.meta.items() if k != "kink_distance"}
        report = certify_pwl_bound(dataclasses.replace(mp, meta=meta), [1.0], t=20)
        assert not report.applicable
        assert report.reason == "kink distance unavailable"
        assert report.constants.tau == 1

    def test_not_applicable_on_smooth_map(self, contraction_map):
        from fixdiff.reference import certify_pwl_bound

        report = certify_pwl_bound(contraction_map, [0.0, 0.0], t=10)
        assert not report.applicable
        assert not report.passed
        assert report.lines()[0].startswith("not applicable")

    def test_t_before_identification(self):
        from fixdiff.maps import relu_linear_map
        from fixdiff.reference import certify_pwl_bound

        mp = relu_linear_map(0.5 * np.eye(2), np.array([[1.0], [-1.0]]))
        report = certify_pwl_bound(mp, [1.0], t=0)
        assert not report.applicable
