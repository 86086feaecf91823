"""
Tests for hypergradients, validation losses and the outer loop.
"""

import numpy as np
import pytest

from fixdiff.linalg import Rng


def quadratic_upper(d: int, m: int, target):
    """E(w, lam) = 0.5 ||w - target||^2 + 0.5 ||lam||^2."""
    from fixdiff.bilevel import UpperLevel

    target = np.asarray(target, dtype=np.float64)
    return UpperLevel.from_functions(
        d,
        m,
        lambda w, lam: 0.5 * float((w - target) @ (w - target)) + 0.5 * float(lam @ lam),
        lambda w, lam: w - target,
        lambda w, lam: lam,
        name="quadratic",
    )


def linear_setup(seed: int = 0, d: int = 4, m: int = 2, q: float = 0.5):
    from fixdiff.maps import linear_map

    rng = Rng(seed)
    a1 = rng.gaussian(d * d).reshape(d, d)
    a1 *= q / np.linalg.norm(a1, 2)
    a2 = rng.gaussian(d * m).reshape(d, m)
    sens = np.linalg.solve(np.eye(d) - a1, a2)
    return linear_map(a1, a2), sens, rng.gaussian(m), rng.gaussian(d)


class TestHypergradients:
    """bitd_hypergrad and baid_fp_hypergrad against closed forms."""

    def test_linear_closed_form(self):
        """grad f = S^T (S lam - c) + lam with S = (I - A1)^-1 A2."""
        from fixdiff.bilevel import baid_fp_hypergrad, bitd_hypergrad
        from fixdiff.solver import fixed_point_solve

        mp, sens, lam, target = linear_setup()
        upper = quadratic_upper(mp.d, mp.m, target)
        exact = sens.T @ (sens @ lam - target) + lam
        traj = fixed_point_solve(mp, lam, np.zeros(mp.d), 150)
        np.testing.assert_allclose(bitd_hypergrad(upper, mp, traj, lam), exact, atol=1e-9)
        np.testing.assert_allclose(baid_fp_hypergrad(upper, mp, traj.w_t, lam, 150), exact, atol=1e-9)

    def test_matches_finite_differences_on_smooth_map(self, contraction_map):
        from fixdiff.bilevel import baid_fp_hypergrad
        from fixdiff.reference import finite_diff_hypergrad
        from fixdiff.solver import fixed_point_solve

        mp = contraction_map
        upper = quadratic_upper(mp.d, mp.m, np.ones(mp.d))
        lam = np.array([0.2, -0.4])

        def f(x):
            w = fixed_point_solve(mp, x, np.zeros(mp.d), 200, record=False).w_t
            return upper.value(w, x)

        w = fixed_point_solve(mp, lam, np.zeros(mp.d), 200, record=False).w_t
        np.testing.assert_allclose(baid_fp_hypergrad(upper, mp, w, lam, 200), finite_diff_hypergrad(f, lam), atol=1e-6)


class TestValidationLosses:
    def test_square_loss_gradient(self):
        from fixdiff.bilevel import validation_square_loss
        from fixdiff.reference import finite_diff_hypergrad

        rng = Rng(2)
        x, y = rng.gaussian(30).reshape(10, 3), rng.gaussian(10)
        upper = validation_square_loss(x, y)
        w = rng.gaussian(3)
        fd = finite_diff_hypergrad(lambda v: upper.value(v, np.zeros(2)), w)
        np.testing.assert_allclose(upper.grad_w(w, np.zeros(2)), fd, atol=1e-6)
        np.testing.assert_array_equal(upper.grad_lam(w, np.zeros(2)), np.zeros(2))

    def test_square_loss_token_selects_rows(self):
        from fixdiff.bilevel import validation_square_loss

        x = np.eye(3)
        y = np.array([1.0, 2.0, 3.0])
        upper = validation_square_loss(x, y, batch_size=1)
        assert upper.value(np.zeros(3), np.zeros(2), np.array([1])) == pytest.approx(4.0)
        assert upper.sampler is not None

    def test_cross_entropy_gradient(self):
        from fixdiff.bilevel import validation_cross_entropy
        from fixdiff.reference import finite_diff_hypergrad

        rng = Rng(3)
        x = rng.gaussian(16).reshape(8, 2)
        labels = rng.integers(8, 3)
        upper = validation_cross_entropy(x, labels, 3, m=4)
        w = rng.gaussian(6)
        fd = finite_diff_hypergrad(lambda v: upper.value(v, np.zeros(4)), w)
        np.testing.assert_allclose(upper.grad_w(w, np.zeros(4)), fd, atol=1e-6)

    def test_cross_entropy_uniform(self):
        """Zero weights give log(c) loss."""
        from fixdiff.bilevel import validation_cross_entropy

        upper = validation_cross_entropy(np.ones((4, 2)), [0, 1, 2, 0], 3, m=1)
        assert upper.value(np.zeros(6), [0.0]) == pytest.approx(np.log(3.0))

    def test_cross_entropy_bad_label(self):
        from fixdiff.bilevel import validation_cross_entropy
        from fixdiff.errors import ArgumentError

        with pytest.raises(ArgumentError):
            validation_cross_entropy(np.ones((2, 2)), [0, 3], 3, m=1)

    def test_batch_grads_average(self):
        from fixdiff.bilevel import validation_square_loss

        x = np.eye(2)
        y = np.array([1.0, -1.0])
        upper = validation_square_loss(x, y)
        gw, gl = upper.batch_grads(np.zeros(2), np.zeros(2), [np.array([0]), np.array([1])])
        np.testing.assert_allclose(gw, [-1.0, 1.0])
        np.testing.assert_array_equal(gl, np.zeros(2))


class TestNSIDBilevel:
    """Tests for nsid_bilevel."""

    def test_zero_variance_matches_baid(self, small_elastic):
        from fixdiff.bilevel import baid_fp_hypergrad, nsid_bilevel
        from fixdiff.maps import StochasticMapSelection
        from fixdiff.solver import fixed_point_solve
        from fixdiff.stochastic import SampleStreams, StepSchedule

        prob, lam = small_elastic
        w = fixed_point_solve(prob.phi, lam, np.zeros(prob.phi.d), 200, record=False).w_t
        that = StochasticMapSelection.from_deterministic(prob.T)
        streams = SampleStreams.draw(that, 0, k=30, J=1)
        got = nsid_bilevel(prob.upper, that, prob.G, w, lam, 30, 1, 1, StepSchedule.constant(1.0), streams, [None])
        np.testing.assert_allclose(got, baid_fp_hypergrad(prob.upper, prob.phi, w, lam, 30), atol=1e-12)

    def test_short_zeta(self, small_elastic):
        from fixdiff.bilevel import nsid_bilevel
        from fixdiff.errors import ArgumentError
        from fixdiff.stochastic import SampleStreams, StepSchedule

        prob, lam = small_elastic
        streams = SampleStreams.draw(prob.that, 0, k=10, J=10)
        with pytest.raises(ArgumentError, match="zeta"):
            nsid_bilevel(
                prob.upper, prob.that, prob.G, np.zeros(prob.phi.d), lam, 10, 5, 10,
                StepSchedule.constant(0.5), streams, [None] * 2,
            )
        with pytest.raises(ArgumentError):
            nsid_bilevel(
                prob.upper, prob.that, prob.G, np.zeros(prob.phi.d), lam, 10, 0, 10,
                StepSchedule.constant(0.5), streams, [None],
            )


class TestOuterLoop:
    """Tests for outer_loop and the projections."""

    def test_descent_reaches_minimum(self):
        from fixdiff.bilevel import outer_loop, project_box

        def fg(lam):
            return float((lam[0] - 3.0) ** 2), 2.0 * (lam - 3.0)

        trace = outer_loop([0.0], fg, project_box(-10.0, 10.0), 100, 0.1)
        assert len(trace) == 101
        assert trace[-1].lam[0] == pytest.approx(3.0, abs=1e-6)
        assert trace[-1].value <= trace[0].value

    def test_projection_is_applied(self):
        from fixdiff.bilevel import outer_loop, project_nonnegative

        def fg(lam):
            return float((lam[0] + 3.0) ** 2), 2.0 * (lam + 3.0)

        trace = outer_loop([1.0], fg, project_nonnegative, 50, 0.1)
        assert trace[-1].lam[0] == 0.0

    def test_ascent(self):
        from fixdiff.bilevel import outer_loop, project_box

        def fg(lam):
            return -float((lam[0] - 0.05) ** 2), -2.0 * (lam - 0.05)

        trace = outer_loop([-0.1], fg, project_box(-0.1, 0.1), 200, 0.2, maximize=True)
        assert trace[-1].lam[0] == pytest.approx(0.05, abs=1e-6)

    def test_zero_steps(self):
        from fixdiff.bilevel import outer_loop, project_nonnegative

        trace = outer_loop([2.0], lambda lam: (1.0, np.zeros(1)), project_nonnegative, 0, 0.1)
        assert len(trace) == 1
        assert trace[0].lam[0] == 2.0

    def test_bad_arguments(self):
        from fixdiff.bilevel import outer_loop, project_box, project_nonnegative
        from fixdiff.errors import ArgumentError

        with pytest.raises(ArgumentError):
            outer_loop([0.0], lambda lam: (0.0, lam), project_nonnegative, -1, 0.1)
        with pytest.raises(ArgumentError):
            outer_loop([0.0], lambda lam: (0.0, lam), project_nonnegative, 5, 0.0)
        with pytest.raises(ArgumentError):
            project_box(1.0, -1.0)

    def test_non_finite_lam(self):
        from fixdiff.bilevel import outer_loop
        from fixdiff.errors import NonFiniteError

        with pytest.raises(NonFiniteError):
            outer_loop([np.nan], lambda lam: (0.0, lam), lambda lam: lam, 1, 0.1)
