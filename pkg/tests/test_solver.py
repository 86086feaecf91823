"""
Tests for fixed-point solving, step sizes and support identification.
"""

import numpy as np
import pytest


def scalar_linear(q: float = 0.5, b: float = 1.0):
    from fixdiff.maps import linear_map

    return linear_map([[q]], [[b]])


class TestFixedPointSolve:
    """Tests for fixed_point_solve and Trajectory."""

    def test_converges_to_fixed_point(self):
        """w = 0.5 w + lam has fixed point 2 lam."""
        from fixdiff.solver import fixed_point_solve

        traj = fixed_point_solve(scalar_linear(), [1.5], [0.0], 80)
        assert traj.w_t[0] == pytest.approx(3.0, abs=1e-12)
        assert traj.iterates.shape == (81, 1)
        assert len(traj) == 81

    def test_residuals_shrink_geometrically(self):
        from fixdiff.solver import fixed_point_solve

        traj = fixed_point_solve(scalar_linear(0.5), [1.0], [0.0], 10)
        ratios = traj.residuals[1:] / traj.residuals[:-1]
        np.testing.assert_allclose(ratios, 0.5)

    def test_unrecorded_keeps_endpoints(self):
        from fixdiff.solver import fixed_point_solve

        traj = fixed_point_solve(scalar_linear(), [1.0], [5.0], 30, record=False)
        assert traj.iterates.shape == (2, 1)
        assert traj.w_0[0] == 5.0
        assert not traj.recorded

    def test_zero_steps(self):
        from fixdiff.solver import fixed_point_solve

        traj = fixed_point_solve(scalar_linear(), [1.0], [0.25], 0)
        assert traj.t == 0
        assert traj.w_t[0] == 0.25

    def test_negative_t(self):
        from fixdiff.errors import ArgumentError
        from fixdiff.solver import fixed_point_solve

        with pytest.raises(ArgumentError):
            fixed_point_solve(scalar_linear(), [1.0], [0.0], -1)

    def test_divergence(self):
        """An expanding map overflows and reports the iteration."""
        from fixdiff.errors import DivergenceError
        from fixdiff.solver import fixed_point_solve

        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(DivergenceError) as exc:
                fixed_point_solve(scalar_linear(1e100), [1.0], [1.0], 10)
        assert exc.value.iteration >= 1

    def test_head(self):
        from fixdiff.errors import ArgumentError
        from fixdiff.solver import fixed_point_solve

        traj = fixed_point_solve(scalar_linear(), [1.0], [0.0], 20)
        head = traj.head(5)
        assert head.t == 5
        np.testing.assert_array_equal(head.w_t, traj.iterates[5])
        with pytest.raises(ArgumentError):
            traj.head(21)
        with pytest.raises(ArgumentError):
            fixed_point_solve(scalar_linear(), [1.0], [0.0], 20, record=False).head(3)


class TestStepSizes:
    """Tests for the proximal-gradient step size and contraction constant."""

    def test_formula(self):
        """eta = 2 / (c(L + mu) + 2 lam2), q = (L - mu) / (L + mu + 2 lam2 / c)."""
        from fixdiff.solver import step_size_from_eigs

        eta, q = step_size_from_eigs(3.0, 1.0, 0.5, 2.0)
        assert eta == pytest.approx(2.0 / 9.0)
        assert q == pytest.approx(abs(1.0 - eta * 6.5))
        assert q == pytest.approx(abs(1.0 - eta * 2.5))

    def test_ridge_gives_contraction_on_rank_deficient_design(self):
        from fixdiff.linalg import Rng
        from fixdiff.solver import ista_step_size

        x = Rng(0).gaussian(50).reshape(5, 10)
        _, q_plain = ista_step_size(x, 0.0, 2.0)
        _, q_ridge = ista_step_size(x, 1.0, 2.0)
        assert q_plain == pytest.approx(1.0, abs=1e-6)
        assert q_ridge < 1.0

    def test_rejects_bad_constants(self):
        from fixdiff.errors import ArgumentError
        from fixdiff.solver import step_size_from_eigs

        with pytest.raises(ArgumentError):
            step_size_from_eigs(1.0, 0.5, 0.0, 0.0)
        with pytest.raises(ArgumentError):
            step_size_from_eigs(1.0, 0.5, -1.0, 1.0)
        with pytest.raises(ArgumentError):
            step_size_from_eigs(0.0, 0.0, 0.0, 1.0)

    def test_iterations_for_accuracy(self):
        from fixdiff.errors import ArgumentError
        from fixdiff.solver import iterations_for_accuracy

        assert iterations_for_accuracy(0.5, 1e-3) == 10
        assert iterations_for_accuracy(0.0) == 1
        assert iterations_for_accuracy(0.999999, 1e-10, cap=500) == 500
        with pytest.raises(ArgumentError):
            iterations_for_accuracy(1.0)


class TestEstimateQ:
    def test_linear_map(self):
        """On a linear map the estimate recovers the operator norm."""
        from fixdiff.linalg import Rng
        from fixdiff.maps import linear_map
        from fixdiff.solver import estimate_q

        mp = linear_map(np.diag([0.7, 0.2, -0.1]), np.ones((3, 1)))
        est = estimate_q(mp, [0.0], samples=4, rng=Rng(1), power_steps=50)
        assert est.heuristic
        assert float(est) == pytest.approx(0.7, rel=1e-3)

    def test_samples_required(self):
        from fixdiff.errors import ArgumentError
        from fixdiff.linalg import Rng
        from fixdiff.solver import estimate_q

        with pytest.raises(ArgumentError):
            estimate_q(scalar_linear(), [0.0], 0, Rng(0))


class TestSupportIdentification:
    """Tests for support_identification."""

    def test_ista_identifies_support(self, small_elastic):
        from fixdiff.solver import fixed_point_solve, support_identification, support_pattern

        prob, lam = small_elastic
        traj = fixed_point_solve(prob.phi, lam, np.zeros(prob.phi.d), 400)
        w_ref = fixed_point_solve(prob.phi, lam, np.zeros(prob.phi.d), 3000, record=False).w_t
        tau = support_identification(traj, w_ref)
        assert tau is not None
        for w in traj.iterates[tau:]:
            np.testing.assert_array_equal(support_pattern(w), support_pattern(w_ref))

    def test_mismatch_at_end(self):
        from fixdiff.solver import Trajectory, support_identification

        iterates = np.array([[1.0, 0.0], [1.0, 1.0]])
        traj = Trajectory(iterates, np.ones(1), np.zeros(1), 1, True)
        assert support_identification(traj, np.array([1.0, 0.0])) is None

    def test_custom_pattern(self):
        """A relu piece pattern replaces the zero pattern."""
        from fixdiff.solver import Trajectory, support_identification

        iterates = np.array([[-1.0], [0.5], [-0.2], [0.3], [0.4]])
        traj = Trajectory(iterates, np.ones(4), np.zeros(1), 4, True)
        assert support_identification(traj, np.array([1.0]), pattern_fn=lambda w: np.asarray(w) > 0) == 3

    def test_requires_recorded(self):
        from fixdiff.errors import ArgumentError
        from fixdiff.solver import fixed_point_solve, support_identification

        traj = fixed_point_solve(scalar_linear(), [1.0], [0.0], 5, record=False)
        with pytest.raises(ArgumentError):
            support_identification(traj, np.array([2.0]))
