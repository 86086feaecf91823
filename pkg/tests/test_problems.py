"""
Tests for the synthetic problems.
"""

import numpy as np
import pytest


class TestDataset:
    def test_shape_checks(self):
        from fixdiff.errors import ShapeError
        from fixdiff.problems import Dataset

        with pytest.raises(ShapeError):
            Dataset(np.ones(3), np.ones(3))
        with pytest.raises(ShapeError):
            Dataset(np.ones((3, 2)), np.ones(2))

    def test_label_range(self):
        from fixdiff.errors import ArgumentError
        from fixdiff.problems import Dataset

        with pytest.raises(ArgumentError):
            Dataset(np.ones((2, 2)), np.array([0, 2]), n_classes=2)

    def test_subset(self):
        from fixdiff.problems import Dataset

        ds = Dataset(np.arange(6.0).reshape(3, 2), np.array([0, 1, 0]), 2)
        sub = ds.subset([2, 0], "val")
        assert sub.tag == "val"
        np.testing.assert_array_equal(sub.X, [[4.0, 5.0], [0.0, 1.0]])
        np.testing.assert_array_equal(sub.labels, [0, 0])


class TestElasticNet:
    """Tests for gen_elastic_net, lambda_max and build_elastic_net."""

    def test_generator_shapes(self):
        from fixdiff.problems import gen_elastic_net

        train, val, w_true = gen_elastic_net(0, n=20, d=10, n_informative=3)
        assert train.X.shape == (20, 10)
        assert val.X.shape == (40, 10)
        assert np.all(w_true[3:] == 0.0)
        assert np.count_nonzero(w_true[:3]) == 3

    def test_generator_deterministic(self):
        from fixdiff.problems import gen_elastic_net

        a = gen_elastic_net(4, n=10, d=5, n_informative=2, correlated=True)
        b = gen_elastic_net(4, n=10, d=5, n_informative=2, correlated=True)
        np.testing.assert_array_equal(a[0].X, b[0].X)
        np.testing.assert_array_equal(a[1].targets, b[1].targets)

    def test_generator_bad_args(self):
        from fixdiff.errors import ArgumentError
        from fixdiff.problems import gen_elastic_net

        with pytest.raises(ArgumentError):
            gen_elastic_net(0, n=10, d=5, n_informative=6)
        with pytest.raises(ArgumentError):
            gen_elastic_net(0, n=0, d=5, n_informative=1)

    def test_lambda_max_zeroes_solution(self):
        """At lam1 = lambda_max the ISTA iterates never leave zero."""
        from fixdiff.problems import build_elastic_net, gen_elastic_net, lambda_max, support_size
        from fixdiff.solver import fixed_point_solve

        train, val, _ = gen_elastic_net(1, n=40, d=8, n_informative=3)
        lmax = lambda_max(train)
        prob = build_elastic_net(train, val, [lmax, 0.0])
        w = fixed_point_solve(prob.phi, [lmax, 0.0], np.zeros(8), 50, record=False).w_t
        assert support_size(w) == 0
        w = fixed_point_solve(prob.phi, [0.5 * lmax, 0.0], np.zeros(8), 50, record=False).w_t
        assert support_size(w) >= 1

    def test_build(self, small_elastic):
        from fixdiff.problems import PROVENANCE_CLOSED_FORM

        prob, _ = small_elastic
        assert 0.0 < prob.q < 1.0
        assert prob.q_provenance == PROVENANCE_CLOSED_FORM
        assert prob.batch_size == 4
        assert prob.phi.contraction == pytest.approx(prob.q)
        assert prob.lam_names == ("lam1", "lam2")
        np.testing.assert_array_equal(prob.projection(np.array([-1.0, 2.0])), [0.0, 2.0])

    def test_build_rejects(self):
        from fixdiff.errors import ArgumentError, ShapeError
        from fixdiff.problems import Dataset, build_elastic_net, gen_elastic_net

        train, val, _ = gen_elastic_net(0, n=20, d=5, n_informative=2)
        with pytest.raises(ArgumentError):
            build_elastic_net(train, val, [-0.1, 0.5])
        with pytest.raises(ArgumentError):
            build_elastic_net(train, val, [0.1, 0.5], c=0.0)
        with pytest.raises(ShapeError):
            build_elastic_net(train, Dataset(np.ones((3, 4)), np.ones(3)), [0.1, 0.5])


class TestPoisoning:
    """Tests for the data-poisoning problem."""

    def test_splits(self):
        from fixdiff.problems import poisoning_splits

        clean, corrupt, val = poisoning_splits(0, n=30, n_corrupt=10, n_val=20, p=6, n_classes=3)
        assert (clean.n_rows, corrupt.n_rows, val.n_rows) == (30, 10, 20)
        assert (clean.tag, corrupt.tag, val.tag) == ("train", "corruptible", "val")
        assert clean.n_classes == 3

    def test_blobs_need_room(self):
        from fixdiff.errors import ArgumentError
        from fixdiff.problems import gen_blobs

        with pytest.raises(ArgumentError):
            gen_blobs(0, 10, p=4, n_classes=3)

    def test_init_perturbation(self):
        from fixdiff.problems import init_perturbation

        g = init_perturbation(3, 12, 6)
        assert g.shape == (72,)
        assert np.all(np.abs(g) <= 0.1)
        np.testing.assert_array_equal(g, init_perturbation(3, 12, 6))

    def test_build(self):
        from fixdiff.problems import PROVENANCE_HEURISTIC, build_poisoning, poisoning_splits

        clean, corrupt, val = poisoning_splits(0, n=40, n_corrupt=12, n_val=40, p=6, n_classes=3)
        prob = build_poisoning(clean, corrupt, val, seed=0)
        assert prob.phi.d == 18
        assert prob.phi.m == 72
        assert prob.q_provenance == PROVENANCE_HEURISTIC
        assert prob.q < 1.0
        assert prob.q >= prob.meta["q_formula"]
        assert np.all(np.abs(prob.lam0) <= 0.1)
        np.testing.assert_array_equal(prob.projection(np.array([0.5, -0.5, 0.0])), [0.1, -0.1, 0.0])

    def test_build_needs_labels(self):
        from fixdiff.errors import ArgumentError
        from fixdiff.problems import Dataset, build_poisoning

        ds = Dataset(np.ones((4, 2)), np.ones(4))
        with pytest.raises(ArgumentError):
            build_poisoning(ds, ds, ds)

    def test_accuracy(self):
        from fixdiff.errors import ArgumentError
        from fixdiff.problems import Dataset, accuracy

        ds = Dataset(np.eye(2), np.array([0, 1]), 2)
        assert accuracy(np.eye(2).ravel(), ds) == 1.0
        assert accuracy(np.array([[0.0, 1.0], [1.0, 0.0]]).ravel(), ds) == 0.0
        with pytest.raises(ArgumentError):
            accuracy(np.zeros(2), Dataset(np.ones((2, 1)), np.ones(2)))


class TestNoisyScalar:
    def test_mean_map(self):
        from fixdiff.problems import noisy_scalar_map

        mp = noisy_scalar_map((0.2, 0.6)).expectation()
        assert mp.eval([2.0], [1.0])[0] == pytest.approx(1.8)

    def test_tokens(self):
        from fixdiff.linalg import Rng
        from fixdiff.problems import noisy_scalar_map

        sto = noisy_scalar_map((0.2, 0.6, 0.1))
        toks = sto.sample_stream(Rng(0), 100)
        assert set(toks) <= {0, 1, 2}

    def test_bad_slopes(self):
        from fixdiff.errors import ArgumentError
        from fixdiff.problems import noisy_scalar_map

        with pytest.raises(ArgumentError):
            noisy_scalar_map((0.5, 1.0))
        with pytest.raises(ArgumentError):
            noisy_scalar_map(())
