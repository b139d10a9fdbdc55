"""Generative sampler and exact-posterior oracle."""

import numpy as np
import pytest

import softds as s
from util import diagonal_spec


def make_spec(pi, nu, seed, n_items):
    pi = np.asarray(pi, dtype=np.float64)
    return s.GenerativeSpec(
        n_items=n_items,
        n_members=pi.shape[0],
        n_classes=pi.shape[1],
        nu_true=s.ClassPrior(np.asarray(nu, dtype=np.float64)),
        pi_true=s.ConfusionTensor(pi, pi_floor=float(pi.min())),
        seed=seed,
    )


class TestSample:
    def test_deterministic_bitwise(self):
        spec = diagonal_spec(3.0, 0.4, seed=60, n_items=50, n_classes=3)
        p1, t1 = s.sample(spec)
        p2, t2 = s.sample(spec)
        assert np.array_equal(p1.probs, p2.probs)
        assert np.array_equal(t1.labels, t2.labels)

    def test_one_hot_prior_fixes_labels(self):
        spec = make_spec(np.full((2, 3, 3), 1.0), [0.0, 1.0, 0.0], 61, 40)
        _, truth = s.sample(spec)
        assert np.all(truth.labels == 1)

    def test_unit_parameters_give_uniform_mean(self):
        # Dir(1, ..., 1) is uniform on the simplex: each coordinate has
        # mean 1/J and variance (J-1)/(J^2 (J+1))
        j, n = 4, 100_000
        spec = make_spec(np.ones((1, j, j)), np.full(j, 1.0 / j), 62, n)
        preds, _ = s.sample(spec)
        coord_mean = preds.probs[:, 0, :].mean(axis=0)
        sigma = np.sqrt((j - 1) / (j * j * (j + 1)) / n)
        assert np.max(np.abs(coord_mean - 1.0 / j)) <= 3 * sigma

    def test_concentrated_row_matches_dirichlet_mean(self):
        # true class 0 with parameter row (50, 1, ..., 1)
        j, n = 5, 100_000
        pi = np.ones((1, j, j))
        pi[0, 0, 0] = 50.0
        spec = make_spec(pi, [1.0, 0.0, 0.0, 0.0, 0.0], 63, n)
        preds, truth = s.sample(spec)
        assert np.all(truth.labels == 0)
        mean0 = preds.probs[:, 0, 0].mean()
        expected = 50.0 / (50.0 + j - 1)
        var = expected * (1.0 - expected) / (50.0 + j - 1 + 1.0)
        assert abs(mean0 - expected) <= 3 * np.sqrt(var / n)

    def test_rows_on_simplex(self):
        spec = diagonal_spec(2.0, 0.3, seed=64, n_items=200, n_classes=4)
        preds, _ = s.sample(spec)
        assert np.max(np.abs(preds.probs.sum(axis=2) - 1.0)) <= 1e-12

    def test_label_frequencies_match_prior(self):
        nu = np.array([0.5, 0.3, 0.2])
        spec = make_spec(np.ones((1, 3, 3)), nu, 65, 100_000)
        _, truth = s.sample(spec)
        freq = np.bincount(truth.labels, minlength=3) / truth.n_items
        sigma = np.sqrt(nu * (1 - nu) / truth.n_items)
        assert np.all(np.abs(freq - nu) <= 3 * sigma)

    def test_adding_members_preserves_earlier_draws(self):
        base = diagonal_spec(3.0, 0.4, seed=66, n_items=30, n_members=2,
                             n_classes=3)
        wider = diagonal_spec(3.0, 0.4, seed=66, n_items=30, n_members=4,
                              n_classes=3)
        p2, t2 = s.sample(base)
        p4, t4 = s.sample(wider)
        assert np.array_equal(t2.labels, t4.labels)
        assert np.array_equal(p2.probs, p4.probs[:, :2, :])

    def test_spec_validation(self):
        with pytest.raises(s.FormatError):
            diagonal_spec(3.0, 0.4, seed=0, n_items=0)


class TestBayesPosterior:
    def test_symmetric_center_is_uninformative(self):
        pi = np.array([[[2.0, 1.0], [1.0, 2.0]]])
        spec = make_spec(pi, [0.5, 0.5], 67, 1)
        preds = s.PredictionSet.from_probs(np.array([[[0.5, 0.5]]]))
        post = s.bayes_posterior(spec, preds)
        np.testing.assert_allclose(post.rows, [[0.5, 0.5]], atol=1e-12)

    def test_matches_e_step_under_true_parameters(self):
        spec = diagonal_spec(3.0, 0.4, seed=68, n_items=150, n_classes=4)
        preds, _ = s.sample(spec)
        oracle = s.bayes_posterior(spec, preds).rows
        estep = s.e_step_raw(preds, s.SdsModel(spec.pi_true, spec.nu_true)).rows
        np.testing.assert_allclose(oracle, estep, atol=1e-10)

    def test_beats_every_individual_member(self):
        spec = diagonal_spec(1.5, 0.4, seed=69, n_items=10_000, n_classes=4)
        preds, truth = s.sample(spec)
        bayes_acc = s.accuracy(s.bayes_posterior(spec, preds), truth)
        for k in range(spec.n_members):
            member_acc = np.mean(
                np.argmax(preds.probs[:, k, :], axis=1) == truth.labels)
            assert bayes_acc >= member_acc

    def test_shape_mismatch_rejected(self):
        spec = diagonal_spec(3.0, 0.4, seed=70, n_items=5, n_classes=3)
        preds = s.PredictionSet.from_probs(np.full((5, 3, 4), 0.25))
        with pytest.raises(ValueError):
            s.bayes_posterior(spec, preds)


class TestSpecSerialization:
    def test_json_round_trip(self, tmp_path):
        spec = diagonal_spec(3.0, 0.4, seed=71, n_items=25, n_classes=3)
        path = tmp_path / "spec.json"
        spec.to_json(path)
        again = s.GenerativeSpec.from_json(path)
        assert again.n_items == spec.n_items
        assert again.seed == spec.seed
        assert np.array_equal(again.pi_true.pi, spec.pi_true.pi)
        assert np.array_equal(again.nu_true.nu, spec.nu_true.nu)
        # and the samples agree bitwise
        p1, _ = s.sample(spec)
        p2, _ = s.sample(again)
        assert np.array_equal(p1.probs, p2.probs)
