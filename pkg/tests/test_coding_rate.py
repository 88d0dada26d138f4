"""Tests for the coding-rate objective, its constants and its gradient."""

import math

import numpy as np
import pytest

from conftest import central_diff, rel_err, random_membership, unit_columns
from mcrkit import coding_rate as cr
from mcrkit.data import one_hot_membership


def one_hot(labels, k):
    return one_hot_membership(np.asarray(labels), k)


class TestParamsFrom:
    def test_balanced_binary(self):
        Pi = one_hot([0, 0, 1, 1], 2)
        p = cr.params_from(Pi, d=2, epsilon_sq=0.5)
        assert p.alpha == pytest.approx(1.0)
        np.testing.assert_allclose(p.alpha_per_class, [2.0, 2.0])
        np.testing.assert_allclose(p.gamma_per_class, [0.5, 0.5])

    def test_single_class(self):
        Pi = one_hot([0] * 7, 1)
        p = cr.params_from(Pi, d=3, epsilon_sq=0.25)
        assert p.alpha_per_class[0] == pytest.approx(p.alpha)
        assert p.gamma_per_class[0] == pytest.approx(1.0)

    def test_imbalanced(self):
        Pi = one_hot([0, 0, 0, 1], 2)
        p = cr.params_from(Pi, d=2, epsilon_sq=0.5)
        np.testing.assert_allclose(p.gamma_per_class, [0.75, 0.25])
        np.testing.assert_allclose(p.alpha_per_class, [4.0 / 3.0, 4.0])

    def test_gammas_sum_to_one_soft(self):
        rng = np.random.default_rng(0)
        Pi = random_membership(rng, 12, 4)
        p = cr.params_from(Pi, d=5, epsilon_sq=0.5)
        assert float(np.sum(p.gamma_per_class)) == pytest.approx(1.0, abs=1e-10)

    def test_empty_class_is_named(self):
        Pi = np.zeros((3, 2))
        Pi[:, 0] = 1.0
        with pytest.raises(ValueError, match="class 1"):
            cr.params_from(Pi, d=2, epsilon_sq=0.5)

    def test_rejects_nonpositive_epsilon(self):
        with pytest.raises(ValueError, match="epsilon_sq"):
            cr.params_from(one_hot([0], 1), d=2, epsilon_sq=0.0)


class TestRate:
    def test_zero_features(self):
        assert cr.rate(np.zeros((3, 4)), alpha=1.0) == 0.0

    def test_identity_features(self):
        assert cr.rate(np.eye(2), alpha=2.0) == pytest.approx(math.log(3.0), rel=1e-12)

    def test_matches_svd_oracle(self):
        rng = np.random.default_rng(1)
        Z = unit_columns(rng, 3, 5)
        sv = np.linalg.svd(Z, compute_uv=False)
        expected = 0.5 * float(np.sum(np.log1p(sv**2)))
        assert cr.rate(Z, alpha=1.0) == pytest.approx(expected, rel=1e-10)

    def test_gram_covariance_duality(self):
        # d x d and m x m sides carry the same nonzero spectrum; the rate
        # implementation picks whichever is smaller, so both must agree
        from mcrkit.numerics import logdet_i_plus

        rng = np.random.default_rng(2)
        for d, m in ((3, 8), (8, 3), (5, 5)):
            Z = rng.standard_normal((d, m))
            lhs = 0.5 * logdet_i_plus(0.7, Z @ Z.T)
            rhs = 0.5 * logdet_i_plus(0.7, Z.T @ Z)
            assert lhs == pytest.approx(rhs, rel=1e-9)
            assert cr.rate(Z, 0.7) == pytest.approx(lhs, rel=1e-9)


class TestRateC:
    def test_single_class_equals_rate(self):
        rng = np.random.default_rng(3)
        Z = unit_columns(rng, 4, 6)
        Pi = one_hot([0] * 6, 1)
        p = cr.params_from(Pi, 4, 0.5)
        assert cr.rate_c(Z, Pi, p) == cr.rate(Z, p.alpha)

    def test_axis_aligned_two_class(self):
        Z = np.eye(2)
        Pi = np.eye(2)
        p = cr.params_from(Pi, 2, 0.5)
        assert cr.rate_c(Z, Pi, p) == pytest.approx(0.5 * math.log(5.0), rel=1e-12)

    def test_matches_per_class_eigen_oracle(self):
        rng = np.random.default_rng(4)
        Z = unit_columns(rng, 5, 12)
        Pi = random_membership(rng, 12, 3)
        p = cr.params_from(Pi, 5, 0.5)
        expected = 0.0
        for j in range(3):
            G = (Z * Pi[:, j]) @ Z.T
            lam = np.maximum(np.linalg.eigvalsh(G), 0.0)
            expected += 0.5 * p.gamma_per_class[j] * float(
                np.sum(np.log1p(p.alpha_per_class[j] * lam))
            )
        assert cr.rate_c(Z, Pi, p) == pytest.approx(expected, rel=1e-9)

    def test_shape_mismatch(self):
        Z = np.eye(2)
        Pi = one_hot([0, 1, 0], 2)
        p = cr.params_from(Pi, 2, 0.5)
        with pytest.raises(ValueError, match="rows"):
            cr.rate_c(Z, Pi, p)  # 3 membership rows, 2 feature columns


class TestDeltaR:
    def test_single_class_exactly_zero(self):
        rng = np.random.default_rng(5)
        Z = unit_columns(rng, 3, 9)
        Pi = one_hot([0] * 9, 1)
        p = cr.params_from(Pi, 3, 0.5)
        assert cr.delta_r(Z, Pi, p) == 0.0

    def test_axis_aligned_hand_value(self):
        Z = np.eye(2)
        Pi = np.eye(2)
        p = cr.params_from(Pi, 2, 0.5)
        expected = math.log(3.0) - 0.5 * math.log(5.0)
        assert cr.delta_r(Z, Pi, p) == pytest.approx(expected, rel=1e-12)

    def test_duplicated_identical_classes_eigen_oracle(self):
        rng = np.random.default_rng(6)
        half = unit_columns(rng, 4, 5)
        Z = np.concatenate([half, half], axis=1)
        Pi = one_hot([0] * 5 + [1] * 5, 2)
        p = cr.params_from(Pi, 4, 0.5)
        lam_all = np.maximum(np.linalg.eigvalsh(Z @ Z.T), 0.0)
        expected = 0.5 * float(np.sum(np.log1p(p.alpha * lam_all)))
        for j in range(2):
            G = (Z * Pi[:, j]) @ Z.T
            lam = np.maximum(np.linalg.eigvalsh(G), 0.0)
            expected -= 0.5 * p.gamma_per_class[j] * float(
                np.sum(np.log1p(p.alpha_per_class[j] * lam))
            )
        assert cr.delta_r(Z, Pi, p) == pytest.approx(expected, rel=1e-9)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(7)
        Z = unit_columns(rng, 4, 10)
        Pi = random_membership(rng, 10, 3)
        p = cr.params_from(Pi, 4, 0.5)
        perm = rng.permutation(10)
        p2 = cr.params_from(Pi[perm], 4, 0.5)
        for fn, fn2 in (
            (cr.rate(Z, p.alpha), cr.rate(Z[:, perm], p2.alpha)),
            (cr.rate_c(Z, Pi, p), cr.rate_c(Z[:, perm], Pi[perm], p2)),
            (cr.delta_r(Z, Pi, p), cr.delta_r(Z[:, perm], Pi[perm], p2)),
        ):
            assert fn == pytest.approx(fn2, abs=1e-10)


class TestGradDeltaRZ:
    def test_single_class_zero_matrix(self):
        rng = np.random.default_rng(8)
        Z = unit_columns(rng, 3, 6)
        Pi = one_hot([0] * 6, 1)
        p = cr.params_from(Pi, 3, 0.5)
        np.testing.assert_array_equal(cr.grad_delta_r_z(Z, Pi, p), np.zeros((3, 6)))

    def test_zero_features_zero_gradient(self):
        Pi = one_hot([0, 1], 2)
        p = cr.params_from(Pi, 3, 0.5)
        np.testing.assert_allclose(
            cr.grad_delta_r_z(np.zeros((3, 2)), Pi, p), 0.0, atol=1e-15
        )

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_difference_agreement(self, seed):
        rng = np.random.default_rng(100 + seed)
        Z = unit_columns(rng, 4, 8)
        Pi = random_membership(rng, 8, 2)
        p = cr.params_from(Pi, 4, 0.5)
        got = cr.grad_delta_r_z(Z, Pi, p)
        want = central_diff(lambda W: cr.delta_r(W, Pi, p), Z.copy())
        assert rel_err(got, want) <= 1e-5
