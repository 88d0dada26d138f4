"""Tests for the three training loops."""

import dataclasses
import math

import numpy as np
import pytest

from conftest import central_diff, rel_err
from mcrkit import coding_rate as cr
from mcrkit import trainer as tr
from mcrkit import variational as vr
from mcrkit.data import SynthConfig, one_hot_membership, synth_subspaces


def small_dataset(k=2, seed=7, samples_per_class=12):
    ds, _ = synth_subspaces(
        SynthConfig(
            ambient_dim=8, classes=k, subspace_dim=2,
            samples_per_class=samples_per_class, noise_sigma=0.05, seed=seed,
        )
    )
    return ds


def config(objective, *, epochs=2, k=2, q=8, batch_size=8, seed=0, **kw):
    return tr.TrainerConfig(
        objective=objective,
        epochs=epochs,
        batch_size=batch_size,
        feature_dim=4,
        hidden_sizes=(10,),
        variational=vr.VariationalConfig(q=q, **kw),
        seed=seed,
    )


class TestTrainVmcr2:
    def test_zero_epochs_latches_and_returns_empty_metrics(self):
        ds = small_dataset()
        Pi = one_hot_membership(ds.labels, ds.k)
        params, state, metrics = tr.train_vmcr2(ds, Pi, config("vmcr2", epochs=0))
        assert metrics == []
        # returned state is the full-data latch for the initial parameters
        Z, _ = tr.featurizer.forward(params, ds.X)
        want = vr.latch(Z, Pi, 8)
        np.testing.assert_allclose(state.dictionary, want.dictionary, atol=1e-12)
        np.testing.assert_allclose(state.codes, want.codes, atol=1e-12)

    def test_full_batch_objective_nondecreasing_first_steps(self):
        ds = small_dataset(k=2, samples_per_class=10)
        Pi = one_hot_membership(ds.labels, ds.k)
        cfg = config("vmcr2", epochs=10, batch_size=20, q=8, latch_freq=1000)
        params, state, _ = tr.train_vmcr2(ds, Pi, dataclasses.replace(cfg, epochs=0))
        # replay ten full-batch ascent steps on the frozen featurizer output
        Z, _ = tr.featurizer.forward(params, ds.X)
        p = cr.params_from(Pi, 4, cfg.epsilon_sq)
        values = [vr.objective(Z, Pi, state, p, cfg.variational.mu)]
        for _ in range(10):
            ev = vr.step_eval(Z, Pi, state, p, cfg.variational.mu, include_z_grad=False)
            new_dict = state.dictionary + (
                cfg.variational.nu_gamma / ev.step_sizes.L_gamma
            ) * ev.grad_dictionary
            new_codes = state.codes + (
                cfg.variational.nu_a / ev.step_sizes.L_a
            ) * ev.grad_codes
            state = vr.project(vr.VariationalState(new_dict, new_codes))
            values.append(vr.objective(Z, Pi, state, p, cfg.variational.mu))
        diffs = np.diff(values)
        assert np.all(diffs >= -1e-6)

    def test_latched_flags_at_cadence(self):
        ds = small_dataset()
        Pi = one_hot_membership(ds.labels, ds.k)
        _, _, metrics = tr.train_vmcr2(
            ds, Pi, config("vmcr2", epochs=5, latch_freq=2)
        )
        assert [m.latched for m in metrics] == [True, False, True, False, True]

    def test_latch_freq_one_latches_every_epoch(self):
        ds = small_dataset()
        Pi = one_hot_membership(ds.labels, ds.k)
        _, _, metrics = tr.train_vmcr2(ds, Pi, config("vmcr2", epochs=3, latch_freq=1))
        assert all(m.latched for m in metrics)

    def test_metrics_delta_r_is_true_coding_rate_value(self):
        ds = small_dataset()
        Pi = one_hot_membership(ds.labels, ds.k)
        params, _, metrics = tr.train_vmcr2(ds, Pi, config("vmcr2", epochs=3))
        Z, _ = tr.featurizer.forward(params, ds.X)
        p = cr.params_from(Pi, 4, 0.5)
        assert metrics[-1].delta_r == cr.delta_r(Z, Pi, p)
        assert metrics[-1].var_objective is not None
        assert metrics[-1].m_penalty is not None
        assert metrics[-1].wall_ms > 0.0

    def test_bitwise_reproducible(self):
        ds = small_dataset()
        Pi = one_hot_membership(ds.labels, ds.k)
        cfg = config("vmcr2", epochs=3, seed=5)
        _, _, m1 = tr.train_vmcr2(ds, Pi, cfg)
        _, _, m2 = tr.train_vmcr2(ds, Pi, cfg)
        for a, b in zip(m1, m2):
            assert a.delta_r == b.delta_r
            assert a.rate == b.rate
            assert a.rate_c == b.rate_c
            assert a.var_objective == b.var_objective
            assert a.m_penalty == b.m_penalty

    def test_latch_on_batch_option_runs_and_differs(self):
        ds = small_dataset()
        Pi = one_hot_membership(ds.labels, ds.k)
        full = config("vmcr2", epochs=4, latch_freq=2)
        batch = config("vmcr2", epochs=4, latch_freq=2, latch_on_full=False)
        _, _, mf = tr.train_vmcr2(ds, Pi, full)
        _, _, mb = tr.train_vmcr2(ds, Pi, batch)
        assert [m.latched for m in mb] == [m.latched for m in mf]
        # relatching from a batch instead of the full set changes the run
        assert any(a.delta_r != b.delta_r for a, b in zip(mf, mb))


class TestTrainMcr2:
    def test_single_class_parameters_frozen(self):
        ds = small_dataset(k=1)
        Pi = one_hot_membership(ds.labels, ds.k)
        cfg = config("mcr2", epochs=1, k=1, q=4, batch_size=6)
        before = tr._init_params(ds, cfg)
        params, metrics = tr.train_mcr2(ds, Pi, cfg)
        for Wb, Wa in zip(before.weights, params.weights):
            np.testing.assert_array_equal(Wb, Wa)
        assert metrics[0].delta_r == 0.0

    def test_delta_r_improves_on_separable_synthetic(self):
        ds = small_dataset(k=2, samples_per_class=10)
        Pi = one_hot_membership(ds.labels, ds.k)
        cfg = config("mcr2", epochs=50, batch_size=20)
        _, metrics = tr.train_mcr2(ds, Pi, cfg)
        assert metrics[-1].delta_r > metrics[0].delta_r

    def test_timing_fields_positive(self):
        ds = small_dataset()
        Pi = one_hot_membership(ds.labels, ds.k)
        _, metrics = tr.train_mcr2(ds, Pi, config("mcr2", epochs=2))
        assert all(m.wall_ms > 0.0 for m in metrics)
        assert [m.epoch for m in metrics] == [0, 1]

    def test_bitwise_reproducible(self):
        ds = small_dataset()
        Pi = one_hot_membership(ds.labels, ds.k)
        cfg = config("mcr2", epochs=3, seed=11)
        _, m1 = tr.train_mcr2(ds, Pi, cfg)
        _, m2 = tr.train_mcr2(ds, Pi, cfg)
        assert [m.delta_r for m in m1] == [m.delta_r for m in m2]


class TestCeLossAndGrads:
    def test_uniform_logits_loss_is_log_k(self):
        k, d, m = 5, 3, 7
        W = np.zeros((k, d))
        b = np.zeros(k)
        Z = np.random.default_rng(0).standard_normal((d, m))
        labels = np.arange(m) % k
        loss, _, _, _ = tr.ce_loss_and_grads(W, b, Z, labels)
        assert loss == pytest.approx(math.log(k), rel=1e-12)

    def test_confident_correct_logits_loss_near_zero(self):
        k, m = 3, 6
        labels = np.arange(m) % k
        Z = np.eye(3) @ one_hot_membership(labels, k).T  # columns are class indicators
        W = 50.0 * np.eye(3)
        loss, _, _, _ = tr.ce_loss_and_grads(W, np.zeros(3), Z, labels)
        assert loss <= 1e-12

    @pytest.mark.parametrize("seed", range(4))
    def test_finite_difference_gradients(self, seed):
        rng = np.random.default_rng(400 + seed)
        k, d, m = 3, 4, 6
        W = rng.standard_normal((k, d))
        b = rng.standard_normal(k)
        Z = rng.standard_normal((d, m))
        labels = rng.integers(0, k, size=m)
        _, dW, db, dZ = tr.ce_loss_and_grads(W, b, Z, labels)
        assert rel_err(dW, central_diff(
            lambda V: tr.ce_loss_and_grads(V, b, Z, labels)[0], W.copy())) <= 1e-5
        assert rel_err(db, central_diff(
            lambda v: tr.ce_loss_and_grads(W, v, Z, labels)[0], b.copy())) <= 1e-5
        assert rel_err(dZ, central_diff(
            lambda Y: tr.ce_loss_and_grads(W, b, Y, labels)[0], Z.copy())) <= 1e-5

    def test_out_of_range_label_rejected(self):
        with pytest.raises(ValueError, match="labels"):
            tr.ce_loss_and_grads(np.zeros((2, 3)), np.zeros(2), np.zeros((3, 1)), [5])


class TestTrainCe:
    def test_runs_and_reports_loss(self):
        ds = small_dataset()
        _, metrics = tr.train_ce(ds, ds.labels, config("ce", epochs=3))
        assert all(m.ce_loss is not None for m in metrics)
        assert metrics[-1].ce_loss < metrics[0].ce_loss + 1.0

    def test_bitwise_reproducible(self):
        ds = small_dataset()
        cfg = config("ce", epochs=2, seed=3)
        _, m1 = tr.train_ce(ds, ds.labels, cfg)
        _, m2 = tr.train_ce(ds, ds.labels, cfg)
        assert [m.ce_loss for m in m1] == [m.ce_loss for m in m2]


class TestConfigValidation:
    def test_bad_objective(self):
        with pytest.raises(ValueError, match="objective"):
            config("adam")

    def test_batch_larger_than_dataset(self):
        ds = small_dataset()
        Pi = one_hot_membership(ds.labels, ds.k)
        with pytest.raises(ValueError, match="batch_size"):
            tr.train_mcr2(ds, Pi, config("mcr2", batch_size=1000))

    def test_nu_theta_defaults(self):
        assert config("mcr2").resolved_nu_theta() == 1e-3
        assert config("vmcr2").resolved_nu_theta() == 1e-3
        assert config("ce").resolved_nu_theta() == 1e-2
