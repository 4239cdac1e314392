import dataclasses

import numpy as np
import pytest

from taetlab.attacks import AttackConfig, pgd
from taetlab.data import Dataset, ImbalanceProfile, batches, gen_gaussian_mixture, subsample_longtail
from taetlab.losses import BslConfig, CeLoss, HelWeights, cross_entropy
from taetlab.network import ModelSpec, OptimizerState, init_model, loss_and_grads
from taetlab.training import (
    STAGE_ADV,
    STAGE_CE,
    TrainConfig,
    checkpoint,
    restore,
    train,
    train_at,
    train_at_bsl,
    train_run,
    train_taet,
)

EPS = 8.0 / 255.0


def small_data(seed=0, per_class=60, num_classes=3, dim=4):
    return gen_gaussian_mixture(num_classes, dim, 5.0, per_class, seed)


def base_cfg(**overrides):
    defaults = dict(
        method="taet",
        total_epochs=4,
        ce_epochs=2,
        batch_size=32,
        seed=13,
        attack=AttackConfig(epsilon=EPS, step_size=2.0 / 255.0, num_steps=3),
        hel_weights=HelWeights(0.1, 0.1, 0.1),
        learning_rate=0.1,
        momentum=0.9,
        weight_decay=5e-4,
        probe_size=32,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


def fresh_model(data, seed=5, hidden=(8,)):
    return init_model(ModelSpec(data.feature_dim, hidden, data.num_classes), seed)


class TestConfigValidation:
    def test_taet_needs_ce_epochs(self):
        with pytest.raises(ValueError, match="cross-entropy epoch"):
            base_cfg(ce_epochs=0)

    def test_harl_only_forces_zero_ce(self):
        with pytest.raises(ValueError, match="harl_only"):
            base_cfg(method="harl_only", ce_epochs=1)

    def test_at_has_no_ce_stage(self):
        with pytest.raises(ValueError, match="no cross-entropy stage"):
            base_cfg(method="at", ce_epochs=2)

    def test_ce_epochs_bounded_by_total(self):
        with pytest.raises(ValueError, match="ce_epochs"):
            base_cfg(ce_epochs=9, total_epochs=4)

    def test_method_dispatch_guards(self):
        data = small_data()
        cfg = base_cfg()
        with pytest.raises(ValueError, match="method"):
            train_at(fresh_model(data), data, cfg)


class TestStageSchedule:
    def test_stage_boundary_visible_in_records(self):
        data = small_data()
        _, records = train_taet(fresh_model(data), data, base_cfg())
        stages = [r.stage for r in records]
        assert stages == [STAGE_CE, STAGE_CE, STAGE_ADV, STAGE_ADV]
        for r in records:
            assert (r.stage == STAGE_CE) == (r.epoch < 2)

    def test_full_ce_schedule_never_enters_stage_two(self):
        data = small_data()
        _, records = train_taet(fresh_model(data), data, base_cfg(ce_epochs=4))
        assert all(r.stage == STAGE_CE for r in records)

    def test_lr_follows_schedule_in_records(self):
        data = small_data()
        cfg = base_cfg(lr_milestones=(2,), lr_decay_factor=10.0)
        _, records = train_taet(fresh_model(data), data, cfg)
        assert [r.lr for r in records] == [0.1, 0.1, 0.01, 0.01]


class TestDeterminismAndEquivalences:
    def test_same_seed_same_parameters(self):
        data = small_data()
        m1, rec1 = train_taet(fresh_model(data), data, base_cfg())
        m2, rec2 = train_taet(fresh_model(data), data, base_cfg())
        for a, b in zip(m1.parameters(), m2.parameters()):
            np.testing.assert_array_equal(a, b)
        assert [dataclasses.replace(r, seconds=0.0) for r in rec1] == [
            dataclasses.replace(r, seconds=0.0) for r in rec2
        ]

    def test_zero_budget_at_equals_pure_ce_taet(self):
        data = small_data()
        zero_attack = AttackConfig(epsilon=0.0, step_size=1e-9, num_steps=3)
        at_model, at_rec = train_at(fresh_model(data), data, base_cfg(method="at", ce_epochs=0, attack=zero_attack))
        ce_model, ce_rec = train_taet(fresh_model(data), data, base_cfg(ce_epochs=4))
        for a, b in zip(at_model.parameters(), ce_model.parameters()):
            np.testing.assert_array_equal(a, b)
        for ra, rc in zip(at_rec, ce_rec):
            assert ra.loss == rc.loss

    def test_balanced_single_batch_harl_bcl_matches_at_update(self):
        # balanced batch: the class-mean aggregation coincides with the plain mean
        data = small_data(num_classes=2, per_class=40)
        cfg_kwargs = dict(
            total_epochs=1,
            batch_size=len(data),  # one batch holding every class equally
            attack=AttackConfig(epsilon=EPS, step_size=EPS / 2, num_steps=2),
        )
        harl = base_cfg(method="harl_only", ce_epochs=0, hel_weights=HelWeights(1.0, 0.0, 0.0), **cfg_kwargs)
        at = base_cfg(method="at", ce_epochs=0, **cfg_kwargs)
        m1, _ = train(fresh_model(data), data, harl)
        m2, _ = train(fresh_model(data), data, at)
        for a, b in zip(m1.parameters(), m2.parameters()):
            np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)

    def test_bsl_with_zero_tau_matches_at_bit_exactly(self):
        data = small_data()
        m1, _ = train_at_bsl(fresh_model(data), data, base_cfg(method="at_bsl", ce_epochs=0, bsl_tau=0.0))
        m2, _ = train_at(fresh_model(data), data, base_cfg(method="at", ce_epochs=0))
        for a, b in zip(m1.parameters(), m2.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_bsl_with_uniform_counts_matches_at(self):
        data = small_data()  # balanced source: uniform counts
        m1, _ = train_at_bsl(fresh_model(data), data, base_cfg(method="at_bsl", ce_epochs=0, bsl_tau=1.0))
        m2, _ = train_at(fresh_model(data), data, base_cfg(method="at", ce_epochs=0))
        for a, b in zip(m1.parameters(), m2.parameters()):
            np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)

    def test_bsl_logit_shift_spans_log_ir(self):
        source = small_data(per_class=200, num_classes=5, dim=4)
        lt = subsample_longtail(source, ImbalanceProfile(5, 200, 10.0), seed=2)
        shift = BslConfig(lt.class_counts, tau_b=1.0).logit_shift
        assert shift[0] - shift[-1] == pytest.approx(np.log(10.0), rel=0.02)


class TestAdversarialLossOrdering:
    def test_attack_raises_loss_on_most_batches(self):
        data = small_data(per_class=100)
        model, _ = train_at(fresh_model(data), data, base_cfg(method="at", ce_epochs=0, total_epochs=3))
        attack = AttackConfig(epsilon=EPS, step_size=2.0 / 255.0, num_steps=5)
        wins = 0
        total = 0
        for k, (xb, yb) in enumerate(batches(data, 32, seed=77, epoch=0)):
            adv = pgd(model, xb, yb, attack, np.random.default_rng(k))
            clean = cross_entropy(model.forward(xb), yb)
            attacked = cross_entropy(model.forward(adv), yb)
            wins += attacked >= clean
            total += 1
        assert wins / total >= 0.95


class TestCheckpointResume:
    def test_split_run_matches_uninterrupted(self, tmp_path):
        data = small_data()
        cfg = base_cfg()
        full = train_run(fresh_model(data), data, cfg)

        part = train_run(fresh_model(data), data, cfg, end_epoch=2)
        path = tmp_path / "mid.ckpt"
        checkpoint(part.model, part.state, 2, path)
        model, state, epoch = restore(path)
        assert epoch == 2
        rest = train_run(model, data, cfg, state=state, start_epoch=epoch)

        for a, b in zip(full.model.parameters(), rest.model.parameters()):
            np.testing.assert_array_equal(a, b)
        tail = [dataclasses.replace(r, seconds=0.0) for r in rest.records]
        expect = [dataclasses.replace(r, seconds=0.0) for r in full.records[2:]]
        assert tail == expect


class TestProbe:
    def test_probe_uses_held_out_data_when_given(self):
        data = small_data()
        held = small_data(seed=9)
        _, records = train_taet(fresh_model(data), data, base_cfg(), probe_data=held)
        assert all(0.0 <= r.clean_ba <= 1.0 and 0.0 <= r.robust_ba <= 1.0 for r in records)

    def test_loss_is_batch_weighted_mean(self):
        # single-epoch CE run: the recorded loss must equal the weighted batch mean
        data = small_data()
        cfg = base_cfg(ce_epochs=1, total_epochs=1)
        model = fresh_model(data)
        replay = fresh_model(data)
        state = OptimizerState.for_model(replay, cfg.learning_rate, cfg.momentum, cfg.weight_decay)
        expected, seen = 0.0, 0
        from taetlab.network import sgd_step

        for xb, yb in batches(data, cfg.batch_size, cfg.seed, 0):
            value, grads, _ = loss_and_grads(replay, xb, yb, CeLoss())
            sgd_step(replay, grads, state)
            expected += value * len(yb)
            seen += len(yb)
        _, records = train_taet(model, data, cfg)
        assert records[0].loss == pytest.approx(expected / seen, abs=1e-15)
