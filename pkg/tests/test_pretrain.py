"""SGD semantics, the schedule, batch construction, and smoke-scale runs of
the full loop."""

import json

import numpy as np
import pytest

from mostats import autodiff as ad
from mostats import losses as L
from mostats import model as M
from mostats import pretrain as P
from mostats.dataio import SplitData
from mostats.errors import ContractError
from mostats.rng import Rng


def micro_split(seed=0, classes=2, per_class=8, side=8):
    rng = Rng(seed)
    images = rng.normal(size=(classes * per_class, 3, side, side)).astype(np.float32)
    # give each class a distinct mean so the task is learnable
    labels = np.repeat(np.arange(classes), per_class)
    images += labels[:, None, None, None].astype(np.float32) * 0.8
    return SplitData(images=images, labels=labels, n_classes=classes,
                     class_ids=np.arange(classes))


def micro_configs(epochs=1, **kw):
    model_cfg = M.BackboneConfig(blocks=[(4, True), (6, False)], in_shape=(3, 8, 8))
    train_cfg = P.TrainConfig(epochs=epochs, batch_size=4, lr0=0.01, schedule=[],
                              checkpoint_every=100, proj_dim=8, seed=3, **kw)
    return model_cfg, train_cfg


class TestSgdStep:
    def test_plain_gradient_descent(self):
        p, v = P.sgd_step(np.array([1.0, 2.0]), np.array([0.5, 0.5]), np.zeros(2),
                          lr=0.1, momentum=0.0, weight_decay=0.0)
        np.testing.assert_allclose(p, [0.95, 1.95])
        np.testing.assert_allclose(v, [0.5, 0.5])

    def test_zero_grads_leave_params(self):
        p, v = P.sgd_step(np.array([3.0]), np.zeros(1), np.zeros(1),
                          lr=0.5, momentum=0.9, weight_decay=0.0)
        np.testing.assert_array_equal(p, [3.0])

    def test_quadratic_recurrence_oracle(self):
        # f(x) = x^2/2, grad = x, from x=1: hand recurrence
        lr, mom = 0.1, 0.9
        x, v = np.array([1.0]), np.zeros(1)
        xs = []
        for _ in range(2):
            x, v = P.sgd_step(x, x.copy(), v, lr, mom, 0.0)
            xs.append(float(x[0]))
        # step 1: v=1, x=0.9; step 2: v=0.9*1+0.9=1.8, x=0.9-0.18=0.72
        assert xs == pytest.approx([0.9, 0.72])

    def test_weight_decay_in_gradient(self):
        p, v = P.sgd_step(np.array([2.0]), np.zeros(1), np.zeros(1),
                          lr=0.1, momentum=0.0, weight_decay=0.5)
        np.testing.assert_allclose(p, [2.0 - 0.1 * 1.0])

    def test_shape_mismatch(self):
        with pytest.raises(Exception):
            P.sgd_step(np.zeros(2), np.zeros(3), np.zeros(2), 0.1, 0.9, 0.0)


class TestSchedule:
    def test_published_values(self):
        cfg = P.TrainConfig()
        assert P.lr_at(cfg, 0) == pytest.approx(0.025, rel=1e-12)
        assert P.lr_at(cfg, 69) == pytest.approx(0.025, rel=1e-12)
        assert P.lr_at(cfg, 70) == pytest.approx(0.005, rel=1e-12)
        assert P.lr_at(cfg, 99) == pytest.approx(0.005, rel=1e-12)
        assert P.lr_at(cfg, 100) == pytest.approx(0.001, rel=1e-12)
        assert P.lr_at(cfg, 129) == pytest.approx(0.001, rel=1e-12)

    def test_empty_schedule_constant(self):
        cfg = P.TrainConfig(schedule=[])
        assert P.lr_at(cfg, 100) == 0.025

    def test_out_of_range(self):
        with pytest.raises(ContractError):
            P.lr_at(P.TrainConfig(), 130)

    def test_per_interval_decay_style(self):
        # the every-15-epochs-after-75 style expressed through the list
        sched = [(e, 0.2) for e in range(75, 130, 15)]
        cfg = P.TrainConfig(schedule=sched)
        assert P.lr_at(cfg, 74) == pytest.approx(0.025)
        assert P.lr_at(cfg, 75) == pytest.approx(0.005)
        assert P.lr_at(cfg, 90) == pytest.approx(0.001)

    def test_non_increasing_schedule_rejected(self):
        with pytest.raises(ContractError):
            P.TrainConfig(schedule=[(70, 0.2), (70, 0.2)])


class TestPairBatches:
    def test_every_class_in_batch_has_a_pair(self):
        labels = np.repeat(np.arange(5), 7)  # odd per-class count
        for epoch in range(3):
            batches = P.epoch_pair_batches(labels, 8, Rng(0).derive(f"e{epoch}"))
            for batch in batches:
                vals, counts = np.unique(labels[batch], return_counts=True)
                assert (counts >= 2).all()

    def test_seeded_permutation_replays(self):
        labels = np.repeat(np.arange(4), 6)
        a = P.epoch_pair_batches(labels, 8, Rng(5).derive("e0"))
        b = P.epoch_pair_batches(labels, 8, Rng(5).derive("e0"))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_different_epochs_differ(self):
        labels = np.repeat(np.arange(4), 6)
        a = P.epoch_pair_batches(labels, 8, Rng(5).derive("e0"))
        b = P.epoch_pair_batches(labels, 8, Rng(5).derive("e1"))
        assert any(not np.array_equal(x, y) for x, y in zip(a, b))


class TestPretrainLoop:
    def test_one_epoch_smoke(self, tmp_path):
        split = micro_split()
        model_cfg, train_cfg = micro_configs(epochs=1)
        path, log = P.pretrain(split, model_cfg, train_cfg, tmp_path / "run")
        assert path.exists()
        assert len(log) == 1
        assert np.isfinite(log[0].overall)
        lines = (tmp_path / "run" / "train_log.ndjson").read_text().splitlines()
        assert len(lines) == 1
        rec = json.loads(lines[0])
        assert set(rec) == {"epoch", "overall", "branches", "lr", "wall_time"}

    def test_loss_decreases_over_training(self, tmp_path):
        split = micro_split(per_class=12)
        model_cfg, train_cfg = micro_configs(epochs=30)
        _, log = P.pretrain(split, model_cfg, train_cfg, tmp_path / "run")
        assert log[-1].overall < log[0].overall

    def test_same_seed_bit_identical_checkpoints(self, tmp_path):
        split = micro_split()
        model_cfg, train_cfg = micro_configs(epochs=2)
        p1, _ = P.pretrain(split, model_cfg, train_cfg, tmp_path / "a")
        p2, _ = P.pretrain(split, model_cfg, train_cfg, tmp_path / "b")
        assert p1.read_bytes() == p2.read_bytes()

    def test_masked_branches_get_exactly_zero_grads(self):
        split = micro_split()
        model_cfg, train_cfg = micro_configs(
            epochs=1, weights=L.EnsembleWeights(1.0, 0.0, 0.0))
        params, buffers = M.init_params(model_cfg, split.n_classes, train_cfg.proj_dim,
                                        Rng(0), dtype="f32")
        aug = M.augment(split.images[:4], split.labels[:4])
        leaves = {k: ad.leaf(v, requires_grad=True) for k, v in params.items()}
        overall, _ = P.build_batch_loss(model_cfg, leaves, buffers, aug.images,
                                        aug.labels, train_cfg)
        ad.backward(overall)
        for name in ("head2_w", "head3_w", "proj2_w", "proj3_w"):
            assert leaves[name].grad is not None
            assert np.all(leaves[name].grad == 0.0), name
        assert np.any(leaves["head1_w"].grad != 0.0)

    def test_resume_continues_epoch_counter(self, tmp_path):
        split = micro_split()
        model_cfg, train_cfg = micro_configs(epochs=3)
        train_cfg.checkpoint_every = 1
        P.pretrain(split, model_cfg, train_cfg, tmp_path / "run")
        mid = tmp_path / "run" / "checkpoint_epoch0002.bin"
        assert mid.exists()
        final, log = P.pretrain(split, model_cfg, train_cfg, tmp_path / "run",
                                resume=str(mid))
        assert [r.epoch for r in log] == [2]
        assert M.load_checkpoint(final).epoch == 3

    def test_odd_batch_size_rejected(self):
        with pytest.raises(ContractError):
            P.TrainConfig(batch_size=3)

    def test_divergence_aborts_with_epoch_and_batch_context(self, tmp_path):
        from mostats.errors import NumericError
        split = micro_split()
        model_cfg, train_cfg = micro_configs(epochs=1)
        train_cfg.lr0 = 1e12  # guaranteed blow-up within the first batches
        with pytest.raises(NumericError, match=r"epoch 0, batch \d+"):
            P.pretrain(split, model_cfg, train_cfg, tmp_path / "run")
