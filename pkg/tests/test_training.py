"""Loss values, schedule exactness, Adam oracles, training determinism."""

import numpy as np
import pytest
from mpmath import mp, mpf

from helpers import make_timeline, tiny_config
from temt.autodiff import NumericError, Tape, Tensor
from temt.corpus import CorpusManifest, PostRecord, UserTimeline
from temt.model import ModelParams, init_params
from temt.training import (
    AdamState,
    TrainConfig,
    adam_step,
    bce_loss,
    clip_gradients,
    cyclical_lr,
    kfold,
    stratified_folds,
    train,
)


class TestBCELoss:
    def test_logit_zero_label_one(self):
        loss = bce_loss(Tensor(np.array([0.0])), np.array([1.0]))
        assert loss.item() == pytest.approx(np.log(2.0), abs=1e-12)

    def test_large_logit_stable(self):
        loss = bce_loss(Tensor(np.array([100.0])), np.array([1.0]))
        assert 0.0 <= loss.item() < 1e-40

    def test_matches_high_precision_oracle(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal(32) * 6.0
        labels = (rng.random(32) < 0.5).astype(float)
        loss = bce_loss(Tensor(logits), labels).item()
        mp.prec = 200
        total = mpf(0)
        for z, y in zip(logits, labels):
            p = 1 / (1 + mp.e ** (-mpf(z)))
            total += -(mpf(y) * mp.log(p) + (1 - mpf(y)) * mp.log(1 - p))
        assert loss == pytest.approx(float(total / 32), abs=1e-12)

    def test_duplicated_batch_equals_single(self):
        logits = Tensor(np.array([0.7, 0.7, 0.7]))
        single = bce_loss(Tensor(np.array([0.7])), np.array([1.0])).item()
        tripled = bce_loss(logits, np.array([1.0, 1.0, 1.0])).item()
        assert tripled == pytest.approx(single, abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            bce_loss(Tensor(np.zeros(3)), np.zeros(2))


class TestCyclicalLR:
    CFG = TrainConfig(base_lr=1e-5, max_lr=1e-4, cycle_epochs=10)

    def test_boundary_values(self):
        spe = 17
        assert cyclical_lr(0, spe, self.CFG) == 1e-5
        assert cyclical_lr(5 * spe, spe, self.CFG) == 1e-4       # half cycle
        assert cyclical_lr(10 * spe, spe, self.CFG) == 1e-5      # cycle closes

    def test_closed_form_triangle_everywhere(self):
        spe = 13
        cfg = self.CFG
        rng = np.random.default_rng(1)
        for step in rng.integers(0, 10_000, size=2000):
            step = int(step)
            cycle = cfg.cycle_epochs * spe
            pos = step % cycle
            distance = min(pos, cycle - pos)  # independent triangle form
            expected = cfg.base_lr + (cfg.max_lr - cfg.base_lr) * (distance / (cycle / 2.0))
            assert cyclical_lr(step, spe, cfg) == expected

    def test_rises_then_falls(self):
        spe = 10
        lrs = [cyclical_lr(s, spe, self.CFG) for s in range(100)]
        assert all(b >= a for a, b in zip(lrs[:50], lrs[1:51]))
        assert all(b <= a for a, b in zip(lrs[50:99], lrs[51:100]))

    def test_negative_step_rejected(self):
        with pytest.raises(ValueError):
            cyclical_lr(-1, 10, self.CFG)


def _scalar_params(value: float) -> ModelParams:
    cfg = tiny_config()
    t = Tensor(np.array(value), requires_grad=True)
    return ModelParams({"theta": t}, cfg)


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        params = _scalar_params(3.0)
        params["theta"].grad = np.array(0.0)
        state = AdamState.create(params)
        adam_step(params, state, lr=0.1)
        assert params["theta"].data == 3.0

    def test_first_step_closed_form(self):
        params = _scalar_params(1.0)
        params["theta"].grad = np.array(1.0)
        state = AdamState.create(params)
        adam_step(params, state, lr=0.01)
        # m_hat = v_hat = 1 after one unit-gradient step
        expected = 1.0 - 0.01 * 1.0 / (np.sqrt(1.0) + 1e-8)
        assert params["theta"].data == pytest.approx(expected, abs=1e-15)

    def test_quadratic_descent_monotone(self):
        params = _scalar_params(5.0)
        state = AdamState.create(params)
        trace = []
        for _ in range(100):
            theta = params["theta"]
            theta.zero_grad()
            with Tape() as tape:
                from temt import autodiff as ad

                loss = ad.mul(theta, theta)
            tape.backward(loss)
            adam_step(params, state, lr=0.01)
            trace.append(abs(float(params["theta"].data)))
        assert all(b < a for a, b in zip(trace[5:], trace[6:]))

    def test_strict_mode_rejects_nan_grad(self):
        params = _scalar_params(1.0)
        params["theta"].grad = np.array(np.nan)
        state = AdamState.create(params)
        with pytest.raises(NumericError):
            adam_step(params, state, lr=0.1, strict=True)


def test_clip_gradients():
    params = ModelParams(
        {"a": Tensor(np.zeros(3), requires_grad=True), "b": Tensor(np.zeros(4), requires_grad=True)},
        tiny_config(),
    )
    params["a"].grad = np.full(3, 2.0)
    params["b"].grad = np.full(4, 2.0)
    norm = clip_gradients(params, max_norm=1.0)
    assert norm == pytest.approx(np.sqrt(7 * 4.0))
    total = sum(float(np.sum(t.grad ** 2)) for _, t in params.items())
    assert np.sqrt(total) == pytest.approx(1.0)


def _mini_corpus(n_per_class=4, n_posts=6, seed=0):
    tls = []
    for cls in (0, 1):
        for i in range(n_per_class):
            tls.append(make_timeline(
                n_posts, seed=seed + cls * 100 + i,
                user_id=f"c{cls}_{i}", label=cls, image_every=3,
            ))
    splits = {}
    for cls in (0, 1):
        ids = [f"c{cls}_{i}" for i in range(n_per_class)]
        for i, uid in enumerate(ids):
            splits[uid] = "train" if i < n_per_class - 2 else ("val" if i == n_per_class - 2 else "test")
    return tls, CorpusManifest(text_dim=6, image_dim=4, splits=splits)


class TestTrainLoop:
    def test_steps_per_epoch_via_schedule(self):
        # 4 train users, batch 2 -> exactly 2 optimizer steps; lr_last must
        # equal the schedule at global step 1
        tls, manifest = _mini_corpus(n_per_class=4)
        cfg = TrainConfig(batch_size=2, epochs=1, seed=0, base_lr=1e-5, max_lr=1e-4,
                          cycle_epochs=10)
        result = train(tls, manifest, tiny_config(), cfg)
        assert len(result.log) == 1
        assert result.log[0].lr_last == cyclical_lr(1, 2, cfg)

    def test_bit_identical_checkpoints_from_seed(self):
        tls, manifest = _mini_corpus()
        cfg = TrainConfig(batch_size=4, epochs=2, seed=123, base_lr=1e-4, max_lr=1e-3)
        a = train(tls, manifest, tiny_config(), cfg)
        b = train(tls, manifest, tiny_config(), cfg)
        for name, t in a.best_params.items():
            np.testing.assert_array_equal(t.data, b.best_params[name].data)
        assert [r.mean_loss for r in a.log] == [r.mean_loss for r in b.log]

    def test_empty_split_rejected(self):
        tls, manifest = _mini_corpus()
        manifest = CorpusManifest(
            text_dim=6, image_dim=4,
            splits={uid: "test" for uid in manifest.splits},
        )
        with pytest.raises(ValueError, match="empty train split"):
            train(tls, manifest, tiny_config(), TrainConfig(epochs=1))

    def test_divergence_aborts_with_diagnostic(self):
        tls, manifest = _mini_corpus()
        # poison one training embedding after validation would have passed
        for tl in tls:
            if manifest.splits[tl.user_id] == "train":
                tl.posts[0] = PostRecord(
                    timestamp=tl.posts[0].timestamp,
                    text_embedding=np.full(6, np.inf, dtype=np.float32),
                )
                break
        with np.errstate(invalid="ignore"), pytest.raises(NumericError, match="non-finite training loss"):
            train(tls, manifest, tiny_config(), TrainConfig(epochs=1, seed=0))

    def test_writes_log_and_checkpoint(self, tmp_path):
        tls, manifest = _mini_corpus()
        cfg = TrainConfig(batch_size=4, epochs=2, seed=5, base_lr=1e-4, max_lr=1e-3)
        result = train(tls, manifest, tiny_config(), cfg, out_dir=tmp_path)
        assert (tmp_path / "checkpoint.bin").exists()
        lines = (tmp_path / "train_log.jsonl").read_text().strip().splitlines()
        assert len(lines) == 2
        import json

        record = json.loads(lines[0])
        assert set(record) == {"epoch", "mean_loss", "lr_last", "val_f1", "val_auc", "seconds"}
        assert result.best_epoch >= 0


class TestKFold:
    def test_ten_users_five_folds_balanced(self):
        labels = np.array([0] * 5 + [1] * 5)
        folds = stratified_folds(labels, 5, np.random.default_rng(0))
        assert folds.shape == (10,)  # every user lands in exactly one fold
        for f in range(5):
            sel = folds == f
            assert sel.sum() == 2
            assert np.sum(labels[sel] == 1) == 1  # perfect stratification

    def test_stratification_within_one_user(self):
        labels = np.array([0] * 13 + [1] * 8)
        k = 4
        folds = stratified_folds(labels, k, np.random.default_rng(3))
        for f in range(k):
            sel = folds == f
            # per-class counts differ from the even share by at most one
            for cls in (0, 1):
                share = np.sum(labels == cls) / k
                assert abs(np.sum(labels[sel] == cls) - share) <= 1.0

    def test_fold_assignment_reproducible(self):
        labels = np.array([0, 1] * 10)
        a = stratified_folds(labels, 4, np.random.default_rng(9))
        b = stratified_folds(labels, 4, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_kfold_end_to_end_tiny(self):
        tls, manifest = _mini_corpus(n_per_class=5, n_posts=5)
        cfg = TrainConfig(batch_size=4, epochs=1, seed=0, base_lr=1e-4, max_lr=1e-3)
        result = kfold(tls, manifest, tiny_config(), cfg, k=2, val_fraction=0.34)
        assert len(result.per_fold) == 2
        assert 0.0 <= result.mean["accuracy"] <= 1.0
        assert set(result.mean) == {"f1", "precision", "recall", "accuracy", "auc"}

    def test_kfold_requires_both_classes(self):
        tls, manifest = _mini_corpus(n_per_class=3)
        labels = np.array([tl.label for tl in tls])
        with pytest.raises(ValueError):
            stratified_folds(labels, 7, np.random.default_rng(0))
