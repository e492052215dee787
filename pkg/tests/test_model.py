"""End-to-end model contracts: masking, invariances, gradients, checkpoints."""

import copy

import numpy as np
import pytest

from helpers import extend_window, make_timeline, permute_real_slots, tiny_config
from temt.gradcheck import check_gradients
from temt.model import (
    ModelConfig,
    forward,
    init_params,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
)
from temt.sampling import make_batch, sample_random_set, sample_subsequence
from temt.training import bce_loss


def _batch(mode="time2vec", n_windows=2, k=3, n_posts=7, seed=0, image_every=2):
    rng = np.random.default_rng(seed)
    sampler = sample_random_set if mode == "zero" else sample_subsequence
    windows = [
        sampler(
            make_timeline(n_posts, image_every=image_every, seed=seed + i, user_id=f"u{i}"),
            k, rng, 4,
        )
        for i in range(n_windows)
    ]
    return make_batch(windows)


class TestForwardBasics:
    def test_identical_windows_identical_logits(self):
        config = tiny_config()
        params = init_params(config, np.random.default_rng(0))
        rng = np.random.default_rng(1)
        w = sample_subsequence(make_timeline(7), 3, rng, 4)
        logits = forward(make_batch([w, w]), params, config).data
        assert logits[0] == logits[1]

    def test_dim_mismatch_rejected(self):
        config = tiny_config()
        params = init_params(config, np.random.default_rng(0))
        bad = _batch()
        bad.text = np.zeros((2, 3, 9))
        with pytest.raises(ValueError, match="dims"):
            forward(bad, params, config)

    def test_all_padded_window_rejected(self):
        config = tiny_config()
        params = init_params(config, np.random.default_rng(0))
        batch = _batch()
        batch.pad_mask[1, :] = False
        with pytest.raises(ValueError, match="zero real posts"):
            forward(batch, params, config)

    def test_float32_mode_runs(self):
        config = tiny_config(dtype="float32")
        params = init_params(config, np.random.default_rng(0))
        out = forward(_batch(), params, config)
        assert out.data.dtype == np.float32

    def test_dropout_changes_training_output_only(self):
        config = tiny_config(dropout=0.5)
        params = init_params(config, np.random.default_rng(0))
        batch = _batch()
        eval_a = forward(batch, params, config).data
        eval_b = forward(batch, params, config).data
        np.testing.assert_array_equal(eval_a, eval_b)
        train_a = forward(batch, params, config, train=True, rng=np.random.default_rng(1)).data
        train_b = forward(batch, params, config, train=True, rng=np.random.default_rng(2)).data
        assert not np.array_equal(train_a, train_b)
        with pytest.raises(ValueError, match="rng"):
            forward(batch, params, config, train=True)


class TestMaskingOpacity:
    @pytest.mark.parametrize("mode", ["time2vec", "learned", "zero"])
    def test_masked_values_cannot_move_logits(self, mode):
        config = tiny_config(mode, window_size=5)
        params = init_params(config, np.random.default_rng(0))
        batch = _batch(mode, n_windows=3, k=5, n_posts=4)  # padded windows
        base = forward(batch, params, config).data.copy()
        noise = np.random.default_rng(42)
        poked = copy.deepcopy(batch)
        pad = ~poked.pad_mask
        poked.text[pad] = noise.standard_normal(poked.text[pad].shape) * 100.0
        img_masked = ~poked.image_mask
        poked.image[img_masked] = noise.standard_normal(poked.image[img_masked].shape) * 100.0
        out = forward(poked, params, config).data
        np.testing.assert_array_equal(out, base)

    def test_imageless_window_acts_text_only(self):
        config = tiny_config()
        params = init_params(config, np.random.default_rng(0))
        rng = np.random.default_rng(3)
        w = sample_subsequence(make_timeline(6, image_every=None), 3, rng, 4)
        batch = make_batch([w])
        base = forward(batch, params, config).data.copy()
        poked = copy.deepcopy(batch)
        poked.image[:] = np.random.default_rng(9).standard_normal(poked.image.shape)
        np.testing.assert_array_equal(forward(poked, params, config).data, base)


class TestInvariances:
    def test_zero_mode_set_invariance(self):
        config = tiny_config("zero", window_size=5)
        params = init_params(config, np.random.default_rng(0))
        batch = _batch("zero", n_windows=2, k=5, n_posts=9)
        base = forward(batch, params, config).data.copy()
        worst = 0.0
        for trial in range(100):
            rng = np.random.default_rng(trial)
            poked = copy.deepcopy(batch)
            for row in range(len(poked)):
                slots = np.flatnonzero(poked.pad_mask[row])
                permute_real_slots(poked, row, rng.permutation(slots), slots)
            out = forward(poked, params, config).data
            worst = max(worst, float(np.abs(out - base).max()))
        assert worst < 1e-10

    def test_time2vec_sequence_sensitivity_witness(self):
        # permuting post contents against the fixed time profile must be able
        # to change the logit; one witness permutation suffices
        config = tiny_config("time2vec", window_size=4)
        params = init_params(config, np.random.default_rng(0))
        batch = _batch("time2vec", n_windows=1, k=4, n_posts=9, image_every=None)
        base = forward(batch, params, config).data[0]
        moved = False
        for trial in range(10):
            rng = np.random.default_rng(trial)
            poked = copy.deepcopy(batch)
            slots = np.flatnonzero(poked.pad_mask[0])
            perm = rng.permutation(slots)
            permute_real_slots(poked, 0, perm, slots, include_time=False)
            if abs(forward(poked, params, config).data[0] - base) > 1e-8:
                moved = True
                break
        assert moved

    def test_padding_extension(self):
        config5 = tiny_config(window_size=5)
        config8 = tiny_config(window_size=8)
        params = init_params(config5, np.random.default_rng(0))
        rng = np.random.default_rng(2)
        w = sample_subsequence(make_timeline(6), 5, rng, 4)
        base = forward(make_batch([w]), params, config5).data[0]
        extended = forward(make_batch([extend_window(w, 3)]), params, config8).data[0]
        assert abs(base - extended) < 1e-10

    def test_batch_independence(self):
        # BLAS blocks matmuls differently per batch shape, so rows agree to
        # rounding rather than bit-for-bit
        config = tiny_config()
        params = init_params(config, np.random.default_rng(0))
        batch = _batch(n_windows=4)
        stacked = forward(batch, params, config).data
        for i in range(4):
            solo = forward(make_batch([_window_from_batch(batch, i)]), params, config).data[0]
            assert abs(solo - stacked[i]) < 1e-12


def _window_from_batch(batch, i):
    from temt.sampling import PostWindow

    return PostWindow(
        user_id=batch.user_ids[i],
        label=int(batch.labels[i]),
        text=batch.text[i].copy(),
        image=batch.image[i].copy(),
        pad_mask=batch.pad_mask[i].copy(),
        image_mask=batch.image_mask[i].copy(),
        tau=batch.tau[i].copy(),
        position_index=batch.position_index[i].copy(),
        source_indices=batch.source_indices[i].copy(),
    )


class TestGradients:
    @pytest.mark.parametrize("mode", ["time2vec", "learned", "zero"])
    def test_full_model_loss_matches_fd(self, mode):
        config = tiny_config(mode)
        params = init_params(config, np.random.default_rng(1))
        batch = _batch(mode, n_windows=2, k=3, n_posts=5)

        def loss():
            return bce_loss(forward(batch, params, config), batch.labels)

        # atol floor sits above the FD oracle's own cancellation noise
        # (eps * |loss| / h ~ 1e-11); key biases have true gradient 0, so a
        # pure-noise comparison must not fail the relative test
        errors = check_gradients(loss, dict(params.items()), h=1e-5, rtol=1e-4, atol=1e-6)
        assert max(errors.values()) < 1e-4


class TestPredictProba:
    def test_examples(self):
        np.testing.assert_allclose(predict_proba(np.array([0.0])), [0.5])
        assert predict_proba(np.array([50.0]))[0] == pytest.approx(1.0, abs=1e-15)
        z = np.random.default_rng(0).standard_normal(20) * 4
        np.testing.assert_allclose(predict_proba(z), 1.0 / (1.0 + np.exp(-z)), rtol=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            predict_proba(np.array([np.nan]))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        config = tiny_config("learned")
        params = init_params(config, np.random.default_rng(0))
        path = tmp_path / "model.bin"
        save_checkpoint(path, params)
        loaded = load_checkpoint(path)
        assert loaded.config == config
        assert set(loaded.tensors) == set(params.tensors)
        for name, t in params.items():
            np.testing.assert_array_equal(loaded[name].data, t.data)
        batch = _batch("learned")
        np.testing.assert_array_equal(
            forward(batch, loaded, config).data, forward(batch, params, config).data
        )

    def test_truncated_rejected(self, tmp_path):
        config = tiny_config()
        params = init_params(config, np.random.default_rng(0))
        path = tmp_path / "model.bin"
        save_checkpoint(path, params)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "model.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(path)


def test_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        ModelConfig(text_dim=4, image_dim=4, d_model=10, cross_heads=3)
    with pytest.raises(ValueError, match="positional"):
        ModelConfig(text_dim=4, image_dim=4, positional_mode="fourier")
