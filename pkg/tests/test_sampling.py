"""Sampling regimes: uniformity oracles, order preservation, padding."""

import numpy as np
import pytest

from temt.corpus import PostRecord, UserTimeline
from temt.sampling import (
    make_batch,
    sample_random_set,
    sample_subsequence,
    sampler_for_mode,
)


def _timeline(n_posts, user_id="u", with_images=False, dim=3, gap_hours=1.0):
    posts = []
    for i in range(n_posts):
        image = np.full(2, float(i), dtype=np.float32) if with_images else None
        posts.append(PostRecord(
            timestamp=i * gap_hours * 3600.0,
            text_embedding=np.full(dim, float(i), dtype=np.float32),
            image_embedding=image,
        ))
    return UserTimeline(user_id=user_id, label=1, posts=posts)


class TestSubsequence:
    def test_short_timeline_padded(self):
        w = sample_subsequence(_timeline(3), 5, np.random.default_rng(0))
        np.testing.assert_array_equal(w.pad_mask, [True, True, True, False, False])
        np.testing.assert_array_equal(w.text[3:], np.zeros((2, 3)))
        np.testing.assert_array_equal(w.tau[3:], [0.0, 0.0])
        np.testing.assert_array_equal(w.source_indices, [0, 1, 2, -1, -1])

    def test_consecutive_in_order(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            w = sample_subsequence(_timeline(10), 4, rng)
            src = w.source_indices
            assert np.array_equal(np.diff(src), np.ones(3))
            assert np.all(np.diff(w.tau) > 0)

    def test_tau_origin_is_first_post(self):
        w = sample_subsequence(_timeline(10, gap_hours=2.0), 4, np.random.default_rng(3))
        assert w.tau[0] == 0.0
        np.testing.assert_allclose(np.diff(w.tau), 2.0)

    def test_start_index_uniform(self):
        # 10 posts, K=4: 7 starts, each with frequency 1/7 +- 3 sigma
        tl = _timeline(10)
        rng = np.random.default_rng(12345)
        draws = 10_000
        counts = np.zeros(7)
        for _ in range(draws):
            counts[sample_subsequence(tl, 4, rng).source_indices[0]] += 1
        p = 1.0 / 7.0
        sigma = np.sqrt(p * (1 - p) / draws)
        np.testing.assert_array_less(np.abs(counts / draws - p), 3 * sigma)

    def test_k_below_one_rejected(self):
        with pytest.raises(ValueError):
            sample_subsequence(_timeline(3), 0, np.random.default_rng(0))


class TestRandomSet:
    def test_both_posts_present_when_k_equals_n(self):
        w = sample_random_set(_timeline(2), 2, np.random.default_rng(0))
        assert sorted(w.source_indices.tolist()) == [0, 1]

    def test_k_one(self):
        w = sample_random_set(_timeline(5), 1, np.random.default_rng(0))
        assert w.pad_mask.sum() == 1 and w.window_size == 1

    def test_no_duplicates(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            w = sample_random_set(_timeline(20), 8, rng)
            src = w.source_indices[w.pad_mask]
            assert len(set(src.tolist())) == 8

    def test_inclusion_frequency_hypergeometric(self):
        # 100 posts, K=10: inclusion probability 0.10 +- 3 sigma over 50k draws
        tl = _timeline(100)
        rng = np.random.default_rng(999)
        draws = 50_000
        included = np.zeros(100)
        for _ in range(draws):
            w = sample_random_set(tl, 10, rng)
            included[w.source_indices[w.pad_mask]] += 1
        p = 0.10
        sigma = np.sqrt(p * (1 - p) / draws)
        np.testing.assert_array_less(np.abs(included / draws - p), 3 * sigma)

    def test_tau_non_negative_with_min_origin(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            w = sample_random_set(_timeline(30), 6, rng)
            assert np.all(w.tau >= 0.0)
            assert np.min(w.tau[w.pad_mask]) == 0.0


class TestBatching:
    def test_identical_windows_identical_rows(self):
        rng = np.random.default_rng(0)
        w = sample_subsequence(_timeline(6, with_images=True), 4, rng)
        batch = make_batch([w, w])
        np.testing.assert_array_equal(batch.text[0], batch.text[1])
        np.testing.assert_array_equal(batch.image[0], batch.image[1])
        np.testing.assert_array_equal(batch.pad_mask[0], batch.pad_mask[1])

    def test_no_images_batch(self):
        rng = np.random.default_rng(0)
        w = sample_subsequence(_timeline(6), 4, rng, image_dim=2)
        batch = make_batch([w])
        assert not batch.image_mask.any()
        np.testing.assert_array_equal(batch.image, np.zeros_like(batch.image))

    def test_mixed_padding_mask_counts(self):
        rng = np.random.default_rng(1)
        lengths = [2, 5, 9]
        windows = [sample_subsequence(_timeline(n, user_id=f"u{n}"), 6, rng) for n in lengths]
        batch = make_batch(windows)
        np.testing.assert_array_equal(batch.pad_mask.sum(axis=1), [min(n, 6) for n in lengths])

    def test_heterogeneous_shapes_rejected(self):
        rng = np.random.default_rng(0)
        a = sample_subsequence(_timeline(4), 4, rng)
        b = sample_subsequence(_timeline(4), 5, rng)
        with pytest.raises(ValueError, match="heterogeneous"):
            make_batch([a, b])

    def test_image_mask_implies_pad_mask(self):
        rng = np.random.default_rng(4)
        w = sample_random_set(_timeline(3, with_images=True), 6, rng)
        assert np.all(~w.image_mask | w.pad_mask)


def test_sampler_for_mode():
    assert sampler_for_mode("time2vec") is sample_subsequence
    assert sampler_for_mode("learned") is sample_subsequence
    assert sampler_for_mode("zero") is sample_random_set
    with pytest.raises(ValueError):
        sampler_for_mode("bogus")
