"""Fixed-size post windows sampled from timelines, and padded batches.

Two regimes: chronologically consecutive sub-sequences (for positional
models) and uniform random sets without replacement, kept in sampled order
(for the order-free variant).  Users with fewer than K posts are padded,
never dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import SECONDS_PER_HOUR, UserTimeline


@dataclass
class PostWindow:
    """K slots of post data with padding and image-presence masks.

    tau[j] is hours elapsed since the chronologically first real post in
    the window; padded slots carry tau = 0 and zero embeddings.
    """

    user_id: str
    label: int
    text: np.ndarray            # (K, D_text) float32
    image: np.ndarray           # (K, D_img) float32, zeros where absent
    pad_mask: np.ndarray        # (K,) bool, True = real post
    image_mask: np.ndarray      # (K,) bool, True = image present and real
    tau: np.ndarray             # (K,) float64 hours
    position_index: np.ndarray  # (K,) int64, 0..K-1
    source_indices: np.ndarray  # (K,) int64 index into timeline.posts, -1 on padding

    @property
    def window_size(self) -> int:
        return self.text.shape[0]


@dataclass
class Batch:
    """n stacked windows sharing K and embedding dims."""

    user_ids: list[str]
    labels: np.ndarray          # (n,) int64
    text: np.ndarray            # (n, K, D_text)
    image: np.ndarray           # (n, K, D_img)
    pad_mask: np.ndarray        # (n, K) bool
    image_mask: np.ndarray      # (n, K) bool
    tau: np.ndarray             # (n, K) float64
    position_index: np.ndarray  # (n, K) int64
    source_indices: np.ndarray  # (n, K) int64

    def __len__(self) -> int:
        return len(self.user_ids)

    @property
    def window_size(self) -> int:
        return self.text.shape[1]


def _infer_image_dim(timeline: UserTimeline) -> int:
    for post in timeline.posts:
        if post.has_image:
            return post.image_embedding.shape[0]
    return 1  # placeholder width; every slot stays image-masked anyway


def _build_window(timeline: UserTimeline, indices: np.ndarray, k: int, image_dim: int | None) -> PostWindow:
    """Assemble a window from the selected post indices (in slot order)."""
    d_text = timeline.posts[0].text_embedding.shape[0]
    d_img = image_dim if image_dim is not None else _infer_image_dim(timeline)

    text = np.zeros((k, d_text), dtype=np.float32)
    image = np.zeros((k, d_img), dtype=np.float32)
    pad_mask = np.zeros(k, dtype=bool)
    image_mask = np.zeros(k, dtype=bool)
    tau = np.zeros(k, dtype=np.float64)
    source = np.full(k, -1, dtype=np.int64)

    selected = [timeline.posts[int(i)] for i in indices]
    t0 = min(post.timestamp for post in selected)
    for slot, (idx, post) in enumerate(zip(indices, selected)):
        text[slot] = post.text_embedding
        pad_mask[slot] = True
        tau[slot] = (post.timestamp - t0) / SECONDS_PER_HOUR
        source[slot] = idx
        if post.has_image:
            image[slot] = post.image_embedding
            image_mask[slot] = True

    return PostWindow(
        user_id=timeline.user_id,
        label=timeline.label,
        text=text,
        image=image,
        pad_mask=pad_mask,
        image_mask=image_mask,
        tau=tau,
        position_index=np.arange(k, dtype=np.int64),
        source_indices=source,
    )


def sample_subsequence(
    timeline: UserTimeline, k: int, rng: np.random.Generator, image_dim: int | None = None
) -> PostWindow:
    """K consecutive posts from a uniformly random start, original order.

    Timelines shorter than K are taken whole, left-aligned, right-padded.
    """
    if k < 1:
        raise ValueError(f"window size must be >= 1, got {k}")
    n = len(timeline.posts)
    if n == 0:
        raise ValueError(f"user {timeline.user_id!r}: empty timeline")
    if n >= k:
        start = int(rng.integers(0, n - k + 1))
        indices = np.arange(start, start + k)
    else:
        indices = np.arange(n)
    return _build_window(timeline, indices, k, image_dim)


def sample_random_set(
    timeline: UserTimeline, k: int, rng: np.random.Generator, image_dim: int | None = None
) -> PostWindow:
    """K distinct posts drawn uniformly without replacement, sampled order.

    No sorting is applied: the consumer treats the window as a set.
    """
    if k < 1:
        raise ValueError(f"window size must be >= 1, got {k}")
    n = len(timeline.posts)
    if n == 0:
        raise ValueError(f"user {timeline.user_id!r}: empty timeline")
    if n >= k:
        indices = rng.choice(n, size=k, replace=False)
    else:
        indices = np.arange(n)
    return _build_window(timeline, indices, k, image_dim)


def sampler_for_mode(positional_mode: str):
    """The sampling regime paired with each positional mode."""
    if positional_mode in ("time2vec", "learned"):
        return sample_subsequence
    if positional_mode == "zero":
        return sample_random_set
    raise ValueError(f"unknown positional mode: {positional_mode!r}")


def make_batch(windows: list[PostWindow]) -> Batch:
    """Stack homogeneous windows into one batch."""
    if not windows:
        raise ValueError("cannot batch zero windows")
    k = windows[0].window_size
    d_text = windows[0].text.shape[1]
    d_img = windows[0].image.shape[1]
    for w in windows:
        if w.text.shape != (k, d_text) or w.image.shape != (k, d_img):
            raise ValueError(
                f"heterogeneous window shapes: text {w.text.shape} / image {w.image.shape} "
                f"vs ({k}, {d_text}) / ({k}, {d_img})"
            )
    return Batch(
        user_ids=[w.user_id for w in windows],
        labels=np.array([w.label for w in windows], dtype=np.int64),
        text=np.stack([w.text for w in windows]),
        image=np.stack([w.image for w in windows]),
        pad_mask=np.stack([w.pad_mask for w in windows]),
        image_mask=np.stack([w.image_mask for w in windows]),
        tau=np.stack([w.tau for w in windows]),
        position_index=np.stack([w.position_index for w in windows]),
        source_indices=np.stack([w.source_indices for w in windows]),
    )
