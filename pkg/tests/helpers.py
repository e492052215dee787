"""Shared builders for model-level tests."""

import numpy as np

from temt.corpus import PostRecord, UserTimeline
from temt.model import ModelConfig
from temt.sampling import PostWindow


def make_timeline(
    n_posts: int,
    text_dim: int = 6,
    image_dim: int = 4,
    image_every: int | None = 2,
    gap_hours: float = 5.0,
    seed: int = 0,
    user_id: str = "u",
    label: int = 1,
) -> UserTimeline:
    rng = np.random.default_rng(seed)
    posts = []
    for i in range(n_posts):
        image = None
        if image_every is not None and i % image_every == 0:
            image = rng.standard_normal(image_dim).astype(np.float32)
        posts.append(PostRecord(
            timestamp=i * gap_hours * 3600.0,
            text_embedding=rng.standard_normal(text_dim).astype(np.float32),
            image_embedding=image,
        ))
    return UserTimeline(user_id=user_id, label=label, posts=posts)


def tiny_config(mode: str = "time2vec", **overrides) -> ModelConfig:
    kwargs = dict(
        text_dim=6, image_dim=4, d_model=8, cross_layers=1, cross_heads=2,
        self_layers=1, self_heads=2, ffn_multiplier=2, dropout=0.0,
        positional_mode=mode, window_size=3,
    )
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def permute_real_slots(batch, row: int, perm: np.ndarray, slots: np.ndarray,
                       include_time: bool = True) -> None:
    """In place: reorder the given real slots of one batch row by ``perm``."""
    for arr in (batch.text, batch.image):
        arr[row][slots] = arr[row][perm]
    batch.image_mask[row][slots] = batch.image_mask[row][perm]
    batch.source_indices[row][slots] = batch.source_indices[row][perm]
    if include_time:
        batch.tau[row][slots] = batch.tau[row][perm]


def extend_window(w: PostWindow, extra: int) -> PostWindow:
    """Append ``extra`` fully padded slots to a window."""
    k = w.window_size
    return PostWindow(
        user_id=w.user_id,
        label=w.label,
        text=np.vstack([w.text, np.zeros((extra, w.text.shape[1]), dtype=w.text.dtype)]),
        image=np.vstack([w.image, np.zeros((extra, w.image.shape[1]), dtype=w.image.dtype)]),
        pad_mask=np.concatenate([w.pad_mask, np.zeros(extra, bool)]),
        image_mask=np.concatenate([w.image_mask, np.zeros(extra, bool)]),
        tau=np.concatenate([w.tau, np.zeros(extra)]),
        position_index=np.arange(k + extra, dtype=np.int64),
        source_indices=np.concatenate([w.source_indices, np.full(extra, -1, dtype=np.int64)]),
    )
