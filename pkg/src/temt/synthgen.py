"""Synthetic labeled corpora with controllable class signals.

Signal modes:
  content   -- positive-class users get a mean shift along a fixed
               direction injected into a minority of their text
               embeddings; posting gaps are class-identical.
  temporal  -- classes differ only in their inter-post gap distribution
               (positive users post in faster bursts); embeddings are
               class-identical.
  mixed     -- both signals.
  null      -- no signal anywhere, the sanity floor.

Gaps are log-normal (heavy-tailed, like real posting behavior); class
means default to a short-burst vs day-scale contrast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import CorpusManifest, PostRecord, UserTimeline

SIGNAL_MODES = ("content", "temporal", "mixed", "null")


@dataclass
class SynthConfig:
    users_per_class: int = 100
    min_posts: int = 40
    max_posts: int = 160
    text_dim: int = 32
    image_dim: int = 16
    image_prob: float = 0.15
    signal_mode: str = "content"
    signal_strength: float = 2.0
    informative_fraction: float = 0.1
    gap_mean_hours_pos: float = 3.0
    gap_mean_hours_neg: float = 27.0
    base_gap_mean_hours: float = 12.0
    gap_sigma_log: float = 0.75
    train_fraction: float = 0.7
    val_fraction: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.signal_mode not in SIGNAL_MODES:
            raise ValueError(f"unknown signal mode {self.signal_mode!r}")
        if self.signal_strength < 0:
            raise ValueError("signal_strength must be >= 0")
        for name in ("image_prob", "informative_fraction", "train_fraction", "val_fraction"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.train_fraction + self.val_fraction >= 1.0:
            raise ValueError("train_fraction + val_fraction must leave room for a test split")
        if self.min_posts < 1 or self.max_posts < self.min_posts:
            raise ValueError("need max_posts >= min_posts >= 1")
        for name in ("gap_mean_hours_pos", "gap_mean_hours_neg", "base_gap_mean_hours"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive (degenerate gap distribution)")
        if self.gap_sigma_log < 0:
            raise ValueError("gap_sigma_log must be >= 0")
        if self.users_per_class < 2:
            raise ValueError("need at least 2 users per class")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _lognormal_gaps(rng: np.random.Generator, n: int, mean_hours: float, sigma: float) -> np.ndarray:
    # mu chosen so the distribution mean equals mean_hours
    mu = np.log(mean_hours) - 0.5 * sigma * sigma
    return rng.lognormal(mean=mu, sigma=sigma, size=n)


def _gap_mean_for(label: int, config: SynthConfig) -> float:
    if config.signal_mode in ("temporal", "mixed"):
        return config.gap_mean_hours_pos if label == 1 else config.gap_mean_hours_neg
    return config.base_gap_mean_hours


def generate(config: SynthConfig) -> tuple[list[UserTimeline], CorpusManifest]:
    """Deterministic corpus from the config seed; passes all store validations.

    Each user draws from an independent spawned RNG stream (with a separate
    sub-stream for signal injection), so corpora with the same seed differ
    only where the signal mode says they must and users can be generated in
    parallel.
    """
    root = np.random.SeedSequence(config.seed)
    n_total = 2 * config.users_per_class
    global_key, split_key, *user_keys = root.spawn(2 + n_total)

    # One fixed shift direction per corpus for the content signal.
    direction = np.random.default_rng(global_key).standard_normal(config.text_dim)
    direction /= np.linalg.norm(direction)

    timelines: list[UserTimeline] = []
    labels = [1] * config.users_per_class + [0] * config.users_per_class
    for uid, (label, key) in enumerate(zip(labels, user_keys)):
        base_key, signal_key = key.spawn(2)
        timelines.append(_generate_user(
            f"user_{uid:05d}", label, config, direction,
            np.random.default_rng(base_key), np.random.default_rng(signal_key),
        ))

    manifest = CorpusManifest(
        text_dim=config.text_dim,
        image_dim=config.image_dim,
        splits=_stratified_splits(timelines, config, np.random.default_rng(split_key)),
    )
    return timelines, manifest


def _generate_user(
    user_id: str,
    label: int,
    config: SynthConfig,
    direction: np.ndarray,
    rng: np.random.Generator,
    signal_rng: np.random.Generator,
) -> UserTimeline:
    n_posts = int(rng.integers(config.min_posts, config.max_posts + 1))
    gaps = _lognormal_gaps(rng, n_posts - 1, _gap_mean_for(label, config), config.gap_sigma_log)
    start = float(rng.uniform(0.0, 365.0 * 24.0 * 3600.0))
    timestamps = start + np.concatenate([[0.0], np.cumsum(gaps) * 3600.0])

    text = rng.standard_normal((n_posts, config.text_dim))
    if (
        label == 1
        and config.signal_mode in ("content", "mixed")
        and config.signal_strength > 0
    ):
        # every positive user carries at least one informative post
        n_informative = max(1, int(round(config.informative_fraction * n_posts)))
        chosen = signal_rng.choice(n_posts, size=n_informative, replace=False)
        text[chosen] += config.signal_strength * direction
    text = text.astype(np.float32)

    has_image = rng.random(n_posts) < config.image_prob
    posts = []
    for i in range(n_posts):
        image = None
        if has_image[i]:
            image = rng.standard_normal(config.image_dim).astype(np.float32)
        posts.append(PostRecord(
            timestamp=float(timestamps[i]),
            text_embedding=text[i],
            image_embedding=image,
        ))
    return UserTimeline(user_id=user_id, label=label, posts=posts)


def _stratified_splits(
    timelines: list[UserTimeline], config: SynthConfig, rng: np.random.Generator
) -> dict[str, str]:
    splits: dict[str, str] = {}
    for label in (0, 1):
        ids = [tl.user_id for tl in timelines if tl.label == label]
        ids = [ids[i] for i in rng.permutation(len(ids))]
        n_train = int(round(config.train_fraction * len(ids)))
        n_val = int(round(config.val_fraction * len(ids)))
        for i, user_id in enumerate(ids):
            if i < n_train:
                splits[user_id] = "train"
            elif i < n_train + n_val:
                splits[user_id] = "val"
            else:
                splits[user_id] = "test"
    return splits
