"""On-disk corpus of user timelines with precomputed post embeddings.

Layout: a directory holding ``manifest.json`` plus ``corpus.bin``.  The
binary file is little-endian throughout:

    magic ``TEMT`` | u32 version=1 | u32 text_dim | u32 image_dim | u32 user_count
    per user:  u16 id_len | id utf8 | u8 label | u32 post_count
    per post:  f64 timestamp_seconds | u8 has_image | f32[text_dim]
               | f32[image_dim] iff has_image=1

Missing images are stored as absence (the presence byte), never as a zero
vector, so downstream masking can distinguish "no image" from "zero image".
Embeddings are stored as float32; timestamps as float64 seconds.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"TEMT"
FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")

MANIFEST_NAME = "manifest.json"
CORPUS_NAME = "corpus.bin"

SECONDS_PER_HOUR = 3600.0


class CorpusFormatError(Exception):
    """Malformed or inconsistent corpus files."""


@dataclass
class PostRecord:
    """One post: timestamp plus text embedding and optional image embedding."""

    timestamp: float
    text_embedding: np.ndarray
    image_embedding: np.ndarray | None = None

    @property
    def has_image(self) -> bool:
        return self.image_embedding is not None


@dataclass
class UserTimeline:
    """All posts of one user, sorted by timestamp, plus the binary label."""

    user_id: str
    label: int
    posts: list[PostRecord]


@dataclass
class CorpusManifest:
    text_dim: int
    image_dim: int
    splits: dict[str, str] = field(default_factory=dict)

    def split_counts(self) -> dict[str, int]:
        counts = {name: 0 for name in SPLITS}
        for split in self.splits.values():
            counts[split] += 1
        return counts

    def to_json(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "text_dim": self.text_dim,
            "image_dim": self.image_dim,
            "splits": self.splits,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CorpusManifest":
        version = obj.get("version")
        if version != FORMAT_VERSION:
            raise CorpusFormatError(f"unsupported manifest version: {version!r}")
        splits = obj.get("splits", {})
        bad = {s for s in splits.values()} - set(SPLITS)
        if bad:
            raise CorpusFormatError(f"unknown split names in manifest: {sorted(bad)}")
        return cls(text_dim=int(obj["text_dim"]), image_dim=int(obj["image_dim"]), splits=dict(splits))


def validate_timeline(timeline: UserTimeline, text_dim: int, image_dim: int) -> None:
    """Raise ValueError on any violated timeline invariant."""
    if not timeline.posts:
        raise ValueError(f"user {timeline.user_id!r}: empty timeline")
    if timeline.label not in (0, 1):
        raise ValueError(f"user {timeline.user_id!r}: label must be 0 or 1, got {timeline.label}")
    prev = -np.inf
    for i, post in enumerate(timeline.posts):
        if not np.isfinite(post.timestamp):
            raise ValueError(f"user {timeline.user_id!r}: non-finite timestamp at post {i}")
        if post.timestamp < prev:
            raise ValueError(f"user {timeline.user_id!r}: unsorted timestamps at post {i}")
        prev = post.timestamp
        if post.text_embedding.shape != (text_dim,):
            raise ValueError(
                f"user {timeline.user_id!r}: text embedding dim {post.text_embedding.shape} != ({text_dim},)"
            )
        if not np.all(np.isfinite(post.text_embedding)):
            raise ValueError(f"user {timeline.user_id!r}: non-finite text embedding at post {i}")
        if post.image_embedding is not None:
            if post.image_embedding.shape != (image_dim,):
                raise ValueError(
                    f"user {timeline.user_id!r}: image embedding dim {post.image_embedding.shape} != ({image_dim},)"
                )
            if not np.all(np.isfinite(post.image_embedding)):
                raise ValueError(f"user {timeline.user_id!r}: non-finite image embedding at post {i}")


def write_corpus(timelines: list[UserTimeline], manifest: CorpusManifest, path: str | Path) -> None:
    """Write ``manifest.json`` + ``corpus.bin`` under ``path`` (a directory)."""
    seen: set[str] = set()
    for tl in timelines:
        if tl.user_id in seen:
            raise ValueError(f"duplicate user_id {tl.user_id!r}")
        seen.add(tl.user_id)
        validate_timeline(tl, manifest.text_dim, manifest.image_dim)
        if tl.user_id not in manifest.splits:
            raise ValueError(f"user {tl.user_id!r} missing from manifest splits")

    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)

    chunks: list[bytes] = [
        MAGIC,
        struct.pack("<IIII", FORMAT_VERSION, manifest.text_dim, manifest.image_dim, len(timelines)),
    ]
    for tl in timelines:
        uid = tl.user_id.encode("utf-8")
        if len(uid) > 0xFFFF:
            raise ValueError(f"user_id too long: {len(uid)} bytes")
        chunks.append(struct.pack("<H", len(uid)))
        chunks.append(uid)
        chunks.append(struct.pack("<BI", tl.label, len(tl.posts)))
        for post in tl.posts:
            chunks.append(struct.pack("<dB", post.timestamp, 1 if post.has_image else 0))
            chunks.append(np.asarray(post.text_embedding, dtype="<f4").tobytes())
            if post.image_embedding is not None:
                chunks.append(np.asarray(post.image_embedding, dtype="<f4").tobytes())

    (out / MANIFEST_NAME).write_text(json.dumps(manifest.to_json(), indent=2), encoding="utf-8")
    (out / CORPUS_NAME).write_bytes(b"".join(chunks))


class _Cursor:
    """Sequential reader with explicit truncation checks."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorpusFormatError(f"truncated corpus file (need {n} bytes at offset {self.pos})")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats32(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").copy()

    @property
    def exhausted(self) -> bool:
        return self.pos == len(self.buf)


def read_corpus(path: str | Path) -> tuple[list[UserTimeline], CorpusManifest]:
    """Load and validate a corpus directory produced by ``write_corpus``."""
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    corpus_path = root / CORPUS_NAME
    if not manifest_path.exists():
        raise CorpusFormatError(f"manifest not found: {manifest_path}")
    if not corpus_path.exists():
        raise CorpusFormatError(f"corpus file not found: {corpus_path}")

    try:
        manifest = CorpusManifest.from_json(json.loads(manifest_path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorpusFormatError(f"bad manifest: {exc}") from exc

    cur = _Cursor(corpus_path.read_bytes())
    if cur.take(4) != MAGIC:
        raise CorpusFormatError("bad magic bytes (not a corpus file)")
    version, text_dim, image_dim, user_count = cur.unpack("<IIII")
    if version != FORMAT_VERSION:
        raise CorpusFormatError(f"unsupported corpus version: {version}")
    if text_dim != manifest.text_dim or image_dim != manifest.image_dim:
        raise CorpusFormatError(
            f"dims in corpus.bin ({text_dim}, {image_dim}) disagree with manifest "
            f"({manifest.text_dim}, {manifest.image_dim})"
        )

    timelines: list[UserTimeline] = []
    seen: set[str] = set()
    for _ in range(user_count):
        (id_len,) = cur.unpack("<H")
        user_id = cur.take(id_len).decode("utf-8")
        label, post_count = cur.unpack("<BI")
        if label not in (0, 1):
            raise CorpusFormatError(f"user {user_id!r}: bad label byte {label}")
        if user_id in seen:
            raise CorpusFormatError(f"duplicate user_id {user_id!r}")
        seen.add(user_id)
        posts: list[PostRecord] = []
        prev = -np.inf
        for i in range(post_count):
            timestamp, has_image = cur.unpack("<dB")
            if has_image not in (0, 1):
                raise CorpusFormatError(f"user {user_id!r}: bad has_image byte {has_image}")
            text = cur.floats32(text_dim)
            image = cur.floats32(image_dim) if has_image else None
            if not np.all(np.isfinite(text)) or (image is not None and not np.all(np.isfinite(image))):
                raise CorpusFormatError(f"user {user_id!r}: NaN/inf embedding component at post {i}")
            if not np.isfinite(timestamp) or timestamp < prev:
                raise CorpusFormatError(f"user {user_id!r}: unsorted or non-finite timestamp at post {i}")
            prev = timestamp
            posts.append(PostRecord(timestamp=timestamp, text_embedding=text, image_embedding=image))
        if not posts:
            raise CorpusFormatError(f"user {user_id!r}: empty timeline")
        if user_id not in manifest.splits:
            raise CorpusFormatError(f"user {user_id!r} missing from manifest splits")
        timelines.append(UserTimeline(user_id=user_id, label=label, posts=posts))

    if not cur.exhausted:
        raise CorpusFormatError(f"{len(cur.buf) - cur.pos} trailing bytes after last user")
    return timelines, manifest


def split_timelines(
    timelines: list[UserTimeline], manifest: CorpusManifest
) -> dict[str, list[UserTimeline]]:
    """Group timelines by their manifest split."""
    groups: dict[str, list[UserTimeline]] = {name: [] for name in SPLITS}
    for tl in timelines:
        groups[manifest.splits[tl.user_id]].append(tl)
    return groups


@dataclass
class CorpusStats:
    n_users: int
    n_posts: int
    posts_per_user: np.ndarray        # (n_users,) int
    labels: np.ndarray                # (n_users,) int
    user_mean_gap_hours: np.ndarray   # (n_users,) float, NaN for single-post users
    mean_gap_hours: float             # average of per-user mean gaps
    image_fraction: float
    user_ids: list[str]

    def to_json(self) -> dict:
        by_class = {}
        for cls in (0, 1):
            sel = self.labels == cls
            gaps = self.user_mean_gap_hours[sel]
            gaps = gaps[np.isfinite(gaps)]
            by_class[str(cls)] = {
                "users": int(sel.sum()),
                "mean_posts_per_user": float(self.posts_per_user[sel].mean()) if sel.any() else None,
                "mean_gap_hours": float(gaps.mean()) if gaps.size else None,
            }
        return {
            "n_users": self.n_users,
            "n_posts": self.n_posts,
            "posts_per_user": {
                "min": int(self.posts_per_user.min()),
                "mean": float(self.posts_per_user.mean()),
                "median": float(np.median(self.posts_per_user)),
                "max": int(self.posts_per_user.max()),
            },
            "mean_gap_hours": self.mean_gap_hours,
            "image_fraction": self.image_fraction,
            "by_class": by_class,
        }


def corpus_stats(timelines: list[UserTimeline]) -> CorpusStats:
    """Summary statistics: posting volume, inter-post gaps, image coverage.

    The mean gap is computed per user first and then averaged over users
    with at least two posts, i.e. it is a user-level average.
    """
    if not timelines:
        raise ValueError("empty corpus")
    counts = np.array([len(tl.posts) for tl in timelines], dtype=np.int64)
    labels = np.array([tl.label for tl in timelines], dtype=np.int64)
    mean_gaps = np.full(len(timelines), np.nan)
    images = 0
    for i, tl in enumerate(timelines):
        images += sum(1 for p in tl.posts if p.has_image)
        if len(tl.posts) >= 2:
            ts = np.array([p.timestamp for p in tl.posts])
            mean_gaps[i] = float(np.diff(ts).mean()) / SECONDS_PER_HOUR
    finite = mean_gaps[np.isfinite(mean_gaps)]
    return CorpusStats(
        n_users=len(timelines),
        n_posts=int(counts.sum()),
        posts_per_user=counts,
        labels=labels,
        user_mean_gap_hours=mean_gaps,
        mean_gap_hours=float(finite.mean()) if finite.size else float("nan"),
        image_fraction=float(images / counts.sum()),
        user_ids=[tl.user_id for tl in timelines],
    )
