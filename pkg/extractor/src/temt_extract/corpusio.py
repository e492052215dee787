"""Writer/validator for the core binary corpus format.

This tool integrates with the classifier through its file formats only,
so the format is implemented here against the published layout:

    manifest.json: {"version": 1, "text_dim", "image_dim",
                    "splits": {user_id: "train"|"val"|"test"}, ...}
    corpus.bin (little-endian):
        magic "TEMT" | u32 version=1 | u32 text_dim | u32 image_dim
        | u32 user_count
        per user: u16 id_len | id utf8 | u8 label | u32 post_count
        per post: f64 timestamp | u8 has_image | f32[text_dim]
                  | f32[image_dim] iff has_image
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"TEMT"
VERSION = 1


class FormatError(Exception):
    pass


@dataclass
class UserBlock:
    user_id: str
    label: int
    timestamps: list[float]
    text: np.ndarray                    # (n_posts, text_dim) float32
    images: list[np.ndarray | None]     # per post, image_dim float32 or None


def write_corpus_dir(
    out_dir: str | Path,
    users: list[UserBlock],
    text_dim: int,
    image_dim: int,
    splits: dict[str, str],
    metadata: dict | None = None,
) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    chunks = [MAGIC, struct.pack("<IIII", VERSION, text_dim, image_dim, len(users))]
    for user in users:
        uid = user.user_id.encode("utf-8")
        chunks.append(struct.pack("<H", len(uid)))
        chunks.append(uid)
        chunks.append(struct.pack("<BI", user.label, len(user.timestamps)))
        for i, ts in enumerate(user.timestamps):
            image = user.images[i]
            chunks.append(struct.pack("<dB", ts, 0 if image is None else 1))
            chunks.append(np.ascontiguousarray(user.text[i], dtype="<f4").tobytes())
            if image is not None:
                chunks.append(np.ascontiguousarray(image, dtype="<f4").tobytes())
    (out / "corpus.bin").write_bytes(b"".join(chunks))

    manifest = {
        "version": VERSION,
        "text_dim": text_dim,
        "image_dim": image_dim,
        "splits": splits,
    }
    if metadata:
        manifest["metadata"] = metadata
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")


def validate_corpus_dir(path: str | Path, spot_checks: int = 10, seed: int = 0) -> dict:
    """Full structural decode plus random spot checks; raises FormatError.

    Returns a report dict with counts and the spot-checked post addresses.
    """
    root = Path(path)
    manifest_path = root / "manifest.json"
    corpus_path = root / "corpus.bin"
    if not manifest_path.exists():
        raise FormatError(f"manifest not found: {manifest_path}")
    if not corpus_path.exists():
        raise FormatError(f"corpus file not found: {corpus_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    for key in ("version", "text_dim", "image_dim", "splits"):
        if key not in manifest:
            raise FormatError(f"manifest missing key {key!r}")
    if manifest["version"] != VERSION:
        raise FormatError(f"unsupported manifest version {manifest['version']!r}")

    buf = corpus_path.read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated corpus.bin at offset {pos} (need {n} bytes)")
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise FormatError("bad magic bytes")
    version, text_dim, image_dim, user_count = struct.unpack("<IIII", take(16))
    if version != VERSION:
        raise FormatError(f"unsupported corpus version {version}")
    if text_dim != manifest["text_dim"] or image_dim != manifest["image_dim"]:
        raise FormatError("manifest dims disagree with corpus.bin header")

    posts_total = 0
    images_total = 0
    decoded: list[tuple[str, int, int]] = []  # (user, post_count, images)
    for _ in range(user_count):
        (id_len,) = struct.unpack("<H", take(2))
        user_id = take(id_len).decode("utf-8")
        label, post_count = struct.unpack("<BI", take(5))
        if label not in (0, 1):
            raise FormatError(f"user {user_id!r}: bad label {label}")
        if post_count == 0:
            raise FormatError(f"user {user_id!r}: empty timeline")
        if user_id not in manifest["splits"]:
            raise FormatError(f"user {user_id!r} missing from manifest splits")
        prev = -np.inf
        n_images = 0
        for i in range(post_count):
            ts, has_image = struct.unpack("<dB", take(9))
            if has_image not in (0, 1):
                raise FormatError(f"user {user_id!r}: bad has_image byte")
            if not np.isfinite(ts) or ts < prev:
                raise FormatError(f"user {user_id!r}: unsorted timestamp at post {i}")
            prev = ts
            text = np.frombuffer(take(4 * text_dim), dtype="<f4")
            if not np.all(np.isfinite(text)):
                raise FormatError(f"user {user_id!r}: non-finite text embedding at post {i}")
            if has_image:
                image = np.frombuffer(take(4 * image_dim), dtype="<f4")
                if not np.all(np.isfinite(image)):
                    raise FormatError(f"user {user_id!r}: non-finite image embedding at post {i}")
                n_images += 1
        posts_total += post_count
        images_total += n_images
        decoded.append((user_id, post_count, n_images))
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after last user")

    rng = np.random.default_rng(seed)
    addresses = []
    flat = [(u, i) for u, count, _ in decoded for i in range(count)]
    for pick in rng.choice(len(flat), size=min(spot_checks, len(flat)), replace=False):
        addresses.append({"user_id": flat[int(pick)][0], "post_index": int(flat[int(pick)][1])})

    return {
        "users": user_count,
        "posts": posts_total,
        "posts_with_images": images_total,
        "text_dim": text_dim,
        "image_dim": image_dim,
        "spot_checked": addresses,
        "ok": True,
    }
