"""Extraction pipeline: JSONL posts -> encoders -> binary corpus directory."""

from __future__ import annotations

import sys
import warnings
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .corpusio import UserBlock, write_corpus_dir
from .encoders import (
    image_encoder_spec,
    make_image_encoder,
    make_text_encoder,
    text_encoder_spec,
)
from .records import load_jsonl, group_by_user


def _load_image(path_str: str, base_dir: Path):
    """Returns an RGB PIL image, or None when missing/corrupt (warned)."""
    path = Path(path_str)
    if not path.is_absolute():
        path = base_dir / path
    if not path.exists():
        warnings.warn(f"image not found, marking absent: {path}", stacklevel=2)
        return None
    try:
        with Image.open(path) as img:
            return img.convert("RGB").copy()
    except (UnidentifiedImageError, OSError) as exc:
        warnings.warn(f"unreadable image, marking absent: {path} ({exc})", stacklevel=2)
        return None


def _assign_splits(
    user_ids: list[str], labels: dict[str, int],
    train_fraction: float, val_fraction: float, seed: int,
) -> dict[str, str]:
    splits: dict[str, str] = {}
    rng = np.random.default_rng(seed)
    for cls in (0, 1):
        ids = sorted(u for u in user_ids if labels[u] == cls)
        ids = [ids[i] for i in rng.permutation(len(ids))]
        n_train = int(round(train_fraction * len(ids)))
        n_val = int(round(val_fraction * len(ids)))
        for i, uid in enumerate(ids):
            splits[uid] = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
    return splits


def extract(
    jsonl_path: str | Path,
    text_encoder: str,
    image_encoder: str,
    out_dir: str | Path,
    batch_size: int = 32,
    device: str = "cpu",
    backend: str = "hf",
    train_fraction: float = 0.7,
    val_fraction: float = 0.15,
    split_seed: int = 0,
) -> dict:
    """Run the encoders over every post and write the corpus directory.

    Missing or unreadable images are recorded as absent, never zero-filled.
    Returns a summary dict.
    """
    text_spec = text_encoder_spec(text_encoder)
    image_spec = image_encoder_spec(image_encoder)
    encode_text = make_text_encoder(text_encoder, backend, device)
    encode_image = make_image_encoder(image_encoder, backend, device)

    jsonl_path = Path(jsonl_path)
    posts = load_jsonl(jsonl_path)
    users = group_by_user(posts)
    base_dir = jsonl_path.parent

    blocks: list[UserBlock] = []
    n_images = 0
    n_missing = 0
    for user_id in sorted(users):
        timeline = users[user_id]
        texts = [p.text for p in timeline]
        text_vecs = np.empty((len(texts), text_spec.dim), dtype=np.float32)
        for lo in range(0, len(texts), batch_size):
            text_vecs[lo:lo + batch_size] = encode_text.encode(texts[lo:lo + batch_size])

        images: list[np.ndarray | None] = [None] * len(timeline)
        pending: list[tuple[int, object]] = []
        for i, post in enumerate(timeline):
            if post.image_path is None:
                continue
            img = _load_image(post.image_path, base_dir)
            if img is None:
                n_missing += 1
                continue
            pending.append((i, img))
        for lo in range(0, len(pending), batch_size):
            chunk = pending[lo:lo + batch_size]
            vecs = encode_image.encode([img for _, img in chunk])
            for (slot, _), vec in zip(chunk, vecs):
                images[slot] = vec.astype(np.float32)
                n_images += 1

        blocks.append(UserBlock(
            user_id=user_id,
            label=timeline[0].label,
            timestamps=[p.timestamp for p in timeline],
            text=text_vecs,
            images=images,
        ))

    labels = {b.user_id: b.label for b in blocks}
    splits = _assign_splits([b.user_id for b in blocks], labels,
                            train_fraction, val_fraction, split_seed)
    metadata = {
        "text_encoder": text_spec.name,
        "text_pooling": text_spec.pooling,
        "image_encoder": image_spec.name,
        "image_pooling": image_spec.pooling,
        "backend": backend,
        "source": str(jsonl_path),
    }
    write_corpus_dir(out_dir, blocks, text_spec.dim, image_spec.dim, splits, metadata)

    summary = {
        "users": len(blocks),
        "posts": sum(len(b.timestamps) for b in blocks),
        "posts_with_images": n_images,
        "images_missing_or_unreadable": n_missing,
        "text_dim": text_spec.dim,
        "image_dim": image_spec.dim,
        "out": str(out_dir),
    }
    if backend == "stub":
        print("warning: stub backend produces content-hash embeddings, "
              "for format/pipeline testing only", file=sys.stderr)
    return summary
