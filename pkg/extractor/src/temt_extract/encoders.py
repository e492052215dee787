"""Pretrained encoder registry plus backends.

Backends:
  hf    -- real inference through transformers (requires the ``hf`` extra
           and downloadable/local model weights).
  stub  -- deterministic content-hashed pseudo-embeddings at the exact
           registry dimensions.  For pipeline and format testing in
           offline environments only; the CLI refuses to use it unless
           asked explicitly.

Text pooling follows each encoder's convention: the first-token
(classification) state for RoBERTa-family models, mean pooling for the
sentence-transformers MiniLM.  The choice is recorded in the output
manifest metadata.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

import numpy as np


class EncoderError(Exception):
    pass


@dataclass(frozen=True)
class EncoderSpec:
    name: str
    kind: str          # "text" | "image"
    dim: int
    hf_model: str
    pooling: str       # "cls" | "mean" | "pooled"


TEXT_ENCODERS = {
    "roberta": EncoderSpec("roberta", "text", 768, "roberta-base", "cls"),
    "emoberta": EncoderSpec("emoberta", "text", 768, "tae898/emoberta-base", "cls"),
    "minilm": EncoderSpec(
        "minilm", "text", 384,
        "sentence-transformers/paraphrase-multilingual-MiniLM-L12-v2", "mean",
    ),
}

IMAGE_ENCODERS = {
    "clip": EncoderSpec("clip", "image", 512, "openai/clip-vit-base-patch32", "pooled"),
    "dino": EncoderSpec("dino", "image", 768, "facebook/dino-vitb16", "cls"),
}


def text_encoder_spec(name: str) -> EncoderSpec:
    try:
        return TEXT_ENCODERS[name.lower()]
    except KeyError:
        raise EncoderError(
            f"unknown text encoder {name!r}; choose from {sorted(TEXT_ENCODERS)}"
        ) from None


def image_encoder_spec(name: str) -> EncoderSpec:
    try:
        return IMAGE_ENCODERS[name.lower()]
    except KeyError:
        raise EncoderError(
            f"unknown image encoder {name!r}; choose from {sorted(IMAGE_ENCODERS)}"
        ) from None


# ---- stub backend ----


def _hash_vector(payload: bytes, dim: int, salt: str) -> np.ndarray:
    digest = hashlib.sha256(salt.encode("utf-8") + payload).digest()
    seed = int.from_bytes(digest[:8], "little")
    vec = np.random.default_rng(seed).standard_normal(dim)
    return (vec / np.linalg.norm(vec)).astype(np.float32)


class StubTextEncoder:
    def __init__(self, spec: EncoderSpec):
        self.spec = spec

    def encode(self, texts: list[str]) -> np.ndarray:
        return np.stack([
            _hash_vector(t.encode("utf-8"), self.spec.dim, f"text:{self.spec.name}")
            for t in texts
        ])


class StubImageEncoder:
    def __init__(self, spec: EncoderSpec):
        self.spec = spec

    def encode(self, images) -> np.ndarray:
        return np.stack([
            _hash_vector(img.tobytes(), self.spec.dim, f"image:{self.spec.name}")
            for img in images
        ])


# ---- transformers backend ----


def _require_hf():
    try:
        import torch  # noqa: F401
        import transformers  # noqa: F401
    except ImportError as exc:
        raise EncoderError(
            "the hf backend needs torch and transformers (pip install 'temt-extract[hf]')"
        ) from exc


class HfTextEncoder:
    def __init__(self, spec: EncoderSpec, device: str = "cpu", max_length: int | None = None):
        _require_hf()
        import torch
        from transformers import AutoModel, AutoTokenizer

        self.spec = spec
        self.device = device
        self.tokenizer = AutoTokenizer.from_pretrained(spec.hf_model)
        self.model = AutoModel.from_pretrained(spec.hf_model).to(device).eval()
        self.max_length = max_length or self.tokenizer.model_max_length
        self._torch = torch

    def encode(self, texts: list[str]) -> np.ndarray:
        torch = self._torch
        # long posts are truncated to the encoder's own limit
        batch = self.tokenizer(texts, padding=True, truncation=True,
                               max_length=self.max_length, return_tensors="pt").to(self.device)
        with torch.no_grad():
            hidden = self.model(**batch).last_hidden_state
        if self.spec.pooling == "cls":
            out = hidden[:, 0]
        else:
            mask = batch["attention_mask"].unsqueeze(-1)
            out = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1)
        out = out.cpu().numpy().astype(np.float32)
        if out.shape[1] != self.spec.dim:
            raise EncoderError(
                f"{self.spec.name}: model produced dim {out.shape[1]}, registry says {self.spec.dim}"
            )
        return out


class HfImageEncoder:
    def __init__(self, spec: EncoderSpec, device: str = "cpu"):
        _require_hf()
        import torch
        from transformers import AutoImageProcessor, AutoModel, CLIPModel, CLIPProcessor

        self.spec = spec
        self.device = device
        self._torch = torch
        if spec.name == "clip":
            self.processor = CLIPProcessor.from_pretrained(spec.hf_model)
            self.model = CLIPModel.from_pretrained(spec.hf_model).to(device).eval()
        else:
            self.processor = AutoImageProcessor.from_pretrained(spec.hf_model)
            self.model = AutoModel.from_pretrained(spec.hf_model).to(device).eval()

    def encode(self, images) -> np.ndarray:
        torch = self._torch
        if self.spec.name == "clip":
            batch = self.processor(images=images, return_tensors="pt").to(self.device)
            with torch.no_grad():
                out = self.model.get_image_features(**batch)
        else:
            batch = self.processor(images=images, return_tensors="pt").to(self.device)
            with torch.no_grad():
                out = self.model(**batch).last_hidden_state[:, 0]
        out = out.cpu().numpy().astype(np.float32)
        if out.shape[1] != self.spec.dim:
            raise EncoderError(
                f"{self.spec.name}: model produced dim {out.shape[1]}, registry says {self.spec.dim}"
            )
        return out


def make_text_encoder(name: str, backend: str, device: str = "cpu"):
    spec = text_encoder_spec(name)
    if backend == "stub":
        return StubTextEncoder(spec)
    if backend == "hf":
        return HfTextEncoder(spec, device=device)
    raise EncoderError(f"unknown backend {backend!r} (choose hf or stub)")


def make_image_encoder(name: str, backend: str, device: str = "cpu"):
    spec = image_encoder_spec(name)
    if backend == "stub":
        return StubImageEncoder(spec)
    if backend == "hf":
        return HfImageEncoder(spec, device=device)
    raise EncoderError(f"unknown backend {backend!r} (choose hf or stub)")
