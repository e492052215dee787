"""Two-stream cross-modal transformer classifier over post windows.

Pipeline per window: linear projections of text/image embeddings to a
shared width, positional augmentation of both streams, a stack of
cross-modal layers (bidirectional cross-attention, per-stream
self-attention, per-stream feed-forward; each sublayer residual +
post-norm), per-post fusion of the two streams, a self-attention encoder
over the fused sequence, masked mean pooling and a linear head producing
one logit per user window.

Masking contract: padded slots and absent images are invisible as
attention keys/values everywhere, padded slots are excluded from pooling,
and absent-image stream outputs are zeroed at fusion, so the stored
values in masked slots cannot influence the logit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .sampling import Batch
from .temporal import LearnedPositionalTable, POSITIONAL_MODES, Time2VecParams, positional_tensor

CKPT_MAGIC = b"TEMTCKPT"
CKPT_VERSION = 1


@dataclass
class ModelConfig:
    text_dim: int
    image_dim: int
    d_model: int = 128
    cross_layers: int = 4
    cross_heads: int = 8
    self_layers: int = 2
    self_heads: int = 8
    ffn_multiplier: int = 4
    dropout: float = 0.1
    positional_mode: str = "time2vec"
    window_size: int = 128
    k_max: int | None = None
    t2v_epsilon: float = 1.0
    t2v_g_mode: str = "reciprocal"
    layer_norm_eps: float = 1e-5
    dtype: str = "float64"

    def __post_init__(self):
        if self.d_model % self.cross_heads or self.d_model % self.self_heads:
            raise ValueError(
                f"d_model={self.d_model} must be divisible by head counts "
                f"({self.cross_heads}, {self.self_heads})"
            )
        if self.positional_mode not in POSITIONAL_MODES:
            raise ValueError(f"unknown positional mode {self.positional_mode!r}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    @property
    def table_rows(self) -> int:
        return self.k_max if self.k_max is not None else self.window_size

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


class ModelParams:
    """Flat name -> Tensor map over every learnable tensor of the model."""

    def __init__(self, tensors: dict[str, Tensor], config: ModelConfig):
        self.tensors = tensors
        self.config = config

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def positional(self) -> Time2VecParams | LearnedPositionalTable | None:
        """Typed view over the positional tensors (shared, not copied)."""
        mode = self.config.positional_mode
        if mode == "time2vec":
            return Time2VecParams(
                omega=self.tensors["pos.omega"],
                phi=self.tensors["pos.phi"],
                epsilon=self.config.t2v_epsilon,
                g_mode=self.config.t2v_g_mode,
            )
        if mode == "learned":
            return LearnedPositionalTable(table=self.tensors["pos.table"])
        return None

    def copy(self) -> "ModelParams":
        clone = {
            name: Tensor(t.data.copy(), requires_grad=t.requires_grad)
            for name, t in self.tensors.items()
        }
        return ModelParams(clone, self.config)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Xavier-uniform weights, zero biases, unit layer-norm gains."""
    dt = config.np_dtype
    d = config.d_model
    t: dict[str, Tensor] = {}

    def param(name: str, data: np.ndarray) -> None:
        t[name] = Tensor(data, requires_grad=True)

    def attention(prefix: str) -> None:
        for w in ("wq", "wk", "wv", "wo"):
            param(f"{prefix}.{w}", _xavier(rng, d, d, dt))
        for b in ("bq", "bk", "bv", "bo"):
            param(f"{prefix}.{b}", np.zeros(d, dtype=dt))

    def layer_norm(prefix: str) -> None:
        param(f"{prefix}.gain", np.ones(d, dtype=dt))
        param(f"{prefix}.bias", np.zeros(d, dtype=dt))

    def ffn(prefix: str) -> None:
        hidden = d * config.ffn_multiplier
        param(f"{prefix}.w1", _xavier(rng, d, hidden, dt))
        param(f"{prefix}.b1", np.zeros(hidden, dtype=dt))
        param(f"{prefix}.w2", _xavier(rng, hidden, d, dt))
        param(f"{prefix}.b2", np.zeros(d, dtype=dt))

    param("proj.text.w", _xavier(rng, config.text_dim, d, dt))
    param("proj.text.b", np.zeros(d, dtype=dt))
    param("proj.image.w", _xavier(rng, config.image_dim, d, dt))
    param("proj.image.b", np.zeros(d, dtype=dt))

    if config.positional_mode == "time2vec":
        param("pos.omega", rng.uniform(-1.0, 1.0, size=d).astype(dt))
        param("pos.phi", rng.uniform(-np.pi, np.pi, size=d).astype(dt))
    elif config.positional_mode == "learned":
        param("pos.table", rng.normal(0.0, 0.02, size=(config.table_rows, d)).astype(dt))

    for i in range(config.cross_layers):
        for stream in ("txt", "img"):
            attention(f"cross.{i}.{stream}.xattn")
            layer_norm(f"cross.{i}.{stream}.xattn_ln")
            attention(f"cross.{i}.{stream}.sattn")
            layer_norm(f"cross.{i}.{stream}.sattn_ln")
            ffn(f"cross.{i}.{stream}.ffn")
            layer_norm(f"cross.{i}.{stream}.ffn_ln")

    for j in range(config.self_layers):
        attention(f"self.{j}.attn")
        layer_norm(f"self.{j}.attn_ln")
        ffn(f"self.{j}.ffn")
        layer_norm(f"self.{j}.ffn_ln")

    param("cls.w", _xavier(rng, d, 1, dt)[:, 0])
    param("cls.b", np.zeros((), dtype=dt))

    return ModelParams(t, config)


def _affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, w), b)


def _additive_mask(allowed: np.ndarray, dtype) -> np.ndarray:
    """(n, K) boolean keys -> (n, 1, 1, K) additive mask of 0 / -inf."""
    mask = np.where(allowed, 0.0, -np.inf).astype(dtype)
    return mask[:, None, None, :]


def _multi_head_attention(
    params: ModelParams,
    prefix: str,
    query_in: Tensor,
    keyval_in: Tensor,
    key_mask: np.ndarray,
    heads: int,
) -> Tensor:
    """Scaled dot-product attention; fully masked query rows yield zeros."""
    p = params.tensors
    n, k, d = query_in.shape
    dh = d // heads

    def split(x: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(x, (n, k, heads, dh)), (0, 2, 1, 3))

    q = split(_affine(query_in, p[f"{prefix}.wq"], p[f"{prefix}.bq"]))
    key = split(_affine(keyval_in, p[f"{prefix}.wk"], p[f"{prefix}.bk"]))
    val = split(_affine(keyval_in, p[f"{prefix}.wv"], p[f"{prefix}.bv"]))

    scores = ad.scale(ad.matmul(q, ad.transpose(key, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    weights = ad.softmax(scores, additive_mask=key_mask, axis=-1)
    context = ad.matmul(weights, val)
    merged = ad.reshape(ad.transpose(context, (0, 2, 1, 3)), (n, k, d))
    return _affine(merged, p[f"{prefix}.wo"], p[f"{prefix}.bo"])


def _feed_forward(params: ModelParams, prefix: str, x: Tensor) -> Tensor:
    p = params.tensors
    hidden = ad.gelu(_affine(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"]))
    return _affine(hidden, p[f"{prefix}.w2"], p[f"{prefix}.b2"])


class _Dropper:
    """Applies dropout only in training mode, demanding an RNG then."""

    def __init__(self, rate: float, train: bool, rng: np.random.Generator | None):
        if train and rate > 0.0 and rng is None:
            raise ValueError("training with dropout requires an rng")
        self.rate = rate
        self.train = train
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        return ad.dropout(x, self.rate, self.rng, self.train)


def _sublayer(params: ModelParams, ln_prefix: str, residual: Tensor, update: Tensor,
              drop: _Dropper, eps: float) -> Tensor:
    p = params.tensors
    return ad.layer_norm(
        ad.add(residual, drop(update)),
        p[f"{ln_prefix}.gain"], p[f"{ln_prefix}.bias"], eps,
    )


def project_inputs(batch: Batch, params: ModelParams, config: ModelConfig) -> tuple[Tensor, Tensor]:
    """Stage 1: per-post linear projections of both modality streams."""
    dt = config.np_dtype
    p = params.tensors
    text = Tensor(batch.text.astype(dt))
    image = Tensor(batch.image.astype(dt))
    h_text = _affine(text, p["proj.text.w"], p["proj.text.b"])
    h_image = _affine(image, p["proj.image.w"], p["proj.image.b"])
    return h_text, h_image


def forward_projected(
    h_text: Tensor,
    h_image: Tensor,
    batch: Batch,
    params: ModelParams,
    config: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Stage 2: positional augmentation through classification head.

    Split out from ``forward`` so attribution can differentiate with
    respect to the projected per-post inputs.
    """
    dt = config.np_dtype
    eps = config.layer_norm_eps
    drop = _Dropper(config.dropout, train, rng)

    if config.positional_mode != "zero":
        pos = positional_tensor(
            batch.tau.astype(dt), batch.position_index, batch.pad_mask,
            config.positional_mode, params.positional(),
        )
        h_text = ad.add(h_text, pos)
        h_image = ad.add(h_image, pos)

    pad_keys = _additive_mask(batch.pad_mask, dt)
    image_keys = _additive_mask(batch.image_mask, dt)

    for i in range(config.cross_layers):
        t_in, i_in = h_text, h_image
        # Bidirectional cross-attention, both directions reading the
        # other stream's previous-layer state.
        t_cross = _multi_head_attention(params, f"cross.{i}.txt.xattn", t_in, i_in,
                                        image_keys, config.cross_heads)
        i_cross = _multi_head_attention(params, f"cross.{i}.img.xattn", i_in, t_in,
                                        pad_keys, config.cross_heads)
        h_text = _sublayer(params, f"cross.{i}.txt.xattn_ln", t_in, t_cross, drop, eps)
        h_image = _sublayer(params, f"cross.{i}.img.xattn_ln", i_in, i_cross, drop, eps)

        t_self = _multi_head_attention(params, f"cross.{i}.txt.sattn", h_text, h_text,
                                       pad_keys, config.cross_heads)
        i_self = _multi_head_attention(params, f"cross.{i}.img.sattn", h_image, h_image,
                                       image_keys, config.cross_heads)
        h_text = _sublayer(params, f"cross.{i}.txt.sattn_ln", h_text, t_self, drop, eps)
        h_image = _sublayer(params, f"cross.{i}.img.sattn_ln", h_image, i_self, drop, eps)

        h_text = _sublayer(params, f"cross.{i}.txt.ffn_ln", h_text,
                           _feed_forward(params, f"cross.{i}.txt.ffn", h_text), drop, eps)
        h_image = _sublayer(params, f"cross.{i}.img.ffn_ln", h_image,
                            _feed_forward(params, f"cross.{i}.img.ffn", h_image), drop, eps)

    # Per-post fusion: image stream contributes only where an image exists.
    image_gate = batch.image_mask.astype(dt)[:, :, None]
    fused = ad.add(h_text, ad.mul(h_image, image_gate))

    for j in range(config.self_layers):
        attn = _multi_head_attention(params, f"self.{j}.attn", fused, fused,
                                     pad_keys, config.self_heads)
        fused = _sublayer(params, f"self.{j}.attn_ln", fused, attn, drop, eps)
        fused = _sublayer(params, f"self.{j}.ffn_ln", fused,
                          _feed_forward(params, f"self.{j}.ffn", fused), drop, eps)

    pooled = ad.masked_mean(fused, batch.pad_mask, axis=1)
    p = params.tensors
    return ad.add(ad.matmul(pooled, p["cls.w"]), p["cls.b"])


def forward(
    batch: Batch,
    params: ModelParams,
    config: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Per-user logits, shape (n,)."""
    if batch.text.shape[2] != config.text_dim or batch.image.shape[2] != config.image_dim:
        raise ValueError(
            f"batch dims ({batch.text.shape[2]}, {batch.image.shape[2]}) do not match "
            f"config ({config.text_dim}, {config.image_dim})"
        )
    if not batch.pad_mask.any(axis=1).all():
        raise ValueError("batch contains a window with zero real posts")
    h_text, h_image = project_inputs(batch, params, config)
    return forward_projected(h_text, h_image, batch, params, config, train, rng)


def predict_proba(logits) -> np.ndarray:
    """Elementwise sigmoid of logits (Tensor or array) as a numpy array."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    return ad.sigmoid_np(np.asarray(z, dtype=float))


# ---- checkpoint container ----


def save_checkpoint(path: str | Path, params: ModelParams) -> None:
    """Self-describing binary container: config JSON + named f64 tensors."""
    config_blob = json.dumps(params.config.to_json()).encode("utf-8")
    chunks = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(config_blob)), config_blob,
              struct.pack("<I", len(params.tensors))]
    for name, tensor in params.items():
        blob = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(blob)))
        chunks.append(blob)
        chunks.append(struct.pack("<B", tensor.ndim))
        chunks.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        chunks.append(np.asarray(tensor.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> ModelParams:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise ValueError(f"truncated checkpoint (need {n} bytes at {pos})")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(len(CKPT_MAGIC)) != CKPT_MAGIC:
        raise ValueError("bad checkpoint magic")
    version, config_len = struct.unpack("<II", take(8))
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    config = ModelConfig.from_json(json.loads(take(config_len).decode("utf-8")))
    (count,) = struct.unpack("<I", take(4))
    tensors: dict[str, Tensor] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        n_items = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(8 * n_items), dtype="<f8").reshape(shape).astype(config.np_dtype)
        tensors[name] = Tensor(data.copy(), requires_grad=True)
    if pos != len(buf):
        raise ValueError(f"{len(buf) - pos} trailing bytes in checkpoint")
    return ModelParams(tensors, config)
