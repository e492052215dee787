"""Binary cross-entropy training with Adam and a triangular cyclical LR.

An epoch visits every training user exactly once, drawing one fresh window
per user; validation runs majority-vote inference and the best-F1 epoch's
parameters are kept.  Everything is reproducible from the seed.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, Tape, Tensor
from .corpus import CorpusManifest, UserTimeline, split_timelines
from .evaluation import Metrics, compute_metrics, evaluate_timelines
from .model import ModelConfig, ModelParams, forward, init_params, save_checkpoint
from .sampling import make_batch, sampler_for_mode


@dataclass
class TrainConfig:
    base_lr: float = 1e-5
    max_lr: float = 1e-4
    cycle_epochs: int = 10
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    grad_clip_norm: float | None = 1.0
    eval_every: int = 1
    early_stop_f1: float | None = None
    strict: bool = False

    def __post_init__(self):
        if self.base_lr >= self.max_lr:
            raise ValueError(f"base_lr {self.base_lr} must be < max_lr {self.max_lr}")
        if self.cycle_epochs <= 0:
            raise ValueError(f"cycle_epochs must be positive, got {self.cycle_epochs}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def bce_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on raw logits (stable log-sum-exp form)."""
    return ad.bce_with_logits(logits, np.asarray(labels, dtype=logits.dtype))


def cyclical_lr(step: int, steps_per_epoch: int, config: TrainConfig) -> float:
    """Triangular wave: base -> max over half a cycle, back over the rest."""
    if step < 0:
        raise ValueError("step must be >= 0")
    cycle_steps = config.cycle_epochs * steps_per_epoch
    half = cycle_steps / 2.0
    pos = step % cycle_steps
    span = config.max_lr - config.base_lr
    if pos <= half:
        return config.base_lr + span * (pos / half)
    return config.base_lr + span * ((cycle_steps - pos) / half)


@dataclass
class AdamState:
    """First/second moment buffers mirroring the parameter map."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={name: np.zeros_like(t.data) for name, t in params.items()},
            v={name: np.zeros_like(t.data) for name, t in params.items()},
        )


def adam_step(params: ModelParams, state: AdamState, lr: float, strict: bool = False) -> None:
    """Bias-corrected Adam update in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, t in params.items():
        g = t.grad
        if g is None:
            raise ValueError(f"parameter {name} has no gradient")
        if strict and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        t.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def global_grad_norm(params: ModelParams) -> float:
    total = 0.0
    for _, t in params.items():
        if t.grad is not None:
            total += float(np.sum(t.grad * t.grad))
    return float(np.sqrt(total))


def clip_gradients(params: ModelParams, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most ``max_norm``."""
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for _, t in params.items():
            if t.grad is not None:
                t.grad *= factor
    return norm


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    lr_last: float
    val_f1: float | None
    val_auc: float | None
    seconds: float

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "mean_loss": self.mean_loss,
            "lr_last": self.lr_last,
            "val_f1": self.val_f1,
            "val_auc": self.val_auc,
            "seconds": self.seconds,
        }


@dataclass
class TrainResult:
    best_params: ModelParams
    best_epoch: int
    best_val_metrics: Metrics | None
    final_params: ModelParams
    log: list[EpochLog] = field(default_factory=list)


def train(
    timelines: list[UserTimeline],
    manifest: CorpusManifest,
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: str | Path | None = None,
    quiet: bool = True,
) -> TrainResult:
    """Train on the manifest's train split, select on val F1.

    When ``out_dir`` is given, writes ``checkpoint.bin`` (best epoch) and an
    append-only ``train_log.jsonl`` with one record per epoch.
    """
    groups = split_timelines(timelines, manifest)
    train_tl, val_tl = groups["train"], groups["val"]
    if not train_tl:
        raise ValueError("empty train split")
    if not val_tl:
        raise ValueError("empty val split")

    root = np.random.SeedSequence(train_config.seed)
    init_key, sample_key, drop_key, eval_key = root.spawn(4)
    rng_sample = np.random.default_rng(sample_key)
    rng_drop = np.random.default_rng(drop_key)
    rng_eval = np.random.default_rng(eval_key)

    params = init_params(model_config, np.random.default_rng(init_key))
    state = AdamState.create(params)
    sampler = sampler_for_mode(model_config.positional_mode)
    steps_per_epoch = int(np.ceil(len(train_tl) / train_config.batch_size))

    out_path = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        log_file = (out_path / "train_log.jsonl").open("a", encoding="utf-8")

    best_params = params.copy()
    best_epoch = -1
    best_f1 = -1.0
    best_metrics: Metrics | None = None
    logs: list[EpochLog] = []
    global_step = 0

    try:
        for epoch in range(train_config.epochs):
            started = time.perf_counter()
            order = rng_sample.permutation(len(train_tl))
            windows = [
                sampler(train_tl[i], model_config.window_size, rng_sample, manifest.image_dim)
                for i in order
            ]
            losses = []
            lr = train_config.base_lr
            for lo in range(0, len(windows), train_config.batch_size):
                batch = make_batch(windows[lo:lo + train_config.batch_size])
                params.zero_grads()
                with Tape() as tape:
                    logits = forward(batch, params, model_config, train=True, rng=rng_drop)
                    loss = bce_loss(logits, batch.labels)
                if not np.isfinite(loss.data):
                    raise NumericError(
                        f"non-finite training loss at epoch {epoch}, step {global_step}"
                    )
                tape.backward(loss)
                if train_config.grad_clip_norm is not None:
                    clip_gradients(params, train_config.grad_clip_norm)
                lr = cyclical_lr(global_step, steps_per_epoch, train_config)
                adam_step(params, state, lr, strict=train_config.strict)
                global_step += 1
                losses.append(float(loss.data))

            val_f1 = val_auc = None
            run_eval = (epoch % train_config.eval_every == 0) or epoch == train_config.epochs - 1
            if run_eval:
                metrics, _ = evaluate_timelines(
                    val_tl, params, model_config, rng_eval, manifest.image_dim
                )
                val_f1, val_auc = metrics.f1, metrics.auc
                if metrics.f1 > best_f1:
                    best_f1 = metrics.f1
                    best_epoch = epoch
                    best_params = params.copy()
                    best_metrics = metrics

            record = EpochLog(
                epoch=epoch,
                mean_loss=float(np.mean(losses)),
                lr_last=lr,
                val_f1=val_f1,
                val_auc=val_auc,
                seconds=time.perf_counter() - started,
            )
            logs.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record.to_json()) + "\n")
                log_file.flush()
            if not quiet:
                print(f"epoch {epoch}: loss {record.mean_loss:.4f} val_f1 {val_f1}")

            if (
                train_config.early_stop_f1 is not None
                and val_f1 is not None
                and val_f1 >= train_config.early_stop_f1
            ):
                break
    finally:
        if log_file is not None:
            log_file.close()

    if out_path is not None:
        save_checkpoint(out_path / "checkpoint.bin", best_params)

    return TrainResult(
        best_params=best_params,
        best_epoch=best_epoch,
        best_val_metrics=best_metrics,
        final_params=params,
        log=logs,
    )


def stratified_folds(labels: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per user, class ratios balanced to within one user per fold."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(labels) < k:
        raise ValueError(f"need at least {k} users for {k} folds")
    fold = np.empty(len(labels), dtype=int)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        fold[idx] = np.arange(len(idx)) % k
    return fold


@dataclass
class KFoldResult:
    per_fold: list[Metrics]
    mean: dict[str, float]
    std: dict[str, float]

    def to_json(self) -> dict:
        return {
            "per_fold": [m.to_json() for m in self.per_fold],
            "mean": self.mean,
            "std": self.std,
        }


def kfold(
    timelines: list[UserTimeline],
    manifest: CorpusManifest,
    model_config: ModelConfig,
    train_config: TrainConfig,
    k: int = 5,
    val_fraction: float = 0.15,
    out_dir: str | Path | None = None,
) -> KFoldResult:
    """User-level stratified k-fold cross-validation.

    Each fold trains on the other k-1 parts (with a small stratified val
    carve-out for checkpoint selection) and is scored on the held-out part.
    """
    labels = np.array([tl.label for tl in timelines])
    rng = np.random.default_rng(np.random.SeedSequence(train_config.seed).spawn(1)[0])
    fold_of = stratified_folds(labels, k, rng)

    per_fold: list[Metrics] = []
    for f in range(k):
        test_idx = np.flatnonzero(fold_of == f)
        rest_idx = np.flatnonzero(fold_of != f)
        if len(np.unique(labels[test_idx])) < 2:
            raise ValueError(f"fold {f} does not contain both classes")
        # stratified val carve-out from the training parts
        val_ids: set[int] = set()
        for cls in (0, 1):
            cls_idx = [i for i in rest_idx if labels[i] == cls]
            n_val = max(1, int(round(val_fraction * len(cls_idx))))
            val_ids.update(cls_idx[:n_val])
        splits = {}
        for i in test_idx:
            splits[timelines[i].user_id] = "test"
        for i in rest_idx:
            splits[timelines[i].user_id] = "val" if i in val_ids else "train"
        fold_manifest = CorpusManifest(
            text_dim=manifest.text_dim, image_dim=manifest.image_dim, splits=splits
        )
        fold_out = Path(out_dir) / f"fold_{f}" if out_dir is not None else None
        result = train(timelines, fold_manifest, model_config, train_config, out_dir=fold_out)
        test_tl = [timelines[i] for i in test_idx]
        rng_eval = np.random.default_rng(np.random.SeedSequence((train_config.seed, f)).spawn(1)[0])
        metrics, _ = evaluate_timelines(
            test_tl, result.best_params, model_config, rng_eval, manifest.image_dim
        )
        per_fold.append(metrics)

    def agg(field_name: str, reducer) -> float:
        vals = [getattr(m, field_name) for m in per_fold]
        vals = [v for v in vals if v is not None]
        return float(reducer(vals)) if vals else float("nan")

    mean = {name: agg(name, np.mean) for name in ("f1", "precision", "recall", "accuracy", "auc")}
    std = {name: agg(name, np.std) for name in ("f1", "precision", "recall", "accuracy", "auc")}
    return KFoldResult(per_fold=per_fold, mean=mean, std=std)
