"""Majority-vote inference over repeated window samples, plus metrics.

Each user is classified from 10 independently sampled windows; the final
label is the majority decision, with 5-5 ties resolved by the mean
probability (and an exact 0.5 mean resolved to positive, favoring
sensitivity in a screening setting).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .corpus import UserTimeline
from .model import ModelConfig, ModelParams, forward, predict_proba
from .sampling import PostWindow, make_batch, sampler_for_mode

N_VOTES = 10


@dataclass
class VoteResult:
    user_id: str
    probabilities: np.ndarray   # (N_VOTES,)
    votes_positive: int
    votes_negative: int
    final_label: int
    mean_probability: float
    tie_broken: bool

    def to_json(self) -> dict:
        return {
            "user_id": self.user_id,
            "probabilities": [float(p) for p in self.probabilities],
            "votes_positive": self.votes_positive,
            "votes_negative": self.votes_negative,
            "final_label": self.final_label,
            "mean_probability": self.mean_probability,
            "tie_broken": self.tie_broken,
        }


@dataclass
class Metrics:
    f1: float
    precision: float
    recall: float
    accuracy: float
    auc: float | None
    tp: int
    fp: int
    fn: int
    tn: int

    def to_json(self) -> dict:
        return {
            "f1": self.f1,
            "precision": self.precision,
            "recall": self.recall,
            "accuracy": self.accuracy,
            "auc": self.auc,
            "confusion": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn},
        }


def majority_vote(user_id: str, probs: np.ndarray) -> VoteResult:
    votes_pos = int((probs > 0.5).sum())
    votes_neg = len(probs) - votes_pos
    mean_p = float(probs.mean())
    tie = votes_pos == votes_neg
    if tie:
        final = 1 if mean_p >= 0.5 else 0
    else:
        final = 1 if votes_pos > votes_neg else 0
    return VoteResult(
        user_id=user_id,
        probabilities=probs,
        votes_positive=votes_pos,
        votes_negative=votes_neg,
        final_label=final,
        mean_probability=mean_p,
        tie_broken=tie,
    )


def predict_user(
    timeline: UserTimeline,
    params: ModelParams,
    config: ModelConfig,
    rng: np.random.Generator,
    image_dim: int | None = None,
) -> VoteResult:
    """Ten sampled windows, ten probabilities, one majority decision."""
    sampler = sampler_for_mode(config.positional_mode)
    windows = [sampler(timeline, config.window_size, rng, image_dim) for _ in range(N_VOTES)]
    logits = forward(make_batch(windows), params, config, train=False)
    return majority_vote(timeline.user_id, predict_proba(logits))


def evaluate_timelines(
    timelines: list[UserTimeline],
    params: ModelParams,
    config: ModelConfig,
    rng: np.random.Generator,
    image_dim: int | None = None,
    max_batch_windows: int = 320,
) -> tuple[Metrics, list[VoteResult]]:
    """Majority-vote every user, batching windows across users for speed."""
    sampler = sampler_for_mode(config.positional_mode)
    windows: list[PostWindow] = []
    for tl in timelines:
        windows.extend(sampler(tl, config.window_size, rng, image_dim) for _ in range(N_VOTES))

    probs = np.empty(len(windows))
    for lo in range(0, len(windows), max_batch_windows):
        chunk = windows[lo:lo + max_batch_windows]
        probs[lo:lo + len(chunk)] = predict_proba(forward(make_batch(chunk), params, config, train=False))

    results = [
        majority_vote(tl.user_id, probs[i * N_VOTES:(i + 1) * N_VOTES])
        for i, tl in enumerate(timelines)
    ]
    labels = np.array([tl.label for tl in timelines])
    predictions = np.array([r.final_label for r in results])
    mean_probs = np.array([r.mean_probability for r in results])
    return compute_metrics(predictions, labels, mean_probs), results


def compute_metrics(
    predictions: np.ndarray,
    labels: np.ndarray,
    probabilities: np.ndarray | None = None,
) -> Metrics:
    """Positive-class F1/precision/recall, accuracy, and rank-based AUC.

    AUC counts tied score pairs as one half and is reported as None when
    only one class is present (undefined, not zero).
    """
    predictions = np.asarray(predictions, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels differ in length")
    if probabilities is not None and len(probabilities) != len(labels):
        raise ValueError("probabilities and labels differ in length")

    tp = int(np.sum((predictions == 1) & (labels == 1)))
    fp = int(np.sum((predictions == 1) & (labels == 0)))
    fn = int(np.sum((predictions == 0) & (labels == 1)))
    tn = int(np.sum((predictions == 0) & (labels == 0)))

    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = (tp + tn) / len(labels) if len(labels) else 0.0

    auc = None
    if probabilities is not None:
        auc = auc_from_scores(np.asarray(probabilities, dtype=float), labels)

    return Metrics(f1=f1, precision=precision, recall=recall, accuracy=accuracy,
                   auc=auc, tp=tp, fp=fp, fn=fn, tn=tn)


def auc_from_scores(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Rank-statistic AUC (ties at half weight); None when one class only."""
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
