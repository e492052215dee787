"""Integrated-gradients attribution of the logit to individual posts.

The path runs from all-zero projected post embeddings (masks and slot
times unchanged) to the actual projected inputs; the line integral is
approximated with the trapezoid rule.  Each post's score sums the
attribution over both modality streams, so padded slots and masked image
slots score exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, Tape, Tensor
from .model import ModelConfig, ModelParams, forward_projected, predict_proba, project_inputs
from .sampling import PostWindow, make_batch


@dataclass
class AttributionReport:
    user_id: str
    post_scores: np.ndarray       # (K,), exactly 0 on padded slots
    ranking: list[int]            # real slot indices, descending score
    predicted_probability: float
    logit: float
    baseline_logit: float
    completeness_residual: float  # |sum(scores) - (logit - baseline)| / |logit - baseline|
    steps: int
    tau_hours: np.ndarray
    source_indices: np.ndarray
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        posts = [
            {
                "slot": int(slot),
                "source_index": int(self.source_indices[slot]),
                "tau_hours": float(self.tau_hours[slot]),
                "score": float(self.post_scores[slot]),
            }
            for slot in self.ranking
        ]
        return {
            "user_id": self.user_id,
            "steps": self.steps,
            "logit": self.logit,
            "baseline_logit": self.baseline_logit,
            "predicted_probability": self.predicted_probability,
            "completeness_residual": self.completeness_residual,
            "posts": posts,
            "flags": self.flags,
        }


def integrated_gradients(
    window: PostWindow,
    params: ModelParams,
    config: ModelConfig,
    steps: int = 64,
    chunk_size: int = 64,
    trained: bool = True,
) -> AttributionReport:
    """Per-post attribution of the window's logit.

    ``steps`` counts the interpolation points including both endpoints;
    the completeness residual it reports shrinks as steps grow.
    """
    if steps < 16:
        raise ValueError(f"steps must be >= 16, got {steps}")

    base_batch = make_batch([window])
    h_text, h_image = project_inputs(base_batch, params, config)
    x_text = h_text.data[0]   # (K, d) actual projected inputs
    x_image = h_image.data[0]

    alphas = np.linspace(0.0, 1.0, steps)
    weights = np.full(steps, 1.0 / (steps - 1))
    weights[0] *= 0.5
    weights[-1] *= 0.5

    avg_grad_text = np.zeros_like(x_text)
    avg_grad_image = np.zeros_like(x_image)
    logits = np.empty(steps)

    for lo in range(0, steps, chunk_size):
        a = alphas[lo:lo + chunk_size]
        n = len(a)
        chunk_batch = make_batch([window] * n)
        ht = Tensor(a[:, None, None] * x_text, requires_grad=True)
        hi = Tensor(a[:, None, None] * x_image, requires_grad=True)
        with Tape() as tape:
            out = forward_projected(ht, hi, chunk_batch, params, config, train=False)
            total = ad.reduce_sum(out)
        tape.backward(total)
        if not (np.all(np.isfinite(ht.grad)) and np.all(np.isfinite(hi.grad))):
            raise NumericError("non-finite gradients during path integration")
        logits[lo:lo + n] = out.data
        w = weights[lo:lo + n][:, None, None]
        avg_grad_text += (w * ht.grad).sum(axis=0)
        avg_grad_image += (w * hi.grad).sum(axis=0)

    scores = (x_text * avg_grad_text).sum(axis=-1) + (x_image * avg_grad_image).sum(axis=-1)
    scores[~window.pad_mask] = 0.0

    logit = float(logits[-1])
    baseline_logit = float(logits[0])
    delta = logit - baseline_logit
    residual = abs(float(scores.sum()) - delta) / max(abs(delta), 1e-12)

    real_slots = np.flatnonzero(window.pad_mask)
    ranking = sorted((int(s) for s in real_slots), key=lambda s: -scores[s])

    return AttributionReport(
        user_id=window.user_id,
        post_scores=scores,
        ranking=ranking,
        predicted_probability=float(predict_proba(np.array([logit]))[0]),
        logit=logit,
        baseline_logit=baseline_logit,
        completeness_residual=residual,
        steps=steps,
        tau_hours=window.tau,
        source_indices=window.source_indices,
        flags=[] if trained else ["untrained_params"],
    )


def format_report(report: AttributionReport, timestamps: np.ndarray | None = None) -> str:
    """Human-readable ranked table: slot, post time, attribution score."""
    from datetime import datetime, timezone

    time_col = "posted (UTC)" if timestamps is not None else "t+hours"
    lines = [
        f"user {report.user_id}: p(positive) = {report.predicted_probability:.4f} "
        f"(logit {report.logit:+.4f}, baseline {report.baseline_logit:+.4f}, "
        f"completeness residual {report.completeness_residual:.2e})",
        f"{'rank':>4}  {'slot':>4}  {'post#':>6}  {time_col:>19}  {'score':>12}",
    ]
    for rank, slot in enumerate(report.ranking, start=1):
        src = int(report.source_indices[slot])
        if timestamps is not None and src >= 0:
            moment = datetime.fromtimestamp(float(timestamps[src]), tz=timezone.utc)
            when = moment.strftime("%Y-%m-%d %H:%M:%S")
        else:
            when = f"{report.tau_hours[slot]:19.2f}"
        lines.append(
            f"{rank:>4}  {slot:>4}  {src:>6}  {when:>19}  {report.post_scores[slot]:>12.6f}"
        )
    return "\n".join(lines)
