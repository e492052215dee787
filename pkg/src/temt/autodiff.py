"""Dense-tensor engine with tape-based reverse-mode differentiation.

Covers exactly the operator set the classifier needs: affine maps, shape
surgery, masked softmax, layer norm, pointwise nonlinearities, masked mean
pooling, dropout and table lookups.  Arrays are plain numpy; a ``Tape``
records every primitive applied inside its ``with`` block and replays
analytic gradients in reverse on ``backward``.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "NumericError",
    "Tensor",
    "Tape",
    "set_strict",
    "sigmoid_np",
    "matmul",
    "add",
    "mul",
    "scale",
    "concat",
    "slice_",
    "transpose",
    "reshape",
    "softmax",
    "layer_norm",
    "relu",
    "gelu",
    "sigmoid",
    "sin",
    "reciprocal",
    "masked_mean",
    "dropout",
    "embedding_lookup",
    "reduce_sum",
    "bce_with_logits",
]

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class NumericError(RuntimeError):
    """Non-finite value produced where finiteness is required."""


# Strict mode makes every primitive validate its output for NaN/inf.
# Off by default: it costs one pass over each result.
_strict = False


def set_strict(enabled: bool) -> None:
    global _strict
    _strict = bool(enabled)


class Tensor:
    """A dense array plus an optional gradient buffer.

    ``grad`` is allocated lazily on first accumulation; parameters created
    with ``requires_grad=True`` get a zero buffer up front so optimizers can
    rely on it existing.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # Small amount of sugar; heavy lifting stays in module functions.
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


_active_tape: "Tape | None" = None


class Tape:
    """Ordered record of primitives for one backward traversal.

    Records are appended in forward execution order, so walking them in
    reverse is a valid reverse-topological sweep.  A tape is single use:
    ``backward`` consumes it.
    """

    def __init__(self):
        self._records: list = []
        self._consumed = False
        self._prev: Tape | None = None

    def __enter__(self) -> "Tape":
        global _active_tape
        self._prev = _active_tape
        _active_tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _active_tape
        _active_tape = self._prev
        self._prev = None

    def backward(self, output: Tensor, seed=None) -> None:
        """Accumulate d(output)/d(input) into every recorded input's grad.

        ``seed`` defaults to ones (the natural choice for a scalar loss).
        """
        if self._consumed:
            raise RuntimeError("tape already consumed by a previous backward pass")
        if not output.requires_grad:
            raise ValueError("output was not recorded on this tape")
        if seed is None:
            seed = np.ones_like(output.data)
        _accumulate(output, np.asarray(seed, dtype=output.data.dtype))
        for backward_fn in reversed(self._records):
            backward_fn()
        self._consumed = True


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x))


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward_fn=None, name: str = "") -> Tensor:
    """Create an op result, registering the backward closure if needed."""
    if _strict and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values in {name or 'op'} output")
    needs_grad = _active_tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data)
    if needs_grad:
        out.requires_grad = True
        _active_tape._records.append(backward_fn(out))
    return out


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reverse numpy broadcasting: reduce ``g`` back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---- linear algebra ----


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data @ b.data

    def backward_fn(out):
        def backward():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                if b.ndim == 1:
                    # out = a @ b with vector b: g (..., m) -> ga (..., m, n)
                    ga = g[..., None] * b.data
                else:
                    ga = g @ np.swapaxes(b.data, -1, -2)
                _accumulate(a, _sum_to_shape(ga, a.shape))
            if b.requires_grad:
                if a.ndim == 1:
                    gb = a.data[:, None] * g if b.ndim > 1 else a.data * g
                elif b.ndim == 1:
                    # g (..., m) missing last axis of a (..., m, n)? here out = a @ b with b vector:
                    # out (..., m), gb_j = sum over leading dims of a[..., :, j] * g[..., :]
                    gb = np.einsum("...i,...ij->j", g, a.data)
                else:
                    gb = np.swapaxes(a.data, -1, -2) @ g
                _accumulate(b, _sum_to_shape(gb, b.shape))

        return backward

    return _make(data, (a, b), backward_fn, "matmul")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward_fn(out):
        def backward():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accumulate(a, _sum_to_shape(g, a.shape))
            if b.requires_grad:
                _accumulate(b, _sum_to_shape(g, b.shape))

        return backward

    return _make(data, (a, b), backward_fn, "add")


def mul(a, b) -> Tensor:
    """Elementwise (broadcasting) product."""
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward_fn(out):
        def backward():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accumulate(a, _sum_to_shape(g * b.data, a.shape))
            if b.requires_grad:
                _accumulate(b, _sum_to_shape(g * a.data, b.shape))

        return backward

    return _make(data, (a, b), backward_fn, "mul")


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    data = a.data * c

    def backward_fn(out):
        def backward():
            if out.grad is not None and a.requires_grad:
                _accumulate(a, out.grad * c)

        return backward

    return _make(data, (a,), backward_fn, "scale")


# ---- shape surgery ----


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    extents = [t.data.shape[axis] for t in ts]

    def backward_fn(out):
        def backward():
            g = out.grad
            if g is None:
                return
            offset = 0
            for t, extent in zip(ts, extents):
                if t.requires_grad:
                    idx = [np.s_[:]] * g.ndim
                    idx[axis] = np.s_[offset:offset + extent]
                    _accumulate(t, g[tuple(idx)])
                offset += extent

        return backward

    return _make(data, ts, backward_fn, "concat")


def slice_(a, key) -> Tensor:
    """Basic (view-style) slicing; ``key`` is anything numpy accepts for it."""
    a = _as_tensor(a)
    data = a.data[key]

    def backward_fn(out):
        def backward():
            g = out.grad
            if g is None or not a.requires_grad:
                return
            full = np.zeros_like(a.data)
            full[key] = g
            _accumulate(a, full)

        return backward

    return _make(data.copy(), (a,), backward_fn, "slice")


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    data = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward_fn(out):
        def backward():
            if out.grad is not None and a.requires_grad:
                _accumulate(a, np.transpose(out.grad, inverse))

        return backward

    return _make(data, (a,), backward_fn, "transpose")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def backward_fn(out):
        def backward():
            if out.grad is not None and a.requires_grad:
                _accumulate(a, out.grad.reshape(a.shape))

        return backward

    return _make(data, (a,), backward_fn, "reshape")


# ---- normalization and attention ----


def softmax(a, additive_mask: np.ndarray | None = None, axis: int = -1) -> Tensor:
    """Row-wise softmax with an optional additive mask (0 or -inf entries).

    Fully masked rows yield all-zero weights instead of NaN, so a slot that
    may attend nowhere contributes nothing and the residual path carries it.
    """
    a = _as_tensor(a)
    scores = a.data + additive_mask if additive_mask is not None else a.data
    rowmax = np.max(scores, axis=axis, keepdims=True)
    # Fully masked rows have rowmax == -inf; shift by 0 there so exp(-inf)
    # still evaluates to exactly 0 without producing -inf - -inf = NaN.
    shift = np.where(np.isfinite(rowmax), rowmax, 0.0)
    expd = np.exp(scores - shift)
    denom = expd.sum(axis=axis, keepdims=True)
    safe = np.where(denom > 0.0, denom, 1.0)
    data = expd / safe

    def backward_fn(out):
        s = data

        def backward():
            g = out.grad
            if g is None or not a.requires_grad:
                return
            inner = np.sum(g * s, axis=axis, keepdims=True)
            _accumulate(a, s * (g - inner))

        return backward

    return _make(data, (a,), backward_fn, "softmax")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then gain+bias."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    n = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def backward_fn(out):
        def backward():
            g = out.grad
            if g is None:
                return
            if gain.requires_grad:
                _accumulate(gain, _sum_to_shape(g * xhat, gain.shape))
            if bias.requires_grad:
                _accumulate(bias, _sum_to_shape(g, bias.shape))
            if x.requires_grad:
                dxhat = g * gain.data
                dvar = np.sum(dxhat * xc, axis=-1, keepdims=True) * (-0.5) * inv**3
                dmu = -np.sum(dxhat, axis=-1, keepdims=True) * inv + dvar * np.mean(-2.0 * xc, axis=-1, keepdims=True)
                dx = dxhat * inv + dvar * (2.0 / n) * xc + dmu / n
                _accumulate(x, dx)

        return backward

    return _make(data, (x, gain, bias), backward_fn, "layer_norm")


# ---- pointwise nonlinearities ----


def relu(a) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def backward_fn(out):
        def backward():
            if out.grad is not None and a.requires_grad:
                _accumulate(a, out.grad * (a.data > 0.0))

        return backward

    return _make(data, (a,), backward_fn, "relu")


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = _as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    data = a.data * cdf

    def backward_fn(out):
        def backward():
            if out.grad is not None and a.requires_grad:
                pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
                _accumulate(a, out.grad * (cdf + a.data * pdf))

        return backward

    return _make(data, (a,), backward_fn, "gelu")


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    pos = x >= 0
    out = np.empty_like(x)
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    data = sigmoid_np(a.data)

    def backward_fn(out):
        def backward():
            if out.grad is not None and a.requires_grad:
                _accumulate(a, out.grad * data * (1.0 - data))

        return backward

    return _make(data, (a,), backward_fn, "sigmoid")


def sin(a) -> Tensor:
    a = _as_tensor(a)
    data = np.sin(a.data)

    def backward_fn(out):
        def backward():
            if out.grad is not None and a.requires_grad:
                _accumulate(a, out.grad * np.cos(a.data))

        return backward

    return _make(data, (a,), backward_fn, "sin")


def reciprocal(a) -> Tensor:
    a = _as_tensor(a)
    data = 1.0 / a.data

    def backward_fn(out):
        def backward():
            if out.grad is not None and a.requires_grad:
                _accumulate(a, -out.grad * data * data)

        return backward

    return _make(data, (a,), backward_fn, "reciprocal")


# ---- reductions ----


def masked_mean(x, mask: np.ndarray, axis: int) -> Tensor:
    """Mean over entries where ``mask`` is true, along ``axis``.

    ``mask`` matches ``x`` up to (but not including) trailing feature axes
    and is broadcast across them.  Raises on any all-false reduction group.
    """
    x = _as_tensor(x)
    maskf = np.asarray(mask, dtype=x.dtype)
    while maskf.ndim < x.ndim:
        maskf = maskf[..., None]
    counts = maskf.sum(axis=axis)
    if np.any(counts == 0):
        raise ValueError("masked_mean over an empty mask group")
    data = (x.data * maskf).sum(axis=axis) / counts

    def backward_fn(out):
        def backward():
            g = out.grad
            if g is None or not x.requires_grad:
                return
            gx = np.expand_dims(g / counts, axis) * maskf
            _accumulate(x, gx)

        return backward

    return _make(data, (x,), backward_fn, "masked_mean")


def reduce_sum(a) -> Tensor:
    a = _as_tensor(a)
    data = np.asarray(a.data.sum())

    def backward_fn(out):
        def backward():
            if out.grad is not None and a.requires_grad:
                _accumulate(a, np.broadcast_to(out.grad, a.shape).astype(a.dtype))

        return backward

    return _make(data, (a,), backward_fn, "reduce_sum")


# ---- stochastic / lookup ----


def dropout(x, rate: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout: active only when ``train`` and ``rate > 0``."""
    x = _as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    data = x.data * keep

    def backward_fn(out):
        def backward():
            if out.grad is not None and x.requires_grad:
                _accumulate(x, out.grad * keep)

        return backward

    return _make(data, (x,), backward_fn, "dropout")


def embedding_lookup(table, indices: np.ndarray) -> Tensor:
    """Gather rows of ``table`` (R x d) at integer ``indices``."""
    table = _as_tensor(table)
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"lookup index out of range for table with {table.shape[0]} rows")
    data = table.data[idx]

    def backward_fn(out):
        def backward():
            g = out.grad
            if g is None or not table.requires_grad:
                return
            gtab = np.zeros_like(table.data)
            np.add.at(gtab, idx.ravel(), g.reshape(-1, table.shape[-1]))
            _accumulate(table, gtab)

        return backward

    return _make(data, (table,), backward_fn, "embedding_lookup")


def bce_with_logits(logits, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy from raw logits, in log-sum-exp stable form.

    loss = mean(softplus(z) - y * z), softplus(z) = max(z, 0) + log1p(exp(-|z|)).
    """
    logits = _as_tensor(logits)
    y = np.asarray(targets, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise ValueError(f"labels shape {y.shape} != logits shape {logits.shape}")
    z = logits.data
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    data = np.asarray((softplus - y * z).mean())

    def backward_fn(out):
        def backward():
            g = out.grad
            if g is None or not logits.requires_grad:
                return
            _accumulate(logits, g * (sigmoid_np(z) - y) / z.size)

        return backward

    return _make(data, (logits,), backward_fn, "bce_with_logits")
