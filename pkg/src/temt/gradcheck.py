"""Central finite-difference gradient verification.

The oracle perturbs raw numpy buffers and re-runs the forward function; it
never touches the tape machinery, so it stays an independent check on the
analytic backward pass.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .autodiff import Tape, Tensor


def central_difference(f: Callable[[], float], buffer: np.ndarray, h: float) -> np.ndarray:
    """d f / d buffer by central differences, perturbing one entry at a time.

    ``f`` must read ``buffer`` afresh on every call (by reference).
    """
    grad = np.zeros_like(buffer)
    flat = buffer.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, atol: float) -> float:
    """Worst per-component relative error, with an absolute floor.

    The floor absorbs the oracle's own truncation/cancellation noise on
    near-zero components; without it a true gradient of 1e-12 would report
    a huge spurious ratio.
    """
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol)
    return float(np.max(diff / denom)) if diff.size else 0.0


def check_gradients(
    forward: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-6,
) -> dict[str, float]:
    """Compare tape gradients of a scalar ``forward()`` against the FD oracle.

    Returns the per-parameter worst relative error and raises AssertionError
    on the first parameter exceeding ``rtol``.
    """
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = forward()
    if loss.shape != ():
        raise ValueError("check_gradients expects a scalar forward output")
    tape.backward(loss)

    errors: dict[str, float] = {}
    for name, p in params.items():
        numeric = central_difference(lambda: float(forward().data), p.data, h)
        err = max_rel_error(p.grad, numeric, atol)
        errors[name] = err
        assert err < rtol, f"gradient mismatch for {name}: rel err {err:.3e} >= {rtol:.1e}"
    return errors
