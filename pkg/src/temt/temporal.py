"""Per-post positional vectors: time2vec, learned index table, or zero.

time2vec maps elapsed time tau (hours) to a learnable vector with one
linear element and d-1 sine elements.  Raw tau is first bounded by
g(tau) = 1/(tau + eps) so arbitrarily large gaps cannot blow up the
pre-activation; an identity g is kept for algebraic tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .sampling import PostWindow

POSITIONAL_MODES = ("time2vec", "learned", "zero")

G_MODES = ("reciprocal", "identity")


@dataclass
class Time2VecParams:
    """Learnable frequency/phase vectors; element 0 is the linear term."""

    omega: Tensor
    phi: Tensor
    epsilon: float = 1.0
    g_mode: str = "reciprocal"

    def __post_init__(self):
        if self.omega.shape != self.phi.shape or self.omega.ndim != 1:
            raise ValueError(f"omega/phi must be equal-length vectors, got {self.omega.shape} / {self.phi.shape}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.g_mode not in G_MODES:
            raise ValueError(f"unknown g_mode {self.g_mode!r}")

    @property
    def dim(self) -> int:
        return self.omega.shape[0]

    @classmethod
    def create(cls, dim: int, rng: np.random.Generator, dtype=np.float64,
               epsilon: float = 1.0, g_mode: str = "reciprocal") -> "Time2VecParams":
        # omega spans [-1, 1]; phi spans one period.
        omega = Tensor(rng.uniform(-1.0, 1.0, size=dim).astype(dtype), requires_grad=True)
        phi = Tensor(rng.uniform(-np.pi, np.pi, size=dim).astype(dtype), requires_grad=True)
        return cls(omega=omega, phi=phi, epsilon=epsilon, g_mode=g_mode)


@dataclass
class LearnedPositionalTable:
    """K_max x d_model table indexed by within-window slot position."""

    table: Tensor

    @property
    def k_max(self) -> int:
        return self.table.shape[0]

    @classmethod
    def create(cls, k_max: int, dim: int, rng: np.random.Generator, dtype=np.float64) -> "LearnedPositionalTable":
        return cls(table=Tensor((rng.normal(0.0, 0.02, size=(k_max, dim))).astype(dtype), requires_grad=True))


def g_transform(tau: np.ndarray, epsilon: float, g_mode: str) -> np.ndarray:
    """Bound raw elapsed hours: reciprocal 1/(tau+eps), or identity."""
    if g_mode == "reciprocal":
        return 1.0 / (tau + epsilon)
    if g_mode == "identity":
        return np.asarray(tau, dtype=float)
    raise ValueError(f"unknown g_mode {g_mode!r}")


def time2vec(tau, params: Time2VecParams) -> Tensor:
    """Vector time encoding of tau (hours, >= 0; scalar or any array shape).

    Output appends the encoding axis: element 0 is omega_0*g(tau)+phi_0,
    elements 1..k are sin(omega_i*g(tau)+phi_i).
    """
    tau_arr = np.asarray(tau, dtype=params.omega.dtype)
    if not np.all(np.isfinite(tau_arr)):
        raise ValueError("tau must be finite")
    if np.any(tau_arr < 0):
        raise ValueError("tau must be non-negative")
    g = g_transform(tau_arr, params.epsilon, params.g_mode)[..., None]  # (..., 1)
    pre = ad.add(ad.mul(params.omega, g), params.phi)                   # (..., d)
    linear = ad.slice_(pre, (..., np.s_[0:1]))
    periodic = ad.sin(ad.slice_(pre, (..., np.s_[1:])))
    return ad.concat([linear, periodic], axis=-1)


def positional_tensor(
    tau: np.ndarray,
    position_index: np.ndarray,
    pad_mask: np.ndarray,
    mode: str,
    params: Time2VecParams | LearnedPositionalTable | None = None,
    d_model: int | None = None,
) -> Tensor:
    """Batched positional vectors (n, K, d); padded slots give zero rows."""
    if mode == "time2vec":
        if not isinstance(params, Time2VecParams):
            raise ValueError("time2vec mode needs Time2VecParams")
        pad_col = pad_mask.astype(params.omega.dtype)[..., None]
        return ad.mul(time2vec(tau, params), pad_col)
    if mode == "learned":
        if not isinstance(params, LearnedPositionalTable):
            raise ValueError("learned mode needs a LearnedPositionalTable")
        k = position_index.shape[-1]
        if k > params.k_max:
            raise ValueError(f"window size {k} exceeds positional table rows {params.k_max}")
        pad_col = pad_mask.astype(params.table.dtype)[..., None]
        return ad.mul(ad.embedding_lookup(params.table, position_index), pad_col)
    if mode == "zero":
        if d_model is None:
            d_model = params.dim if isinstance(params, Time2VecParams) else None
        if d_model is None:
            raise ValueError("zero mode needs d_model to shape its output")
        return Tensor(np.zeros(tau.shape + (d_model,), dtype=np.asarray(tau).dtype))
    raise ValueError(f"unknown positional mode {mode!r}")


def positional_vectors(
    window: PostWindow,
    mode: str,
    params: Time2VecParams | LearnedPositionalTable | None = None,
    d_model: int | None = None,
) -> Tensor:
    """K x d positional matrix for a single window."""
    out = positional_tensor(
        window.tau[None, :], window.position_index[None, :], window.pad_mask[None, :],
        mode, params, d_model,
    )
    return ad.slice_(out, (0,))
