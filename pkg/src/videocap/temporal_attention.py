"""Long- and short-term inter-frame attention over action features.

Both attentions are single-head scaled dot-product attention over the frame
axis.  The long-term variant lets every frame attend to the whole sequence;
the short-term variant restricts frame ``i`` to frames ``j`` with
``|i - j| <= radius``.  Inputs may carry leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyWindow, NonPositiveScale
from .numerics import Tensor, as_tensor, concat, seeded_init, softmax


@dataclass
class AttentionParams:
    """A learnable (W_q, W_k, W_v) triple and the logit scaling constant.

    Logits are divided by ``sqrt(scale)``.  ``scale`` defaults to ``d_k``.
    """

    W_q: Tensor
    W_k: Tensor
    W_v: Tensor
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise NonPositiveScale(f"scale must be positive, got {self.scale}")
        if self.W_q.shape[1] != self.W_k.shape[1]:
            raise DimensionMismatch("W_q and W_k must share the key width")

    @classmethod
    def init(
        cls,
        d_in: int,
        d_k: int,
        d_v: int,
        seed: int,
        d_in_kv: int | None = None,
        prefix: str = "",
        scale: float | None = None,
    ) -> "AttentionParams":
        d_kv = d_in if d_in_kv is None else d_in_kv
        return cls(
            W_q=Tensor(seeded_init((d_in, d_k), seed), True, prefix + "W_q"),
            W_k=Tensor(seeded_init((d_kv, d_k), seed + 1), True, prefix + "W_k"),
            W_v=Tensor(seeded_init((d_kv, d_v), seed + 2), True, prefix + "W_v"),
            scale=float(d_k if scale is None else scale),
        )

    def tensors(self) -> list[Tensor]:
        return [self.W_q, self.W_k, self.W_v]

    @property
    def d_v(self) -> int:
        return self.W_v.shape[1]


@dataclass(frozen=True)
class WindowConfig:
    radius: int = 1
    include_self: bool = True

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError(f"window radius must be >= 0, got {self.radius}")
        if self.radius == 0 and not self.include_self:
            raise EmptyWindow("radius 0 without the self frame leaves no frame to attend to")

    def mask(self, T: int) -> np.ndarray:
        """Boolean T x T mask; True where frame i may attend to frame j."""
        idx = np.arange(T)
        dist = np.abs(idx[:, None] - idx[None, :])
        m = dist <= self.radius
        if not self.include_self:
            m &= dist > 0
        if not m.any(axis=1).all():
            raise EmptyWindow(f"some frame has no neighbour within radius {self.radius} (T={T})")
        return m


@dataclass
class FusedActionFeatures:
    """Long-term block on the left, short-term block on the right."""

    A_fused: Tensor
    d_long: int

    @property
    def long_block(self) -> np.ndarray:
        return self.A_fused.value[..., : self.d_long]

    @property
    def short_block(self) -> np.ndarray:
        return self.A_fused.value[..., self.d_long :]


def _project(M: Tensor, params: AttentionParams):
    if M.shape[-1] != params.W_q.shape[0]:
        raise DimensionMismatch(
            f"features of width {M.shape[-1]} do not match W_q input width {params.W_q.shape[0]}"
        )
    return M @ params.W_q, M @ params.W_k, M @ params.W_v


def long_term_attention(M, params: AttentionParams) -> tuple[Tensor, Tensor]:
    """Every frame attends over the whole sequence.

    Returns ``(M_long, weights)`` with ``weights`` of shape T x T.
    """
    M = as_tensor(M)
    Q, K, V = _project(M, params)
    weights = softmax(Q @ K.mT, scale=params.scale)
    return weights @ V, weights


def short_term_attention(
    M, params: AttentionParams, window: WindowConfig = WindowConfig()
) -> tuple[Tensor, Tensor]:
    """Frame ``i`` attends only over frames within ``window.radius`` of it.

    Weights outside the window are exactly zero.
    """
    M = as_tensor(M)
    mask = window.mask(M.shape[-2])
    Q, K, V = _project(M, params)
    weights = softmax(Q @ K.mT, scale=params.scale, mask=mask)
    return weights @ V, weights


def fuse_long_short(M_long, M_short) -> FusedActionFeatures:
    M_long, M_short = as_tensor(M_long), as_tensor(M_short)
    if M_long.shape != M_short.shape:
        raise DimensionMismatch(
            f"long {M_long.shape} and short {M_short.shape} features must share a shape"
        )
    return FusedActionFeatures(concat([M_long, M_short], axis=-1), M_long.shape[-1])
