"""Visual-text features querying fused action features.

Queries come from the visual-text rows, keys and values from the fused
long/short action rows.  Every query frame attends over all frames, giving a
per-frame sequence ``B_seq`` and its frame mean ``B_pooled``.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DimensionMismatch, FrameCountMismatch
from .numerics import Tensor, as_tensor, softmax
from .temporal_attention import AttentionParams

VALUE_SOURCES = ("action", "visual_text")


@dataclass
class SemanticActionFeatures:
    B_seq: Tensor
    B_pooled: Tensor


def visual_action_attention(
    C, A_fused, params: AttentionParams, values_from: str = "action"
) -> tuple[SemanticActionFeatures, Tensor]:
    """Cross attention with queries ``C @ W_q`` and keys ``A_fused @ W_k``.

    ``values_from="visual_text"`` takes the values from ``C`` instead of
    ``A_fused``; ``W_v`` must then read visual-text rows.
    """
    C, A = as_tensor(C), as_tensor(A_fused)
    if values_from not in VALUE_SOURCES:
        raise ValueError(f"values_from must be one of {VALUE_SOURCES}")
    if C.shape[-2] != A.shape[-2]:
        raise FrameCountMismatch(f"C has {C.shape[-2]} frames, A_fused has {A.shape[-2]}")
    value_src = A if values_from == "action" else C
    if C.shape[-1] != params.W_q.shape[0] or A.shape[-1] != params.W_k.shape[0]:
        raise DimensionMismatch(
            f"C width {C.shape[-1]} / A_fused width {A.shape[-1]} do not match "
            f"W_q {params.W_q.shape} / W_k {params.W_k.shape}"
        )
    if value_src.shape[-1] != params.W_v.shape[0]:
        raise DimensionMismatch(f"value rows of width {value_src.shape[-1]} do not match W_v {params.W_v.shape}")
    Q = C @ params.W_q
    K = A @ params.W_k
    V = value_src @ params.W_v
    weights = softmax(Q @ K.mT, scale=params.scale)
    B_seq = weights @ V
    return SemanticActionFeatures(B_seq, B_seq.mean(axis=-2)), weights
