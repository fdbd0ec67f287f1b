from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from videocap.errors import DimensionMismatch, EmptyWindow
from videocap.numerics import Tensor
from videocap.temporal_attention import (
    AttentionParams,
    WindowConfig,
    fuse_long_short,
    long_term_attention,
    short_term_attention,
)


def scalar_params(scale=1.0):
    one = lambda: Tensor(np.array([[1.0]]), True)  # noqa: E731
    return AttentionParams(one(), one(), one(), scale)


def test_single_frame_is_value_projection():
    p = AttentionParams.init(4, 3, 2, seed=1)
    m = np.random.default_rng(0).standard_normal((1, 4))
    out, w = long_term_attention(m, p)
    assert np.array_equal(w.value, [[1.0]])
    assert np.allclose(out.value, m @ p.W_v.value, atol=1e-15)


def test_identical_frames_give_uniform_weights():
    p = AttentionParams.init(3, 2, 2, seed=2)
    M = np.tile([0.3, -1.0, 2.0], (5, 1))
    out, w = long_term_attention(M, p)
    assert np.allclose(w.value, 1 / 5, atol=1e-15)
    assert np.allclose(out.value, out.value[0], atol=1e-15)


def test_scalar_hand_evaluation():
    ln3 = math.log(3)
    out, w = long_term_attention(np.array([[0.0], [ln3]]), scalar_params())
    assert np.allclose(w.value[0], [0.5, 0.5], atol=1e-15)
    assert out.value[0, 0] == pytest.approx(0.5 * ln3, abs=1e-15)
    # row 1: logits [0, ln3 * ln3]
    e = math.exp(ln3 * ln3)
    assert np.allclose(w.value[1], [1 / (1 + e), e / (1 + e)], atol=1e-15)


def test_scale_divides_by_root():
    M = np.array([[1.0], [2.0]])
    _, w4 = long_term_attention(M, scalar_params(4.0))
    _, w1 = long_term_attention(M / math.sqrt(2), scalar_params(1.0))
    assert np.allclose(w4.value, w1.value, atol=1e-15)


def test_window_zero_is_self_only():
    p = AttentionParams.init(3, 2, 2, seed=3)
    M = np.random.default_rng(1).standard_normal((4, 3))
    out, w = short_term_attention(M, p, WindowConfig(0, True))
    assert np.array_equal(w.value, np.eye(4))
    assert np.allclose(out.value, M @ p.W_v.value, atol=1e-15)


def test_window_one_mask_structure():
    p = AttentionParams.init(3, 2, 2, seed=4)
    M = np.random.default_rng(2).standard_normal((3, 3))
    _, w = short_term_attention(M, p, WindowConfig(1, True))
    assert w.value[0, 2] == 0.0 and w.value[2, 0] == 0.0


def test_window_without_self():
    _, w = short_term_attention(np.ones((3, 2)), AttentionParams.init(2, 2, 2, 0), WindowConfig(1, False))
    assert np.all(np.diag(w.value) == 0.0)
    assert np.allclose(w.value[1], [0.5, 0.0, 0.5])
    with pytest.raises(EmptyWindow):
        WindowConfig(0, False)
    with pytest.raises(EmptyWindow):
        WindowConfig(1, False).mask(1)


def test_fuse_and_slice_round_trip():
    f = fuse_long_short(np.array([[1.0]]), np.array([[2.0]]))
    assert np.array_equal(f.A_fused.value, [[1.0, 2.0]])
    a, b = np.random.default_rng(3).standard_normal((2, 4, 3))
    f = fuse_long_short(a, b)
    assert np.array_equal(f.long_block, a) and np.array_equal(f.short_block, b)
    with pytest.raises(DimensionMismatch):
        fuse_long_short(np.ones((3, 2)), np.ones((4, 2)))


def test_input_width_checked():
    with pytest.raises(DimensionMismatch):
        long_term_attention(np.ones((3, 5)), AttentionParams.init(4, 2, 2, 0))


@settings(max_examples=80, deadline=None)
@given(T=st.integers(1, 8), w=st.integers(0, 8), seed=st.integers(0, 10_000))
def test_attention_invariants(T, w, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((T, 4)) * 3
    p = AttentionParams.init(4, 3, 2, seed)
    long_out, lw = long_term_attention(M, p)
    short_out, sw = short_term_attention(M, p, WindowConfig(w, True))
    assert np.allclose(lw.value.sum(1), 1.0, atol=1e-9)
    assert np.allclose(sw.value.sum(1), 1.0, atol=1e-9)
    far = np.abs(np.arange(T)[:, None] - np.arange(T)[None, :]) > w
    assert np.all(sw.value[far] == 0.0)
    if w >= T - 1:
        assert np.allclose(short_out.value, long_out.value, atol=1e-9, rtol=0)
