"""Vocabulary, transformer caption decoder and decoding strategies.

The same decoder architecture serves as teacher and student.  They differ
only in the width of the visual rows they read: the teacher reads the
visual-text row concatenated with the graph row of each frame, the student
reads the visual-text row alone.  A learned input projection maps either to
the decoder width.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import EmptyCorpus, EmptyVisualSequence, PrefixTooLong
from .numerics import Tensor, as_tensor, log_softmax, relu, rms_norm, seeded_init, softmax, take
from .text import tokenize

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")


class Vocabulary:
    """Token/id bijection with the four specials at ids 0-3."""

    def __init__(self, tokens: Sequence[str], min_freq: int = 1):
        self.itos: list[str] = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        self.min_freq = min_freq

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def encode(self, text: str) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokenize(text)]

    def decode(self, ids: Iterable[int]) -> str:
        words = []
        for i in ids:
            i = int(i)
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            words.append(self.itos[i])
        return " ".join(words)

    def to_json(self) -> dict:
        return {"tokens": self.itos[len(SPECIALS) :], "min_freq": self.min_freq}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls(obj["tokens"], obj.get("min_freq", 1))


def build_vocab(captions: Iterable, min_freq: int = 1) -> Vocabulary:
    """Vocabulary from caption strings or CaptionRecords.

    Ids after the specials go by descending frequency, then alphabetically.
    Tokens seen fewer than ``min_freq`` times are left out (they encode to UNK).
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts: Counter = Counter()
    for item in captions:
        texts = [item] if isinstance(item, str) else item.captions
        for text in texts:
            counts.update(tokenize(text))
    if not counts:
        raise EmptyCorpus("no tokens in the caption corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocabulary(kept, min_freq)


# -- decoder ------------------------------------------------------------------


@dataclass
class DecoderConfig:
    d_in: int
    vocab_size: int
    width: int = 128
    ff: int = 256
    depth: int = 2
    max_len: int = 20


def sinusoidal_positions(n: int, width: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(width)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / width)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass
class DecoderParams:
    config: DecoderConfig
    weights: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def init(cls, config: DecoderConfig, seed: int, prefix: str = "") -> "DecoderParams":
        w, ff, V = config.width, config.ff, config.vocab_size
        shapes: dict[str, tuple] = {"W_in": (config.d_in, w), "emb": (V, w)}
        for b in range(config.depth):
            for part in ("self", "cross"):
                for m in ("W_q", "W_k", "W_v", "W_o"):
                    shapes[f"blk{b}.{part}.{m}"] = (w, w)
            shapes[f"blk{b}.ff.W_1"] = (w, ff)
            shapes[f"blk{b}.ff.W_2"] = (ff, w)
        shapes["W_out"] = (w, V)
        weights = {}
        for k, (name, shape) in enumerate(shapes.items()):
            scheme = "uniform" if name == "emb" else "fan_in"
            weights[name] = Tensor(seeded_init(shape, seed + k, scheme, bound=0.5), True, prefix + name)
        for b in range(config.depth):
            for g in ("g1", "g2", "g3"):
                weights[f"blk{b}.{g}"] = Tensor(np.ones(w), True, f"{prefix}blk{b}.{g}")
            weights[f"blk{b}.ff.b_1"] = Tensor(np.zeros(ff), True, f"{prefix}blk{b}.ff.b_1")
            weights[f"blk{b}.ff.b_2"] = Tensor(np.zeros(w), True, f"{prefix}blk{b}.ff.b_2")
        weights["b_out"] = Tensor(np.zeros(V), True, prefix + "b_out")
        return cls(config, weights)

    def tensors(self) -> list[Tensor]:
        return list(self.weights.values())

    def __getitem__(self, name: str) -> Tensor:
        return self.weights[name]


def _attend(x: Tensor, mem: Tensor, p: DecoderParams, part: str, b: int, mask=None) -> Tensor:
    q = x @ p[f"blk{b}.{part}.W_q"]
    k = mem @ p[f"blk{b}.{part}.W_k"]
    v = mem @ p[f"blk{b}.{part}.W_v"]
    w = softmax(q @ k.mT, scale=q.shape[-1], mask=mask)
    return (w @ v) @ p[f"blk{b}.{part}.W_o"]


def decoder_forward_batch(visual, tokens, params: DecoderParams) -> Tensor:
    """Logits (B x L x V) for token prefixes (B x L) given visual rows (B x T x d_in)."""
    cfg = params.config
    visual = as_tensor(visual)
    tokens = np.asarray(tokens, dtype=np.int64)
    L = tokens.shape[-1]
    if L > cfg.max_len:
        raise PrefixTooLong(f"prefix of length {L} exceeds max_len {cfg.max_len}")
    if visual.shape[-2] == 0:
        raise EmptyVisualSequence("visual sequence has no frames")
    mem = visual @ params["W_in"]
    x = take(params["emb"], tokens) + sinusoidal_positions(L, cfg.width)
    causal = np.tril(np.ones((L, L), dtype=bool))
    for b in range(cfg.depth):
        x = rms_norm(x + _attend(x, x, params, "self", b, causal), params[f"blk{b}.g1"])
        x = rms_norm(x + _attend(x, mem, params, "cross", b), params[f"blk{b}.g2"])
        h = relu(x @ params[f"blk{b}.ff.W_1"] + params[f"blk{b}.ff.b_1"])
        x = rms_norm(x + h @ params[f"blk{b}.ff.W_2"] + params[f"blk{b}.ff.b_2"], params[f"blk{b}.g3"])
    return x @ params["W_out"] + params["b_out"]


def decoder_forward(visual_seq, token_prefix: Sequence[int], params: DecoderParams) -> Tensor:
    """Logits (L x V); row l depends only on tokens up to l and on all visual rows."""
    tokens = np.asarray(token_prefix, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size < 1:
        raise ValueError("token_prefix must be a nonempty 1-D id sequence")
    return decoder_forward_batch(visual_seq, tokens, params)


# -- decoding -----------------------------------------------------------------


@dataclass
class CaptionHypothesis:
    tokens: list[int]
    logprob: float
    finished: bool

    @property
    def score(self) -> float:
        """Length-normalised log-probability."""
        return self.logprob / max(len(self.tokens), 1)


StepFn = Callable[[list[list[int]]], np.ndarray]


def decoder_step_fn(visual_seq, params: DecoderParams) -> StepFn:
    """Next-token log-probabilities for a batch of equal-length prefixes."""
    visual = as_tensor(visual_seq).value

    def step(prefixes: list[list[int]]) -> np.ndarray:
        tokens = np.asarray(prefixes, dtype=np.int64)
        vis = np.broadcast_to(visual, (len(prefixes),) + visual.shape)
        logits = decoder_forward_batch(vis, tokens, params).value[:, -1, :]
        return log_softmax(logits).value

    return step


def greedy_search(step: StepFn, max_len: int, bos: int = BOS, eos: int = EOS) -> CaptionHypothesis:
    tokens: list[int] = []
    logprob = 0.0
    for _ in range(max_len):
        lp = step([[bos] + tokens])[0]
        tok = int(np.argmax(lp))
        logprob = logprob + lp[tok]
        tokens.append(tok)
        if tok == eos:
            return CaptionHypothesis(tokens, float(logprob), True)
    return CaptionHypothesis(tokens, float(logprob), False)


def beam_search(step: StepFn, beam_size: int, max_len: int, bos: int = BOS, eos: int = EOS) -> CaptionHypothesis:
    """Length-normalised beam search.

    Each step keeps the ``beam_size`` best extensions by cumulative
    log-probability; extensions ending in ``eos`` retire to the finished
    pool.  The finished hypothesis with the best normalised score wins; with
    no finished hypothesis the best live one is returned.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    alive = [CaptionHypothesis([], 0.0, False)]
    finished: list[CaptionHypothesis] = []
    for _ in range(max_len):
        lp = step([[bos] + h.tokens for h in alive])
        scores = np.array([h.logprob for h in alive])[:, None] + lp
        flat = scores.ravel()
        order = np.argsort(-flat, kind="stable")[:beam_size]
        V = lp.shape[1]
        nxt = []
        for idx in order:
            bi, tok = divmod(int(idx), V)
            hyp = CaptionHypothesis(alive[bi].tokens + [tok], float(flat[idx]), tok == eos)
            (finished if hyp.finished else nxt).append(hyp)
        alive = nxt
        if not alive:
            break
    pool = finished or alive
    best = pool[0]
    for h in pool[1:]:
        if h.score > best.score:
            best = h
    return best


def greedy_decode(visual_seq, params: DecoderParams, max_len: int | None = None) -> CaptionHypothesis:
    """Argmax decoding (ties go to the lowest id) until EOS or ``max_len`` tokens."""
    max_len = params.config.max_len if max_len is None else max_len
    return greedy_search(decoder_step_fn(visual_seq, params), max_len)


def beam_decode(visual_seq, params: DecoderParams, beam_size: int = 3, max_len: int | None = None) -> CaptionHypothesis:
    max_len = params.config.max_len if max_len is None else max_len
    return beam_search(decoder_step_fn(visual_seq, params), beam_size, max_len)
