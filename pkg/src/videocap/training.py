"""Losses, joint teacher/student training with distillation, and inference.

The teacher runs the full pipeline (temporal attention, semantic-aware
attention, graph transformer, decoder); the student decoder sees only the
visual-text features.  Both are trained together on

    teacher_ce + student_ce + lambda_kd * KL(teacher || student)

with the teacher's distribution held constant inside the KL term.  Training
is full batch with Adam; videos with equal frame counts are stacked into one
batched forward pass.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import graph as graph_mod
from .caption_model import (
    BOS,
    EOS,
    PAD,
    DecoderConfig,
    DecoderParams,
    Vocabulary,
    beam_decode,
    build_vocab,
    decoder_forward_batch,
    greedy_decode,
)
from .errors import (
    AllPadded,
    DivergedLoss,
    EmptyDataset,
    InvalidConfig,
    LengthMismatch,
    MissingTensor,
    ShapeMismatch,
)
from .features import CaptionRecord, FeatureBundle, load_bundle, read_tensors, write_tensors
from .graph import (
    GraphTransformerParams,
    build_action_graph,
    build_object_graph,
    encode_layout,
    graph_layout,
    merge_graphs,
    stack_layouts,
)
from .numerics import Tape, Tensor, as_tensor, concat, detach, log_softmax, seeded_init
from .semantic_aware import visual_action_attention
from .temporal_attention import (
    AttentionParams,
    WindowConfig,
    fuse_long_short,
    long_term_attention,
    short_term_attention,
)

# Learning rates reported for the two benchmark datasets, kept for reference.
FULL_SCALE_PRESETS = {"msvd": {"lr": 1e-4, "epochs": 60}, "msrvtt": {"lr": 3e-4, "epochs": 80}}


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 500
    lambda_kd: float = 1.0
    tau: float = 1.0
    seed: int = 0
    window_radius: int = 1
    include_self: bool = True
    theta: float = 0.5
    top_k: int = 1
    graph_layers: int = 1
    disable_temporal: bool = False
    disable_semantic: bool = False
    checkpoint_every: int = 0
    values_from: str = "action"
    d_k: int = 16
    d_v: int = 16
    d_graph: int = 32
    width: int = 128
    ff: int = 256
    depth: int = 2
    max_len: int = 20
    min_freq: int = 1

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidConfig("lr must be > 0")
        if self.epochs < 1:
            raise InvalidConfig("epochs must be >= 1")
        if self.lambda_kd < 0:
            raise InvalidConfig("lambda_kd must be >= 0")
        if not self.tau > 0:
            raise InvalidConfig("tau must be > 0")
        if self.graph_layers < 1:
            raise InvalidConfig("graph_layers must be >= 1")
        if self.window_radius < 0:
            raise InvalidConfig("window_radius must be >= 0")

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise InvalidConfig(f"unknown config fields: {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def window(self) -> WindowConfig:
        return WindowConfig(self.window_radius, self.include_self)


# -- losses -------------------------------------------------------------------


def _ce_terms(logits, targets, pad_id: int = PAD) -> tuple[Tensor, int]:
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise LengthMismatch(f"logits {logits.shape} do not match targets {targets.shape}")
    keep = targets != pad_id
    count = int(keep.sum())
    onehot = np.zeros(logits.shape)
    np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
    onehot *= keep[..., None]
    return -(log_softmax(logits) * onehot).sum(), count


def cross_entropy_loss(logits, targets, pad_id: int = PAD) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over non-PAD positions."""
    total, count = _ce_terms(logits, targets, pad_id)
    if count == 0:
        raise AllPadded("every target position is padding")
    return total * (1.0 / count)


def _kl_terms(student_logits, teacher_logits, tau: float, mask=None) -> tuple[Tensor, int]:
    s, t = as_tensor(student_logits), as_tensor(teacher_logits)
    if s.shape != t.shape:
        raise ShapeMismatch(f"student {s.shape} and teacher {t.shape} logits differ in shape")
    if not tau > 0:
        raise InvalidConfig("tau must be > 0")
    keep = np.ones(s.shape[:-1], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    log_pt = log_softmax(detach(t) * (1.0 / tau)).value
    p_t = np.exp(log_pt) * keep[..., None]
    log_ps = log_softmax(s * (1.0 / tau))
    kl = float(np.sum(p_t * log_pt)) - (log_ps * p_t).sum()
    return kl * (tau * tau), int(keep.sum())


def kl_distillation_loss(student_logits, teacher_logits, tau: float = 1.0, mask=None) -> Tensor:
    """``tau**2 * KL(p_teacher || p_student)`` averaged over the kept positions.

    Both distributions are softened by ``tau``.  The teacher side is a
    constant: no gradient reaches the teacher through this term.
    """
    total, count = _kl_terms(student_logits, teacher_logits, tau, mask)
    if count == 0:
        raise AllPadded("no positions to distil over")
    return total * (1.0 / count)


def total_loss(teacher_ce, student_ce, kl, lambda_kd: float):
    if lambda_kd < 0:
        raise InvalidConfig("lambda_kd must be >= 0")
    return teacher_ce + student_ce + lambda_kd * kl


# -- models -------------------------------------------------------------------


@dataclass
class TeacherParams:
    long: AttentionParams | None
    short: AttentionParams | None
    vt: AttentionParams | None
    graph: GraphTransformerParams
    decoder: DecoderParams

    def tensors(self) -> list[Tensor]:
        out = []
        for att in (self.long, self.short, self.vt):
            if att is not None:
                out.extend(att.tensors())
        return out + self.graph.tensors() + self.decoder.tensors()


@dataclass
class StudentParams:
    decoder: DecoderParams

    def tensors(self) -> list[Tensor]:
        return self.decoder.tensors()


def init_models(cfg: TrainConfig, dims: tuple[int, int, int], vocab_size: int) -> tuple[TeacherParams, StudentParams]:
    """Fresh teacher and student parameters for feature widths ``(d_o, d_m, d_c)``."""
    d_o, d_m, d_c = dims
    s = cfg.seed * 1000
    if cfg.disable_temporal:
        long = short = None
        d_a = 2 * d_m
    else:
        long = AttentionParams.init(d_m, cfg.d_k, cfg.d_v, s + 10, prefix="long.")
        short = AttentionParams.init(d_m, cfg.d_k, cfg.d_v, s + 20, prefix="short.")
        d_a = 2 * cfg.d_v
    if cfg.disable_semantic:
        vt = None
        d_act = d_a
    else:
        vt = AttentionParams.init(d_c, cfg.d_k, cfg.d_v, s + 30, d_in_kv=d_a, prefix="vt.")
        if cfg.values_from == "visual_text":
            vt.W_v = Tensor(seeded_init((d_c, cfg.d_v), s + 32), True, "vt.W_v")
        d_act = cfg.d_v
    gt = GraphTransformerParams.init(d_o, d_act, cfg.d_graph, cfg.graph_layers, s + 100)
    dec_t = DecoderParams.init(
        DecoderConfig(d_c + cfg.d_graph, vocab_size, cfg.width, cfg.ff, cfg.depth, cfg.max_len), s + 200, "dec."
    )
    dec_s = DecoderParams.init(
        DecoderConfig(d_c, vocab_size, cfg.width, cfg.ff, cfg.depth, cfg.max_len), s + 300, "dec."
    )
    return TeacherParams(long, short, vt, gt, dec_t), StudentParams(dec_s)


def fused_actions(tp: TeacherParams, M, cfg: TrainConfig) -> Tensor:
    if cfg.disable_temporal:
        M = as_tensor(M)
        return concat([M, M], axis=-1)
    m_long, _ = long_term_attention(M, tp.long)
    m_short, _ = short_term_attention(M, tp.short, cfg.window)
    return fuse_long_short(m_long, m_short).A_fused


def action_node_features(tp: TeacherParams, M, C, cfg: TrainConfig) -> Tensor:
    A = fused_actions(tp, M, cfg)
    if cfg.disable_semantic:
        return A
    sem, _ = visual_action_attention(C, A, tp.vt, cfg.values_from)
    return sem.B_seq


def object_graph_layout(bundle: FeatureBundle, cfg: TrainConfig, d_act: int):
    """Layout of the merged graph; action features are supplied at encode time."""
    obj = build_object_graph(bundle.object_feats, bundle.object_mask, cfg.theta, cfg.top_k)
    act = build_action_graph(np.zeros((bundle.T, d_act)))
    return graph_layout(merge_graphs(obj, act), bundle.object_feats.shape[-1], d_act)


def teacher_visual(tp: TeacherParams, M, C, layout, cfg: TrainConfig) -> Tensor:
    """Per-frame concatenation of visual-text rows and pooled graph rows."""
    act = action_node_features(tp, M, C, cfg)
    _, frames = encode_layout(layout, tp.graph, act)
    return concat([as_tensor(C), frames], axis=-1)


# -- data ---------------------------------------------------------------------


@dataclass
class _Bucket:
    M: np.ndarray
    C: np.ndarray
    layout: graph_mod.GraphLayout
    inputs: np.ndarray
    targets: np.ndarray


@dataclass
class TrainingSet:
    bundles: list[FeatureBundle]
    captions: list[list[int]]  # token ids per item, without BOS/EOS
    video_index: list[int]  # bundle index per item
    layouts: list[graph_mod.GraphLayout]
    buckets: list[_Bucket]
    n_tokens: int


def _teacher_forcing(ids: Sequence[int], max_len: int) -> tuple[list[int], list[int]]:
    ids = list(ids)[: max_len - 1]
    return [BOS] + ids, ids + [EOS]


def prepare(bundles: Sequence[FeatureBundle], records: Sequence[CaptionRecord], vocab: Vocabulary, cfg: TrainConfig, d_act: int) -> TrainingSet:
    by_id = {b.video_id: i for i, b in enumerate(bundles)}
    items: list[tuple[int, list[int]]] = []
    for rec in records:
        if rec.video_id not in by_id:
            continue
        for cap in rec.captions:
            items.append((by_id[rec.video_id], vocab.encode(cap)))
    if not items:
        raise EmptyDataset("no caption matches a feature bundle")
    layouts = [object_graph_layout(b, cfg, d_act) for b in bundles]
    groups: dict[int, list[int]] = {}
    for k, (vi, _) in enumerate(items):
        groups.setdefault(bundles[vi].T, []).append(k)
    buckets = []
    n_tokens = 0
    for T in sorted(groups):
        ks = groups[T]
        pairs = [_teacher_forcing(items[k][1], cfg.max_len) for k in ks]
        L = max(len(p[0]) for p in pairs)
        inp = np.full((len(ks), L), PAD, dtype=np.int64)
        tgt = np.full((len(ks), L), PAD, dtype=np.int64)
        for r, (x, y) in enumerate(pairs):
            inp[r, : len(x)] = x
            tgt[r, : len(y)] = y
        n_tokens += int((tgt != PAD).sum())
        vids = [items[k][0] for k in ks]
        buckets.append(
            _Bucket(
                np.stack([bundles[v].action_feats for v in vids]),
                np.stack([bundles[v].visual_text_feats for v in vids]),
                stack_layouts([layouts[v] for v in vids]),
                inp,
                tgt,
            )
        )
    return TrainingSet(
        list(bundles), [c for _, c in items], [v for v, _ in items], layouts, buckets, n_tokens
    )


# -- optimisation -------------------------------------------------------------


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    COLUMNS = ("epoch", "teacher_ce", "student_ce", "kl", "total")

    def to_csv(self) -> str:
        """CSV with the effective config echoed in a leading comment line.

        Wall-clock times stay out of the file so reruns are byte-identical.
        """
        buf = io.StringIO()
        buf.write("# config: " + json.dumps(self.config, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([r["epoch"]] + [repr(float(r[c])) for c in self.COLUMNS[1:]])
        return buf.getvalue()

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])


@dataclass
class TrainResult:
    teacher: TeacherParams
    student: StudentParams
    log: TrainLog
    vocab: Vocabulary
    config: TrainConfig
    dims: tuple[int, int, int]
    data: TrainingSet


def epoch_losses(tp: TeacherParams, sp: StudentParams, data: TrainingSet, cfg: TrainConfig) -> dict[str, Tensor]:
    t_ce = s_ce = kl = None
    for bk in data.buckets:
        vis = teacher_visual(tp, bk.M, bk.C, bk.layout, cfg)
        t_logits = decoder_forward_batch(vis, bk.inputs, tp.decoder)
        s_logits = decoder_forward_batch(bk.C, bk.inputs, sp.decoder)
        a, _ = _ce_terms(t_logits, bk.targets)
        b, _ = _ce_terms(s_logits, bk.targets)
        c, _ = _kl_terms(s_logits, t_logits, cfg.tau, bk.targets != PAD)
        t_ce = a if t_ce is None else t_ce + a
        s_ce = b if s_ce is None else s_ce + b
        kl = c if kl is None else kl + c
    inv = 1.0 / data.n_tokens
    t_ce, s_ce, kl = t_ce * inv, s_ce * inv, kl * inv
    return {"teacher_ce": t_ce, "student_ce": s_ce, "kl": kl, "total": total_loss(t_ce, s_ce, kl, cfg.lambda_kd)}


def train(
    cfg: TrainConfig,
    bundles: Sequence[FeatureBundle],
    records: Sequence[CaptionRecord],
    vocab: Vocabulary | None = None,
    on_checkpoint: Callable[[int, "TrainResult"], None] | None = None,
) -> TrainResult:
    """Train teacher and student jointly; deterministic given ``cfg.seed``."""
    if not bundles or not records:
        raise EmptyDataset("training needs at least one bundle and one caption record")
    vocab = vocab or build_vocab(records, cfg.min_freq)
    b0 = bundles[0]
    dims = (b0.object_feats.shape[-1], b0.action_feats.shape[-1], b0.visual_text_feats.shape[-1])
    tp, sp = init_models(cfg, dims, len(vocab))
    data = prepare(bundles, records, vocab, cfg, tp.graph.P_act.shape[0])
    params = tp.tensors() + sp.tensors()
    opt = Adam(params, cfg.lr)
    log = TrainLog(config=cfg.to_dict())
    result = TrainResult(tp, sp, log, vocab, cfg, dims, data)
    start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        with Tape() as tape:
            losses = epoch_losses(tp, sp, data, cfg)
        values = {k: float(v.value) for k, v in losses.items()}
        if not all(math.isfinite(v) for v in values.values()):
            raise DivergedLoss(f"non-finite loss at epoch {epoch}: {values}")
        grads = tape.gradient(losses["total"], params)
        opt.step(grads)
        log.rows.append({"epoch": epoch, **values, "seconds": time.perf_counter() - start})
        if on_checkpoint and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            on_checkpoint(epoch, result)
    return result


# -- evaluation and inference -------------------------------------------------


def token_accuracy(hypotheses: Iterable[Sequence[int]], references: Iterable[Sequence[int]]) -> float:
    """Fraction of reference tokens (EOS included) matched position by position."""
    hit = total = 0
    for hyp, ref in zip(hypotheses, references):
        ref = list(ref) + [EOS]
        total += len(ref)
        hit += sum(1 for a, b in zip(hyp, ref) if a == b)
    return hit / total if total else 0.0


def teacher_captions(result: TrainResult) -> list[list[int]]:
    """Greedy teacher decodes for every training item."""
    cfg, tp, data = result.config, result.teacher, result.data
    out = []
    for vi in data.video_index:
        b = data.bundles[vi]
        vis = teacher_visual(tp, b.action_feats, b.visual_text_feats, data.layouts[vi], cfg)
        out.append(greedy_decode(vis.value, tp.decoder).tokens)
    return out


def student_captions(result: TrainResult) -> list[list[int]]:
    data = result.data
    return [
        greedy_decode(data.bundles[vi].visual_text_feats, result.student.decoder).tokens
        for vi in data.video_index
    ]


def infer(student: StudentParams, source, vocab: Vocabulary, beam: int = 1, max_len: int | None = None) -> str:
    """Caption a video with the student decoder alone.

    ``source`` is a FeatureBundle or a path to a ``.vft`` file; only its
    visual-text tensor is read.  No graph routine may run.
    """
    before = sum(graph_mod.CALLS.values())
    if isinstance(source, FeatureBundle):
        C = source.visual_text_feats
    else:
        tensors = read_tensors(source)
        if "visual_text" not in tensors:
            raise MissingTensor(f"{source}: tensor 'visual_text' is absent")
        C = tensors["visual_text"]
    if C is None:
        raise MissingTensor("bundle has no visual_text features")
    if beam <= 1:
        hyp = greedy_decode(C, student.decoder, max_len)
    else:
        hyp = beam_decode(C, student.decoder, beam, max_len)
    assert sum(graph_mod.CALLS.values()) == before, "graph code ran during student inference"
    return vocab.decode(hyp.tokens)


# -- checkpoints --------------------------------------------------------------


def _decoder_config_dict(dec: DecoderParams) -> dict:
    return dataclasses.asdict(dec.config)


def save_checkpoint(result: TrainResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tensors(out / "teacher.vft", {t.name: t.value for t in result.teacher.tensors()})
    write_tensors(out / "student.vft", {t.name: t.value for t in result.student.tensors()})
    sidecar = {
        "vocab": result.vocab.to_json(),
        "config": result.config.to_dict(),
        "dims": list(result.dims),
        "student_decoder": _decoder_config_dict(result.student.decoder),
        "teacher_decoder": _decoder_config_dict(result.teacher.decoder),
    }
    (out / "checkpoint.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_student(ckpt_dir) -> tuple[StudentParams, Vocabulary, dict]:
    """Load only the student decoder and vocabulary from a checkpoint directory."""
    ckpt = Path(ckpt_dir)
    side_path, weights_path = ckpt / "checkpoint.json", ckpt / "student.vft"
    if not side_path.is_file() or not weights_path.is_file():
        raise MissingTensor(f"{ckpt}: no student checkpoint (need checkpoint.json and student.vft)")
    side = json.loads(side_path.read_text())
    cfg = DecoderConfig(**side["student_decoder"])
    tensors = read_tensors(weights_path)
    fresh = DecoderParams.init(cfg, 0, "dec.")
    for name, t in fresh.weights.items():
        key = t.name
        if key not in tensors:
            raise MissingTensor(f"{weights_path}: parameter {key!r} is absent")
        if tensors[key].shape != t.shape:
            raise ShapeMismatch(f"{weights_path}: parameter {key!r} has shape {tensors[key].shape}")
        t.value = tensors[key]
    return StudentParams(fresh), Vocabulary.from_json(side["vocab"]), side


def load_teacher(ckpt_dir) -> tuple[TeacherParams, TrainConfig, Vocabulary]:
    ckpt = Path(ckpt_dir)
    side_path, weights_path = ckpt / "checkpoint.json", ckpt / "teacher.vft"
    if not side_path.is_file() or not weights_path.is_file():
        raise MissingTensor(f"{ckpt}: no teacher checkpoint (need checkpoint.json and teacher.vft)")
    side = json.loads(side_path.read_text())
    cfg = TrainConfig.from_dict(side["config"])
    vocab = Vocabulary.from_json(side["vocab"])
    tp, _ = init_models(cfg, tuple(side["dims"]), len(vocab))
    tensors = read_tensors(weights_path)
    for t in tp.tensors():
        if t.name not in tensors or tensors[t.name].shape != t.shape:
            raise MissingTensor(f"{weights_path}: parameter {t.name!r} is absent or misshapen")
        t.value = tensors[t.name]
    return tp, cfg, vocab
