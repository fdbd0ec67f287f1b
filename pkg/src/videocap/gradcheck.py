"""Finite-difference gradient suite for every differentiable module.

Each group builds a small random instance per seed, compares tape gradients
against central differences (eps 1e-5) and keeps the worst relative error
per parameter across seeds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .caption_model import PAD, DecoderConfig, DecoderParams, build_vocab, decoder_forward_batch
from .features import synth_dataset
from .graph import GraphTransformerParams, build_action_graph, build_object_graph, graph_transformer_encode, merge_graphs
from .numerics import Tensor, gradient_check
from .semantic_aware import visual_action_attention
from .temporal_attention import AttentionParams, WindowConfig, long_term_attention, short_term_attention
from .training import TrainConfig, cross_entropy_loss, epoch_losses, init_models, kl_distillation_loss, prepare

EPS = 1e-5
TOL = 1e-4
TOL_END_TO_END = 1e-3


@dataclass
class GroupResult:
    name: str
    tolerance: float
    max_errors: dict[str, float] = field(default_factory=dict)
    seeds: int = 0
    seconds: float = 0.0

    @property
    def max_error(self) -> float:
        return max(self.max_errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def _temporal(seed: int):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(2, 7))
    M = rng.standard_normal((T, 3))
    long = AttentionParams.init(3, 2, 2, seed, prefix="long.")
    short = AttentionParams.init(3, 2, 2, seed + 7, prefix="short.")

    def loss():
        a, _ = long_term_attention(M, long)
        b, _ = short_term_attention(M, short, WindowConfig(1, True))
        return a.sum() + b.sum()

    return loss, long.tensors() + short.tensors()


def _semantic(seed: int):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, 6))
    C, A = rng.standard_normal((T, 3)), rng.standard_normal((T, 4))
    R = rng.standard_normal((T, 2))
    vt = AttentionParams.init(3, 2, 2, seed, d_in_kv=4, prefix="vt.")

    def loss():
        sem, _ = visual_action_attention(C, A, vt)
        return (sem.B_seq * R).sum() + sem.B_pooled.sum()

    return loss, vt.tensors()


def _graph(seed: int):
    rng = np.random.default_rng(seed)
    T, N = 3, 2
    obj = rng.standard_normal((T, N, 3))
    mask = rng.random((T, N)) < 0.8
    act = rng.standard_normal((T, 2))
    g = merge_graphs(build_object_graph(obj, mask, theta=0.0, top_k=None), build_action_graph(act))
    params = GraphTransformerParams.init(3, 2, 3, 2, seed)
    R = rng.standard_normal((len(g.nodes), 3))

    def loss():
        out = graph_transformer_encode(g, params)
        return (out.nodes * R).sum() + out.frames.sum()

    return loss, params.tensors()


def _decoder(seed: int):
    rng = np.random.default_rng(seed)
    cfg = DecoderConfig(d_in=2, vocab_size=5, width=4, ff=4, depth=2, max_len=6)
    params = DecoderParams.init(cfg, seed)
    visual = Tensor(rng.standard_normal((3, 2)), True, "visual")
    tokens = np.concatenate([[1], rng.integers(0, 5, size=3)])
    R = rng.standard_normal((4, 5))

    def loss():
        return (decoder_forward_batch(visual, tokens, params) * R).sum()

    return loss, params.tensors() + [visual]


def _losses(seed: int):
    rng = np.random.default_rng(seed)
    ce_logits = Tensor(rng.standard_normal((2, 4, 5)), True, "ce.logits")
    targets = rng.integers(1, 5, size=(2, 4))
    targets[1, 3] = PAD
    student = Tensor(rng.standard_normal((4, 5)), True, "kl.student")
    teacher = rng.standard_normal((4, 5))
    tau = float(rng.uniform(0.5, 2.0))

    def loss():
        return cross_entropy_loss(ce_logits, targets) + kl_distillation_loss(student, teacher, tau)

    return loss, [ce_logits, student]


def _end_to_end(seed: int):
    """Whole teacher pipeline plus student, on one tiny synthetic video.

    Teacher parameters are checked against the teacher CE: the KL term holds
    the teacher constant, which finite differences cannot reproduce.  Student
    parameters are checked against the total loss.
    """
    bundles, records = synth_dataset(1, seed=seed, T=3, N=2, dims=(3, 3, 3), pattern="burst")
    cfg = TrainConfig(seed=seed, d_k=2, d_v=2, d_graph=2, width=3, ff=3, depth=1, max_len=10, theta=0.0)
    vocab = build_vocab(records)
    tp, sp = init_models(cfg, (3, 3, 3), len(vocab))
    data = prepare(bundles, records, vocab, cfg, tp.graph.P_act.shape[0])
    return [
        ("teacher.", lambda: epoch_losses(tp, sp, data, cfg)["teacher_ce"], tp.tensors()),
        ("student.", lambda: epoch_losses(tp, sp, data, cfg)["total"], sp.tensors()),
    ]


GROUPS: dict[str, tuple[Callable, float]] = {
    "temporal_attention": (_temporal, TOL),
    "semantic_aware": (_semantic, TOL),
    "graph_transformer": (_graph, TOL),
    "decoder": (_decoder, TOL),
    "losses": (_losses, TOL),
    "end_to_end": (_end_to_end, TOL_END_TO_END),
}


def run_suite(seeds: Iterable[int] = range(20), groups: Iterable[str] | None = None, corrupt: bool = False) -> list[GroupResult]:
    """Run the gradient groups; ``corrupt`` scales every analytic gradient by 1.01."""
    hook = (lambda g: g * 1.01) if corrupt else None
    seeds = list(seeds)
    results = []
    for name in groups or GROUPS:
        build, tol = GROUPS[name]
        res = GroupResult(name, tol)
        start = time.perf_counter()
        for seed in seeds:
            checks = build(seed)
            if not isinstance(checks, list):
                checks = [("",) + checks]
            for label, loss, params in checks:
                for pname, err in gradient_check(loss, params, EPS, analytic_hook=hook).items():
                    key = label + pname
                    res.max_errors[key] = max(res.max_errors.get(key, 0.0), err)
        res.seeds = len(seeds)
        res.seconds = time.perf_counter() - start
        results.append(res)
    return results


def format_table(results: list[GroupResult], per_param: bool = False) -> str:
    lines = [f"{'group':<20} {'seeds':>5} {'max rel err':>12} {'tol':>8}  status"]
    for r in results:
        lines.append(
            f"{r.name:<20} {r.seeds:>5} {r.max_error:>12.3e} {r.tolerance:>8.0e}  {'PASS' if r.passed else 'FAIL'}"
        )
        if per_param:
            for pname, err in sorted(r.max_errors.items()):
                lines.append(f"    {pname:<28} {err:.3e}")
    return "\n".join(lines)
