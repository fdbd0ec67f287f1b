"""Acceptance gate: one test and one summary line per criterion."""

from __future__ import annotations

import itertools
import random
import subprocess
import sys
import time

import numpy as np
import pytest

import oracles
from acceptance_log import record
from graph_helpers import edge_locality_ok, edge_set, isomorphic, random_graph
from videocap import features, graph, gradcheck, metrics, training
from videocap.caption_model import greedy_decode
from videocap.temporal_attention import AttentionParams, WindowConfig, long_term_attention, short_term_attention
from videocap.training import TrainConfig


def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    results = gradcheck.run_suite(seeds=range(20))
    seconds = time.perf_counter() - start
    worst = ", ".join(f"{r.name}={r.max_error:.1e}" for r in results)
    ok = all(r.passed for r in results) and seconds < 60 and min(r.seeds for r in results) >= 20
    record(1, ok, f"gradient suite, 20 seeds, {seconds:.1f}s (<60s); max rel err {worst}")
    assert ok, gradcheck.format_table(results, per_param=True)


def test_criterion_2_attention_invariants():
    worst_sum = worst_long = 0.0
    leaks = 0
    cases = 0
    for T, w, seed in itertools.product(range(1, 9), range(0, 9), range(4)):
        rng = np.random.default_rng([T, w, seed])
        M = rng.standard_normal((T, 6)) * 2
        p = AttentionParams.init(6, 4, 3, seed)
        long_out, lw = long_term_attention(M, p)
        short_out, sw = short_term_attention(M, p, WindowConfig(w, True))
        worst_sum = max(worst_sum, np.abs(lw.value.sum(1) - 1).max(), np.abs(sw.value.sum(1) - 1).max())
        far = np.abs(np.arange(T)[:, None] - np.arange(T)[None, :]) > w
        leaks += int(np.count_nonzero(sw.value[far]))
        if w >= T - 1:
            worst_long = max(worst_long, np.abs(short_out.value - long_out.value).max())
        cases += 1
    ok = worst_sum <= 1e-9 and leaks == 0 and worst_long <= 1e-9
    record(2, ok, f"attention invariants over {cases} cases (T=1..8): max |rowsum-1|={worst_sum:.1e}, "
                  f"out-of-window nonzeros={leaks}, max |short-long| (w>=T-1)={worst_long:.1e}")
    assert ok


def test_criterion_3_graph_invariants():
    rng = random.Random(0)
    failures = []
    for seed in range(100):
        lo, hi = sorted((rng.uniform(-1, 1), rng.uniform(-1, 1)))
        g_lo, g_hi = random_graph(seed, lo, None), random_graph(seed, hi, None)
        g_default = random_graph(seed)
        if not (edge_locality_ok(g_lo) and edge_locality_ok(g_hi) and edge_locality_ok(g_default)):
            failures.append((seed, "locality"))
        if not edge_set(g_hi) <= edge_set(g_lo):
            failures.append((seed, "monotone"))
        if not isomorphic(g_default, graph.import_graph(graph.export_graph(g_default))):
            failures.append((seed, "round-trip"))
    ok = not failures
    record(3, ok, f"graph invariants on 100 random graphs: {len(failures)} violations")
    assert ok, failures


@pytest.fixture(scope="module")
def overfit_run():
    bundles, records = features.synth_dataset(20, seed=0, T=8)
    start = time.perf_counter()
    result = training.train(TrainConfig(epochs=500), bundles, records)
    return result, time.perf_counter() - start


def _refs(result):
    return [list(c) for c in result.data.captions]


def test_criterion_4_overfit(overfit_run):
    result, seconds = overfit_run
    ce = result.log.column("teacher_ce")
    first = int(np.argmax(ce < 0.05)) + 1 if np.any(ce < 0.05) else None
    acc = training.token_accuracy(training.teacher_captions(result), _refs(result))
    ok = first is not None and acc >= 0.95 and seconds < 300 and len(result.vocab) <= 40
    record(4, ok, f"overfit on 20 videos, |V|={len(result.vocab)}: teacher CE<0.05 at epoch {first} "
                  f"(final {ce[-1]:.4f}), greedy token accuracy {acc:.3f} (>=0.95), {seconds:.0f}s (<300s)")
    assert ok


def test_criterion_5_distillation(overfit_run):
    result, _ = overfit_run
    kl = result.log.column("kl")
    before = sum(graph.CALLS.values())
    hyps = training.student_captions(result)
    texts = [training.infer(result.student, b, result.vocab) for b in result.data.bundles]
    graph_calls = sum(graph.CALLS.values()) - before
    acc = training.token_accuracy(hyps, _refs(result))
    consistent = texts == [result.vocab.decode(h) for h in hyps]
    ok = kl[-1] < 0.5 * kl[0] and acc >= 0.90 and graph_calls == 0 and consistent
    record(5, ok, f"distillation: KL {kl[0]:.4f} -> {kl[-1]:.5f} (ratio {kl[-1] / kl[0]:.4f} < 0.5), "
                  f"student-only token accuracy {acc:.3f} (>=0.90), graph calls during inference {graph_calls}")
    assert ok


def _teacher_accuracy(result, bundles, records):
    cfg, tp = result.config, result.teacher
    hyps = []
    for b in bundles:
        layout = training.object_graph_layout(b, cfg, tp.graph.P_act.shape[0])
        vis = training.teacher_visual(tp, b.action_feats, b.visual_text_feats, layout, cfg)
        hyps.append(greedy_decode(vis.value, tp.decoder).tokens)
    return training.token_accuracy(hyps, [result.vocab.encode(r.captions[0]) for r in records])


def test_criterion_6_ablation_direction():
    train_set = features.synth_dataset(20, seed=0, T=8, pattern="burst")
    held_out = features.synth_dataset(20, seed=1, T=8, pattern="burst")
    acc, held = {}, {}
    for name, flags in [("full", {}), ("disable_temporal", {"disable_temporal": True}),
                        ("disable_semantic", {"disable_semantic": True})]:
        res = training.train(TrainConfig(epochs=500, **flags), *train_set)
        acc[name] = training.token_accuracy(training.teacher_captions(res), _refs(res))
        held[name] = _teacher_accuracy(res, *held_out)
    ok = acc["full"] >= acc["disable_temporal"] and acc["full"] >= acc["disable_semantic"]
    summary = ", ".join(f"{k} {acc[k]:.3f}" for k in acc)
    diag = ", ".join(f"{k} {held[k]:.3f}" for k in held)
    record(6, ok, f"burst-suite teacher token accuracy: {summary} (held-out diagnostic, not gated: {diag})")
    assert ok


def test_criterion_7_metrics_oracle():
    worst = 0.0
    for _, cands, refs in oracles.FIXTURES:
        rep = metrics.evaluate(metrics.make_pairs(cands, refs))
        corpus = oracles.fixture_corpus(cands, refs)
        worst = max(
            worst,
            abs(rep.bleu4 - oracles.bleu4(corpus)),
            max(abs(i["rouge_l"] - oracles.rouge_l(c, r)) for i, (c, r) in zip(rep.per_item, corpus)),
            max(abs(i["cider"] - o) for i, o in zip(rep.per_item, oracles.cider_d(corpus))),
        )
    ident = metrics.make_pairs({"v0": "a man is walking", "v1": "x"}, {"v0": ["a man is walking"], "v1": ["y"]})
    maxima = (metrics.bleu4(ident[:1]), metrics.rouge_l(ident[0]), metrics.cider_scores(ident)[0])
    clipped = metrics.clipped_counts(metrics.make_pairs({"v": "the the the the the the the"},
                                                        {"v": ["the cat is on the mat"]}), 1)
    pairs = metrics.make_pairs(*oracles.FIXTURES[9][1:])
    base = metrics.evaluate(pairs).to_dict()
    perm_ok = True
    for perm in itertools.islice(itertools.permutations(pairs), 24):
        r = metrics.evaluate(list(perm)).to_dict()
        perm_ok &= all(r[k] == base[k] for k in ("bleu4", "rouge_l", "cider"))
    ok = (worst <= 1e-9 and maxima[0] == 1.0 and maxima[1] == 1.0 and abs(maxima[2] - 10.0) <= 1e-9
          and clipped == (2, 7) and perm_ok)
    record(7, ok, f"metrics: 10 fixtures vs brute-force oracle max |diff|={worst:.1e}; identical-pair maxima "
                  f"{maxima[0]:.1f}/{maxima[1]:.1f}/{maxima[2]:.9f}; clipped unigrams {clipped[0]}/{clipped[1]}; "
                  f"permutation invariant={perm_ok}")
    assert ok


def test_criterion_8_cli_determinism(tmp_path):
    def cli(*args):
        out = subprocess.run([sys.executable, "-m", "videocap", *args], capture_output=True)
        assert out.returncode == 0, out.stderr.decode()
        return out.stdout

    def snapshot(d):
        return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}

    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"epochs": 20, "seed": 3}')
    runs = []
    for k in range(2):
        root = tmp_path / f"run{k}"
        cli("synth", "--out", str(root / "data"), "--videos", "6", "--frames", "6", "--seed", "5")
        cli("train", "--data", str(root / "data"), "--config", str(cfg), "--out", str(root / "ckpt"))
        caps = b"".join(cli("caption", "--ckpt", str(root / "ckpt"), "--bundle", str(root / "data" / f"vid{v:04d}.vft"))
                        for v in range(6))
        runs.append((snapshot(root), caps))
    ok = runs[0] == runs[1]
    record(8, ok, f"CLI determinism: {len(runs[0][0])} synth/train artifacts and 6 captions byte-identical across runs")
    assert ok
