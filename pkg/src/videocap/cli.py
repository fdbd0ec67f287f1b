"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import features, graph, metrics, training
from .errors import DataError, NumericError, VideoCapError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CORRUPT_ENV = "VIDEOCAP_GRADCHECK_CORRUPT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _data_dir_bundles(data: Path) -> list[features.FeatureBundle]:
    bundles = []
    for path in sorted(data.glob("*.vft")):
        try:
            bundles.append(features.load_bundle(path))
        except DataError as exc:
            raise CliError(f"{path}: {exc}", EXIT_DATA) from exc
    return bundles


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dims = tuple(int(d) for d in args.dims.split(","))
    if len(dims) != 3:
        raise CliError("--dims needs three comma-separated widths", EXIT_USAGE)
    bundles, records = features.synth_dataset(args.videos, args.seed, args.frames, args.objects, dims, args.pattern)
    for b in bundles:
        features.save_bundle(b, out / f"{b.video_id}.vft")
    features.write_captions(out / "captions.jsonl", records)
    print(f"wrote {len(bundles)} bundles and captions.jsonl to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    data = Path(args.data)
    if not data.is_dir():
        raise CliError(f"{data}: not a directory", EXIT_DATA)
    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"{args.config}: invalid JSON: {exc}", EXIT_DATA) from exc
    for name in args.ablate or []:
        raw[f"disable_{name}"] = True
    try:
        cfg = training.TrainConfig.from_dict(raw)
    except VideoCapError as exc:
        raise CliError(f"{args.config}: {exc}", EXIT_DATA) from exc
    captions = Path(args.captions) if args.captions else data / "captions.jsonl"
    if not captions.is_file():
        raise CliError(f"{captions}: captions file not found", EXIT_DATA)
    records = features.read_captions(captions)
    bundles = _data_dir_bundles(data)
    out = Path(args.out)
    print("config: " + json.dumps(cfg.to_dict(), sort_keys=True), file=sys.stderr)

    def checkpoint(epoch, result):
        training.save_checkpoint(result, out / f"epoch_{epoch:04d}")

    result = training.train(cfg, bundles, records, on_checkpoint=checkpoint)
    training.save_checkpoint(result, out)
    (out / "train_log.csv").write_text(result.log.to_csv())
    last = result.log.rows[-1]
    print(
        f"trained {cfg.epochs} epochs in {last['seconds']:.1f}s: teacher_ce={last['teacher_ce']:.4f} "
        f"student_ce={last['student_ce']:.4f} kl={last['kl']:.4f}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_caption(args) -> int:
    student, vocab, side = training.load_student(args.ckpt)
    print(training.infer(student, args.bundle, vocab, beam=args.beam, max_len=args.max_len))
    return EXIT_OK


def _read_candidates(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            out[obj["video_id"]] = obj["caption"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CliError(f"{path}:{lineno}: malformed candidate record", EXIT_DATA) from exc
    if not out:
        raise CliError(f"{path}: no candidates", EXIT_DATA)
    return out


def cmd_eval(args) -> int:
    cands = _read_candidates(args.candidates)
    refs = {r.video_id: r.captions for r in features.read_captions(args.references)}
    report = metrics.evaluate(metrics.make_pairs(cands, refs))
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def cmd_graph_export(args) -> int:
    bundle = features.load_bundle(args.bundle)
    theta, top_k = args.theta, args.top_k
    action_rows = bundle.action_feats
    if args.ckpt:
        tp, cfg, _ = training.load_teacher(args.ckpt)
        theta = cfg.theta if theta is None else theta
        top_k = cfg.top_k if top_k is None else top_k
        action_rows = training.action_node_features(tp, bundle.action_feats, bundle.visual_text_feats, cfg).value
    theta = 0.5 if theta is None else theta
    top_k = 1 if top_k is None else top_k
    g = graph.merge_graphs(
        graph.build_object_graph(bundle.object_feats, bundle.object_mask, theta, top_k or None),
        graph.build_action_graph(action_rows),
    )
    text = graph.export_graph(g, args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import gradcheck

    corrupt = os.environ.get(CORRUPT_ENV, "") not in ("", "0")
    results = gradcheck.run_suite(range(args.seed, args.seed + args.seeds), corrupt=corrupt)
    print(gradcheck.format_table(results, per_param=True))
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="videocap", description="Action-aware graph transformer video captioning toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic feature/caption dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--videos", type=int, default=20)
    s.add_argument("--frames", type=int, default=8)
    s.add_argument("--objects", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pattern", choices=features.PATTERNS + ("mixed",), default="mixed")
    s.add_argument("--dims", default=",".join(map(str, features.DEFAULT_DIMS)), help="d_o,d_m,d_c")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train teacher and student jointly")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--captions", help="captions .jsonl (default DATA/captions.jsonl)")
    t.add_argument("--ablate", action="append", choices=("temporal", "semantic"))
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("caption", help="caption one bundle with the student")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--bundle", required=True)
    c.add_argument("--beam", type=int, default=1)
    c.add_argument("--max-len", type=int)
    c.set_defaults(func=cmd_caption)

    e = sub.add_parser("eval", help="BLEU-4 / ROUGE-L / CIDEr-D report")
    e.add_argument("--candidates", required=True)
    e.add_argument("--references", required=True)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("graph-export", help="export a bundle's objects-action graph")
    g.add_argument("--bundle", required=True)
    g.add_argument("--format", choices=("json", "dot"), default="json")
    g.add_argument("--ckpt", help="use a trained teacher for the action node features")
    g.add_argument("--theta", type=float)
    g.add_argument("--top-k", type=int)
    g.add_argument("--out")
    g.set_defaults(func=cmd_graph_export)

    k = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--seeds", type=int, default=20)
    k.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
