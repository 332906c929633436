"""Command-line entry point: ``kea <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .data import generate_synthetic
from .errors import KEAError
from .lexicon import convert_eil
from .metrics import format_confusion, sub_confusion


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="RunConfig JSON file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override, e.g. --set encoder.l_c=32 (repeatable)")
    p.add_argument("--out", type=Path, help="output directory (overrides out_dir)")


def _load(args) -> harness.RunConfig:
    cfg = harness.load_config(args.config, args.overrides)
    if args.out is not None:
        cfg.out_dir = str(args.out)
    return cfg


def cmd_train(args) -> int:
    cfg = _load(args)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    res = harness.train(cfg, seed, out_dir=Path(cfg.out_dir))
    print(json.dumps({"checkpoint": str(res.checkpoint), "best_epoch": res.best_epoch,
                      "best_score": res.best_score, "stop_metric": res.stop_metric,
                      "epochs_run": len(res.epochs)}, indent=2))
    return 0


def cmd_eval(args) -> int:
    result = harness.evaluate(args.checkpoint, args.split, args.data_path, args.dump_logits)
    text = json.dumps(result.to_dict(), indent=2, sort_keys=True)
    if args.out:
        args.out.write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_run(args) -> int:
    cfg = _load(args)
    if args.seed:
        cfg.seeds = list(args.seed)
    if args.grid_lr or args.grid_batch:
        cfg, trials = harness.select_from_grid(cfg, args.grid_lr or [cfg.lr], args.grid_batch or [cfg.batch_size])
        print(json.dumps({"grid": trials, "selected": {"lr": cfg.lr, "batch_size": cfg.batch_size}}, indent=2))
    report = harness.run_experiment(cfg)
    summary = {m: f"{v['mean']:.4f} ({v['std']:.4f})" for m, v in report["aggregate"]["test"].items()}
    print(json.dumps({"report": str(Path(cfg.out_dir) / "report.json"), "test": summary,
                      "failed_seeds": report["failed_seeds"]}, indent=2))
    return 1 if report["failed_seeds"] else 0


def cmd_predict(args) -> int:
    text = args.text[0] if len(args.text) == 1 else args.text
    out = harness.predict(args.checkpoint, text)
    shown = out["labels"][: args.top] if args.top else out["labels"]
    for name, prob in shown:
        print(f"{name}\t{prob:.6f}")
    if args.json:
        print(json.dumps(out, indent=2))
    return 0


def cmd_export(args) -> int:
    manifest = harness.export_embeddings(args.checkpoint, args.split, args.out, args.data_path)
    print(manifest)
    return 0


def cmd_gen(args) -> int:
    out = generate_synthetic(args.out, kind=args.kind, n_train=args.n_train, n_dev=args.n_dev,
                             n_test=args.n_test, n_classes=args.classes, mode=args.mode,
                             seq_len=args.seq_len, seed=args.seed)
    print(out)
    return 0


def cmd_report(args) -> int:
    if args.report:
        report = json.loads(args.report.read_text(encoding="utf-8"))
        names = report["dataset"]["labels"]["names"]
        mats = [np.asarray(r[args.split]["confusion"]) for r in report["runs"]
                if r["status"] == "ok" and "confusion" in r.get(args.split, {})]
        if not mats:
            raise KEAError("report holds no confusion matrices (multi-label run?)")
        matrix = sum(mats)
    elif args.checkpoint:
        result = harness.evaluate(args.checkpoint, args.split, args.data_path)
        if result.confusion is None:
            raise KEAError("confusion matrices exist for single-label checkpoints only")
        names = list(result.per_class)
        matrix = np.asarray(result.confusion)
    else:
        raise KEAError("report needs --report or --checkpoint")
    wanted = [w.strip() for w in args.labels.split(",")] if args.labels else names
    sys.stdout.write(format_confusion(sub_confusion(matrix, names, wanted), wanted, csv=args.csv))
    return 0


def cmd_convert_eil(args) -> int:
    n = convert_eil(args.input, args.output)
    print(f"{n} words written to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kea", description="Lexicon-aware attention experiments for emotion classification")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one seed and write a checkpoint")
    _config_args(p)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", default="test", choices=("train", "validation", "test"))
    p.add_argument("--data-path")
    p.add_argument("--dump-logits", type=Path, help="write logits/gold/ids to this .npz")
    p.add_argument("--out", type=Path, help="write the EvalResult JSON here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("run", help="multi-seed train+evaluate, writes report.json")
    _config_args(p)
    p.add_argument("--seed", type=int, action="append", help="seed to run (repeatable; replaces config seeds)")
    p.add_argument("--grid-lr", type=float, nargs="+")
    p.add_argument("--grid-batch", type=int, nargs="+")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("predict", help="rank labels for a text (repeat --text for conversation turns)")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--text", action="append", required=True)
    p.add_argument("--top", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("export-embeddings", help="write KEAE files of the encoder output")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", default="train", choices=("train", "validation", "test"))
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--data-path")
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("gen-synthetic", help="write a synthetic corpus and lexicon")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--kind", choices=("keyword", "lexicon"), default="keyword")
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-dev", type=int, default=50)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--mode", choices=("single", "multi"), default="single")
    p.add_argument("--seq-len", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("report", help="confusion-matrix excerpt by label names")
    p.add_argument("--report", type=Path, help="report.json from `run` (matrices summed over seeds)")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--split", default="test", choices=("validation", "test"))
    p.add_argument("--data-path")
    p.add_argument("--labels", help="comma-separated label names, e.g. afraid,terrified")
    p.add_argument("--csv", action="store_true")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("convert-eil", help="convert the long EIL file to the wide lexicon layout")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.set_defaults(fn=cmd_convert_eil)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (KEAError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
