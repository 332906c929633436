#!/usr/bin/env python3
"""Memorisation sanity run: a toy kea_sentence model should fit a small keyword corpus."""

import argparse
import tempfile
import time
from pathlib import Path

from kea import harness
from kea.data import generate_synthetic
from kea.harness import RunConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--variant", default="kea_sentence")
    ap.add_argument("--n-train", type=int, default=200)
    ap.add_argument("--classes", type=int, default=8)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--workdir", type=Path)
    args = ap.parse_args()

    root = args.workdir or Path(tempfile.mkdtemp(prefix="kea-overfit-"))
    data = generate_synthetic(root / "data", n_train=args.n_train, n_classes=args.classes, seed=0)
    cfg = RunConfig(dataset="synthetic", data_path=str(data), variant=args.variant,
                    max_epochs=args.epochs, patience=args.epochs, seeds=[args.seed], out_dir=str(root / "run"))
    t0 = time.perf_counter()
    prep = harness.prepare(cfg)
    res = harness.train(cfg, args.seed, prep)
    fit, _ = harness.evaluate_items(res.model, prep.splits["train"], prep.labels, 64, prep.pad_value)
    print(f"{args.variant}: train top-1 {fit.metrics['top1']:.4f}, best validation {res.best_score:.4f} "
          f"at epoch {res.best_epoch}/{len(res.epochs)}, {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
