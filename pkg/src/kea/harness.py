"""Experiment driver: configs, training with early stopping, multi-seed reports, prediction, export."""

from __future__ import annotations

import copy
import json
import logging
import math
import re
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import numcore as nc
from .data import (Dataset, Encoded, Example, LabelSpace, encode_examples, load_dataset, make_batches,
                   preprocess_tweet, tokens_of)
from .encoder import EncoderConfig, Vocabulary, encode_ids, keae_bytes, load_precomputed
from .errors import DivergedError, FormatError, InvalidConfigError, KEAError
from .fusion import FusionModel, ModelConfig, load_checkpoint, probabilities, save_checkpoint
from .lexicon import Lexicon, load_eil, load_lexicon, load_vad
from .metrics import EvalResult, evaluate_logits

log = logging.getLogger(__name__)

REPORT_SCHEMA_ID = "kea.run_report/1"
WALL_CLOCK_KEY = "wall_clock_seconds"
STOP_METRICS = {"single": ("top1", "top3", "macro_f1"), "multi": ("macro_f1", "jaccard")}


@dataclass
class RunConfig:
    dataset: str = "synthetic"
    data_path: str = ""
    variant: str = "kea_sentence"
    lexicon: str = "vad"
    lexicon_path: str = ""
    lexicon_dims: int = 3
    lexicon_default: float = 0.5
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    encoder_source: str = "toy"
    cache_dir: str = ""
    l_pad: int = 64
    lr: float = 1e-3
    batch_size: int = 16
    eval_batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    stop_metric: str = "auto"
    out_dir: str = "runs/default"

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise InvalidConfigError(f"unknown config keys: {unknown}")
        raw = dict(raw)
        if isinstance(raw.get("encoder"), dict):
            enc_known = {f.name for f in fields(EncoderConfig)}
            bad = sorted(set(raw["encoder"]) - enc_known)
            if bad:
                raise InvalidConfigError(f"unknown encoder keys: {bad}")
            raw["encoder"] = EncoderConfig(**raw["encoder"])
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self, mode: str | None = None) -> None:
        if not self.lr > 0:
            raise InvalidConfigError(f"learning rate must be positive, got {self.lr}")
        if self.patience < 1:
            raise InvalidConfigError(f"patience must be >= 1, got {self.patience}")
        if not self.seeds:
            raise InvalidConfigError("seed list is empty")
        if self.batch_size < 1 or self.eval_batch_size < 1 or self.max_epochs < 1 or self.l_pad < 1:
            raise InvalidConfigError("batch sizes, max_epochs and l_pad must be positive")
        if self.encoder_source not in ("toy", "precomputed"):
            raise InvalidConfigError(f"unknown encoder source {self.encoder_source!r}")
        if self.encoder_source == "precomputed" and not self.cache_dir:
            raise InvalidConfigError("precomputed encoder source needs cache_dir")
        if mode is not None and self.stop_metric != "auto" and self.stop_metric not in STOP_METRICS[mode]:
            raise InvalidConfigError(f"stop metric {self.stop_metric!r} invalid for {mode}-label data")

    def resolved_stop_metric(self, mode: str) -> str:
        if self.stop_metric != "auto":
            return self.stop_metric
        return "top1" if mode == "single" else "macro_f1"


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides: Sequence[str]) -> dict:
    """Apply ``dotted.key=value`` overrides; values parse as JSON when they can."""
    raw = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise InvalidConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        node = raw
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = _parse_value(value)
    return raw


def load_config(path: str | Path | None = None, overrides: Sequence[str] = ()) -> RunConfig:
    raw = RunConfig().to_dict()
    if path is not None:
        loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        enc = {**raw["encoder"], **loaded.pop("encoder", {})}
        raw.update(loaded)
        raw["encoder"] = enc
    return RunConfig.from_dict(apply_overrides(raw, overrides))


# ---------------------------------------------------------------- preparation


def resolve_lexicon(cfg: RunConfig) -> Lexicon | None:
    if cfg.lexicon == "none":
        return None
    path = cfg.lexicon_path or (str(Path(cfg.data_path) / "lexicon.tsv") if cfg.dataset == "synthetic" else "")
    if not path:
        raise InvalidConfigError(f"lexicon {cfg.lexicon!r} needs lexicon_path")
    if cfg.lexicon == "vad":
        return load_vad(path)
    if cfg.lexicon == "eil":
        return load_eil(path)
    if cfg.lexicon == "custom":
        return load_lexicon(path, cfg.lexicon_dims, cfg.lexicon_default)
    raise InvalidConfigError(f"unknown lexicon kind {cfg.lexicon!r}")


@dataclass
class Prepared:
    dataset: Dataset
    vocab: Vocabulary
    lexicon: Lexicon | None
    splits: dict[str, list[Encoded]]
    model_config: ModelConfig

    @property
    def labels(self) -> LabelSpace:
        return self.dataset.labels

    @property
    def pad_value(self) -> list[float]:
        return list(self.lexicon.default) if self.lexicon is not None else []


def _safe_name(example_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", example_id)


def _attach_cache(items: list[Encoded], cache_dir: Path, manifest: dict[str, str]) -> int:
    width = 0
    for it in items:
        if it.id not in manifest:
            raise FormatError(f"example {it.id!r} missing from embedding manifest in {cache_dir}")
        hc = load_precomputed(cache_dir / manifest[it.id]).H_c.data
        if hc.shape[0] != len(it.ids):
            raise FormatError(f"cached H_c for {it.id!r} has {hc.shape[0]} rows but {len(it.ids)} tokens")
        it.hc = hc
        width = hc.shape[1]
    return width


def read_manifest(cache_dir: str | Path) -> dict[str, str]:
    rows = Path(cache_dir, "manifest.tsv").read_text(encoding="utf-8").splitlines()
    return dict(line.split("\t", 1) for line in rows if line)


def prepare(cfg: RunConfig, vocab: Vocabulary | None = None) -> Prepared:
    dataset = load_dataset(cfg.dataset, cfg.data_path)
    cfg.validate(dataset.labels.mode)
    lexicon = resolve_lexicon(cfg)
    max_len = cfg.encoder.max_len
    if vocab is None:
        vocab = Vocabulary.build((tokens_of(e, max_len) for e in dataset.split("train")), cfg.encoder.min_freq)
    splits = {s: encode_examples(dataset.split(s), vocab, lexicon, cfg.l_pad, max_len)
              for s in ("train", "validation", "test")}
    enc = EncoderConfig(**{**asdict(cfg.encoder), "vocab_size": len(vocab)})
    if cfg.encoder_source == "precomputed":
        manifest = read_manifest(cfg.cache_dir)
        widths = {_attach_cache(items, Path(cfg.cache_dir), manifest) for items in splits.values() if items}
        if len(widths) != 1:
            raise FormatError(f"cached embeddings disagree on width: {sorted(widths)}")
        enc.l_c = widths.pop()
    mcfg = ModelConfig(
        variant=cfg.variant,
        n_classes=dataset.labels.size,
        mode=dataset.labels.mode,
        l_e=lexicon.dims if lexicon is not None else 0,
        l_pad=cfg.l_pad,
        pad_value=list(lexicon.default) if lexicon is not None else [],
        source=cfg.encoder_source,
        encoder=enc,
    )
    mcfg.validate()
    return Prepared(dataset, vocab, lexicon, splits, mcfg)


# ---------------------------------------------------------------- training


class EarlyStopping:
    """Tracks the best score; ``update`` returns True once ``patience`` epochs pass without gain."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_score = -math.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, score: float) -> bool:
        if score > self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience


def predict_logits(model: FusionModel, items: Sequence[Encoded], batch_size: int,
                   pad_value: Sequence[float]) -> np.ndarray:
    out = [model.forward(b).data for b in make_batches(items, batch_size, pad_value=pad_value)]
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.config.n_classes))


def gold_of(items: Sequence[Encoded]) -> np.ndarray:
    return np.stack([np.asarray(it.label) for it in items]) if items else np.zeros(0)


def evaluate_items(model: FusionModel, items: Sequence[Encoded], labels: LabelSpace, batch_size: int,
                   pad_value: Sequence[float]) -> tuple[EvalResult, np.ndarray]:
    logits = predict_logits(model, items, batch_size, pad_value)
    return evaluate_logits(logits, gold_of(items), labels.mode, labels.names), logits


@dataclass
class TrainResult:
    model: FusionModel
    epochs: list[dict]
    best_epoch: int
    best_score: float
    stop_metric: str
    checkpoint: Path | None = None


def checkpoint_meta(cfg: RunConfig, prep: Prepared, seed: int, extra: dict | None = None) -> dict:
    meta = {
        "run_config": cfg.to_dict(),
        "seed": seed,
        "vocab": prep.vocab.to_list(),
        "labels": prep.labels.to_dict(),
        "dataset": prep.dataset.name,
    }
    meta.update(extra or {})
    return meta


def train(cfg: RunConfig, seed: int, prep: Prepared | None = None, out_dir: str | Path | None = None) -> TrainResult:
    """Adam on shuffled batches; validation after each epoch; best parameters restored at the end."""
    prep = prep or prepare(cfg)
    if not prep.splits["train"] or not prep.splits["validation"]:
        raise InvalidConfigError("training needs non-empty train and validation splits")
    metric = cfg.resolved_stop_metric(prep.labels.mode)
    model = FusionModel(prep.model_config, seed=seed)
    opt = nc.Adam(model.parameters(), lr=cfg.lr)
    stopper = EarlyStopping(cfg.patience)
    best_state = model.state_dict()
    epochs = []
    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        for b, batch in enumerate(make_batches(prep.splits["train"], cfg.batch_size, seed=seed, shuffle=True,
                                               epoch=epoch, pad_value=prep.pad_value)):
            opt.zero_grad()
            loss = model.loss(model.forward(batch), batch.labels)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergedError(epoch, b, value)
            nc.backward(loss)
            opt.step()
            losses.append(value)
        result, _ = evaluate_items(model, prep.splits["validation"], prep.labels, cfg.eval_batch_size,
                                   prep.pad_value)
        score = result.metrics[metric]
        epochs.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "validation": score})
        log.info("seed %d epoch %d loss %.5f val %s %.4f", seed, epoch, epochs[-1]["train_loss"], metric, score)
        improved_before = stopper.best_score
        stop = stopper.update(epoch, score)
        if score > improved_before:
            best_state = model.state_dict()
        if stop:
            break
    model.load_state_dict(best_state)
    ckpt = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / "model.keac"
        save_checkpoint(ckpt, model, checkpoint_meta(cfg, prep, seed, {
            "best_epoch": stopper.best_epoch, "best_score": stopper.best_score, "stop_metric": metric}))
        (out / "epochs.json").write_text(json.dumps(epochs, indent=2) + "\n", encoding="utf-8")
    return TrainResult(model, epochs, stopper.best_epoch, stopper.best_score, metric, ckpt)


# ---------------------------------------------------------------- checkpoints in use


def restore(checkpoint: str | Path, data_path: str | None = None) -> tuple[FusionModel, dict, RunConfig, Prepared]:
    """Load a checkpoint and rebuild its data pipeline with the stored vocabulary."""
    model, meta = load_checkpoint(checkpoint)
    cfg = RunConfig.from_dict(meta["run_config"])
    if data_path is not None:
        cfg.data_path = data_path
    prep = prepare(cfg, vocab=Vocabulary(meta["vocab"]))
    if prep.labels.to_dict() != meta["labels"]:
        raise InvalidConfigError("checkpoint label space does not match the dataset")
    return model, meta, cfg, prep


def evaluate(checkpoint: str | Path, split: str = "test", data_path: str | None = None,
             dump_logits: str | Path | None = None) -> EvalResult:
    model, meta, cfg, prep = restore(checkpoint, data_path)
    result, logits = evaluate_items(model, prep.splits[split], prep.labels, cfg.eval_batch_size, prep.pad_value)
    if dump_logits is not None:
        ids = [it.id for it in prep.splits[split]]
        np.savez(dump_logits, logits=logits, gold=gold_of(prep.splits[split]), ids=np.array(ids))
    return result


def predict(checkpoint: str | Path, text: str | Sequence[str]) -> dict:
    """Ranked labels for one input (a list of strings is read as conversation utterances)."""
    model, meta = load_checkpoint(checkpoint)
    cfg = RunConfig.from_dict(meta["run_config"])
    labels = LabelSpace(meta["labels"]["mode"], tuple(meta["labels"]["names"]))
    vocab = Vocabulary(meta["vocab"])
    lexicon = resolve_lexicon(cfg)
    if model.config.source != "toy":
        raise InvalidConfigError("prediction from raw text needs a checkpoint with the trainable encoder")
    is_conv = not isinstance(text, str)
    if meta.get("dataset") == "ait" and isinstance(text, str):
        text = preprocess_tweet(text)
    item = encode_examples([Example("input", text, 0, "test", is_conversation=is_conv)], vocab, lexicon,
                           cfg.l_pad, cfg.encoder.max_len)[0]
    logits = predict_logits(model, [item], 1, list(lexicon.default) if lexicon else [])[0]
    probs = probabilities(logits, labels.mode)
    order = sorted(range(labels.size), key=lambda i: (-probs[i], i))
    ranked = [(labels.names[i], float(probs[i])) for i in order]
    if labels.mode == "multi":
        ranked = [(n, p) for n, p in ranked if p >= 0.5]
    return {"mode": labels.mode, "tokens": item.tokens, "labels": ranked,
            "probabilities": {n: float(p) for n, p in zip(labels.names, probs)},
            "logits": [float(z) for z in logits]}


def export_embeddings(checkpoint: str | Path, split: str, out_dir: str | Path,
                      data_path: str | None = None) -> Path:
    """Write one KEAE file per example of ``split`` plus ``manifest.tsv`` (id TAB file name)."""
    model, meta, cfg, prep = restore(checkpoint, data_path)
    if model.config.source != "toy":
        raise InvalidConfigError("export needs a checkpoint with the trainable encoder")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create export directory {out}: {exc}") from exc
    manifest_path = out / "manifest.tsv"
    existing = read_manifest(out) if manifest_path.exists() else {}
    for it in prep.splits[split]:
        H_c = encode_ids(np.asarray(it.ids), model.params, model.config.encoder).data
        name = _safe_name(it.id) + ".keae"
        (out / name).write_bytes(keae_bytes(H_c))
        existing[it.id] = name
    manifest_path.write_text("".join(f"{k}\t{v}\n" for k, v in existing.items()), encoding="utf-8")
    return manifest_path


# ---------------------------------------------------------------- multi-seed runs


def aggregate(values: Sequence[float]) -> dict[str, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return {"mean": float(arr.mean()), "std": std, "n": int(arr.size)}


def aggregate_runs(runs: Sequence[dict], key: str) -> dict[str, dict[str, float]]:
    done = [r for r in runs if r["status"] == "ok"]
    if not done:
        return {}
    names = sorted(done[0][key]["metrics"])
    return {m: aggregate([r[key]["metrics"][m] for r in done]) for m in names}


def run_experiment(cfg: RunConfig, write: bool = True) -> dict:
    """Train and evaluate once per seed; return (and write) the RunReport."""
    cfg.validate()
    started = time.perf_counter()
    prep = prepare(cfg)
    out = Path(cfg.out_dir)
    runs = []
    for seed in cfg.seeds:
        t0 = time.perf_counter()
        entry: dict[str, Any] = {"seed": seed}
        try:
            res = train(cfg, seed, prep, out / f"seed-{seed}" if write else None)
            val, _ = evaluate_items(res.model, prep.splits["validation"], prep.labels, cfg.eval_batch_size,
                                    prep.pad_value)
            test, _ = evaluate_items(res.model, prep.splits["test"], prep.labels, cfg.eval_batch_size,
                                     prep.pad_value)
            entry.update(status="ok", best_epoch=res.best_epoch, best_validation_score=res.best_score,
                         epochs=res.epochs, validation=val.to_dict(), test=test.to_dict())
        except KEAError as exc:
            log.error("seed %d failed: %s", seed, exc)
            entry.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        entry[WALL_CLOCK_KEY] = time.perf_counter() - t0
        runs.append(entry)
    report = {
        "schema": REPORT_SCHEMA_ID,
        "config": cfg.to_dict(),
        "dataset": {"name": prep.dataset.name, "labels": prep.labels.to_dict(),
                    "split_sizes": prep.dataset.split_sizes()},
        "stop_metric": cfg.resolved_stop_metric(prep.labels.mode),
        "seeds": list(cfg.seeds),
        "runs": runs,
        "failed_seeds": [r["seed"] for r in runs if r["status"] != "ok"],
        "aggregate": {"validation": aggregate_runs(runs, "validation"), "test": aggregate_runs(runs, "test")},
        WALL_CLOCK_KEY: time.perf_counter() - started,
    }
    if write:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report_json(report), encoding="utf-8")
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def strip_wall_clock(obj):
    if isinstance(obj, dict):
        return {k: strip_wall_clock(v) for k, v in obj.items() if k != WALL_CLOCK_KEY}
    if isinstance(obj, list):
        return [strip_wall_clock(v) for v in obj]
    return obj


def select_from_grid(base: RunConfig, lrs: Sequence[float], batch_sizes: Sequence[int]) -> tuple[RunConfig, list[dict]]:
    """Train every (lr, batch) pair on the first seed; keep the best validation score."""
    prep = prepare(base)
    trials = []
    best_cfg, best_score = None, -math.inf
    for lr in lrs:
        for bs in batch_sizes:
            cfg = copy.deepcopy(base)
            cfg.lr, cfg.batch_size = float(lr), int(bs)
            res = train(cfg, cfg.seeds[0], prep)
            trials.append({"lr": cfg.lr, "batch_size": cfg.batch_size, "best_validation_score": res.best_score})
            if res.best_score > best_score:
                best_cfg, best_score = cfg, res.best_score
    return best_cfg, trials


_METRIC_BUNDLE = {
    "type": "object",
    "required": ["metrics", "per_class"],
    "properties": {
        "metrics": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1}},
        "per_class": {"type": "object"},
        "confusion": {"type": "array", "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
    },
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "config", "dataset", "stop_metric", "seeds", "runs", "failed_seeds", "aggregate",
                 WALL_CLOCK_KEY],
    "properties": {
        "schema": {"const": REPORT_SCHEMA_ID},
        "config": {"type": "object"},
        "seeds": {"type": "array", "minItems": 1, "items": {"type": "integer"}},
        "failed_seeds": {"type": "array", "items": {"type": "integer"}},
        "stop_metric": {"type": "string"},
        "runs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["seed", "status", WALL_CLOCK_KEY],
                "properties": {
                    "status": {"enum": ["ok", "failed"]},
                    "best_epoch": {"type": "integer", "minimum": 1},
                    "validation": _METRIC_BUNDLE,
                    "test": _METRIC_BUNDLE,
                    "epochs": {"type": "array", "items": {"type": "object",
                                                          "required": ["epoch", "train_loss", "validation"]}},
                },
            },
        },
        "aggregate": {
            "type": "object",
            "properties": {
                split: {"type": "object", "additionalProperties": {
                    "type": "object", "required": ["mean", "std", "n"],
                    "properties": {"mean": {"type": "number"}, "std": {"type": "number", "minimum": 0},
                                   "n": {"type": "integer", "minimum": 1}}}}
                for split in ("validation", "test")
            },
        },
    },
}
