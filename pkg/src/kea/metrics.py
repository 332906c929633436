"""Evaluation metrics and confusion-matrix extraction.

Every function is pure. Binary inputs are B x C arrays of 0/1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidConfigError, InvalidLabelError, InvalidShapeError
from .numcore import _sigmoid


def _mean(values: np.ndarray) -> float:
    # left-to-right summation, so results do not depend on numpy's pairwise blocking
    values = np.asarray(values, dtype=np.float64).ravel().tolist()
    return sum(values) / len(values) if values else 0.0


def top_k_accuracy(logits, gold, k: int) -> float:
    """Share of rows whose gold class ranks within the k largest logits.

    Ties are broken towards the lower class index.
    """
    logits = np.asarray(logits, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.int64)
    if logits.ndim != 2 or gold.shape != (logits.shape[0],):
        raise InvalidShapeError(f"logits {logits.shape} and gold {gold.shape} are incompatible")
    C = logits.shape[1]
    if not 1 <= k <= C:
        raise InvalidConfigError(f"k must lie in [1, {C}], got {k}")
    if logits.shape[0] == 0:
        return 0.0
    # stable sort on -logits keeps lower indices first among equal values
    ranked = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return float((ranked == gold[:, None]).any(axis=1).mean())


def one_hot(indices, C: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros((indices.shape[0], C), dtype=np.int64)
    out[np.arange(indices.shape[0]), indices] = 1
    return out


def _binary_pair(pred, gold) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    gold = np.asarray(gold)
    if pred.shape != gold.shape or pred.ndim != 2:
        raise InvalidShapeError(f"pred {pred.shape} and gold {gold.shape} must be equal B x C")
    return pred.astype(bool), gold.astype(bool)


def per_class_prf(pred, gold) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    p, g = _binary_pair(pred, gold)
    tp = (p & g).sum(axis=0).astype(np.float64)
    n_pred = p.sum(axis=0).astype(np.float64)
    n_gold = g.sum(axis=0).astype(np.float64)
    precision = np.divide(tp, n_pred, out=np.zeros_like(tp), where=n_pred > 0)
    recall = np.divide(tp, n_gold, out=np.zeros_like(tp), where=n_gold > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return precision, recall, f1


def macro_prf(pred, gold) -> tuple[float, float, float]:
    """Unweighted class means of precision, recall and F1 (0/0 counts as 0)."""
    precision, recall, f1 = per_class_prf(pred, gold)
    return _mean(precision), _mean(recall), _mean(f1)


def jaccard_index(pred, gold) -> float:
    """Mean per-row |pred & gold| / |pred | gold|; a row empty on both sides scores 1."""
    p, g = _binary_pair(pred, gold)
    if p.shape[0] == 0:
        return 0.0
    inter = (p & g).sum(axis=1).astype(np.float64)
    union = (p | g).sum(axis=1).astype(np.float64)
    scores = np.divide(inter, union, out=np.ones_like(inter), where=union > 0)
    return _mean(scores)


def confusion_matrix(pred, gold, C: int) -> np.ndarray:
    """Counts with cell (g, p) = examples of gold class g predicted as p."""
    pred = np.asarray(pred, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    if pred.shape != gold.shape:
        raise InvalidShapeError(f"pred {pred.shape} and gold {gold.shape} differ")
    for arr in (pred, gold):
        if arr.size and (arr.min() < 0 or arr.max() >= C):
            raise InvalidLabelError(f"class index outside [0, {C})")
    out = np.zeros((C, C), dtype=np.int64)
    np.add.at(out, (gold, pred), 1)
    return out


def sub_confusion(matrix: np.ndarray, names: Sequence[str], wanted: Sequence[str]) -> np.ndarray:
    idx = []
    for w in wanted:
        if w not in names:
            raise InvalidLabelError(f"unknown label {w!r}")
        idx.append(list(names).index(w))
    return np.asarray(matrix)[np.ix_(idx, idx)]


def format_confusion(matrix: np.ndarray, names: Sequence[str], csv: bool = False) -> str:
    if csv:
        lines = ["gold\\pred," + ",".join(names)]
        lines += [f"{n}," + ",".join(str(int(v)) for v in row) for n, row in zip(names, matrix)]
        return "\n".join(lines) + "\n"
    width = max([len(n) for n in names] + [9])
    cells = max([len(str(int(v))) for v in np.asarray(matrix).ravel()] + [max(len(n) for n in names)])
    head = " " * width + " | " + " ".join(n.rjust(cells) for n in names)
    rows = [n.ljust(width) + " | " + " ".join(str(int(v)).rjust(cells) for v in row)
            for n, row in zip(names, matrix)]
    return "\n".join([head, "-" * len(head), *rows]) + "\n"


@dataclass
class EvalResult:
    metrics: dict[str, float]
    per_class: dict[str, dict[str, float]] = field(default_factory=dict)
    confusion: list[list[int]] | None = None

    def to_dict(self) -> dict:
        out = {"metrics": self.metrics, "per_class": self.per_class}
        if self.confusion is not None:
            out["confusion"] = self.confusion
        return out


def evaluate_logits(logits, gold, mode: str, names: Sequence[str], threshold: float = 0.5) -> EvalResult:
    """Full metric bundle: top-1/top-3/macro-F1 (+P/R) for single-label,
    macro P/R/F1 and Jaccard for multi-label (sigmoid >= ``threshold``)."""
    logits = np.asarray(logits, dtype=np.float64)
    C = logits.shape[1]
    if mode == "single":
        gold = np.asarray(gold, dtype=np.int64)
        pred_idx = np.argmax(logits, axis=1)
        pred_bin, gold_bin = one_hot(pred_idx, C), one_hot(gold, C)
        metrics = {"top1": top_k_accuracy(logits, gold, 1), "top3": top_k_accuracy(logits, gold, min(3, C))}
    else:
        gold_bin = np.asarray(gold).astype(np.int64)
        probs = _sigmoid(logits)
        pred_bin = (probs >= threshold).astype(np.int64)
    P, R, F = per_class_prf(pred_bin, gold_bin)
    metrics = dict(metrics) if mode == "single" else {}
    metrics.update(macro_f1=_mean(F), macro_precision=_mean(P), macro_recall=_mean(R))
    if mode == "multi":
        metrics["jaccard"] = jaccard_index(pred_bin, gold_bin)
    per_class = {n: {"precision": float(p), "recall": float(r), "f1": float(f)}
                 for n, p, r, f in zip(names, P, R, F)}
    confusion = None
    if mode == "single":
        confusion = confusion_matrix(pred_idx, gold, C).tolist()
    return EvalResult(metrics, per_class, confusion)
