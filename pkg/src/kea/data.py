"""Corpus loaders, tweet preprocessing, example encoding, padded batches, and a synthetic corpus."""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .encoder import PAD_ID, Vocabulary, tokenize
from .errors import IngestError, InvalidConfigError
from .lexicon import Lexicon, featurize, pad_channels, write_lexicon, VAD_CHANNELS
from .numcore import SplitMix64

SPLITS = ("train", "validation", "test")

ED_LABELS = (
    "afraid", "angry", "annoyed", "anticipating", "anxious", "apprehensive", "ashamed", "caring",
    "confident", "content", "devastated", "disappointed", "disgusted", "embarrassed", "excited",
    "faithful", "furious", "grateful", "guilty", "hopeful", "impressed", "jealous", "joyful",
    "lonely", "nostalgic", "prepared", "proud", "sad", "sentimental", "surprised", "terrified",
    "trusting",
)
GOEMOTIONS_LABELS = (
    "admiration", "amusement", "anger", "annoyance", "approval", "caring", "confusion",
    "curiosity", "desire", "disappointment", "disapproval", "disgust", "embarrassment",
    "excitement", "fear", "gratitude", "grief", "joy", "love", "nervousness", "optimism",
    "pride", "realization", "relief", "remorse", "sadness", "surprise", "neutral",
)
AIT_LABELS = (
    "anger", "anticipation", "disgust", "fear", "joy", "love", "optimism", "pessimism",
    "sadness", "surprise", "trust",
)


@dataclass(frozen=True)
class LabelSpace:
    mode: str
    names: tuple[str, ...]

    def __post_init__(self):
        if self.mode not in ("single", "multi"):
            raise InvalidConfigError(f"label mode must be single or multi, got {self.mode!r}")
        if len(set(self.names)) != len(self.names):
            raise InvalidConfigError("label names must be unique")

    @property
    def size(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(name) from None

    def to_dict(self) -> dict:
        return {"mode": self.mode, "names": list(self.names)}


@dataclass
class Example:
    id: str
    text: str | list[str]
    label: int | list[int]
    split: str
    is_conversation: bool = False


@dataclass
class Dataset:
    name: str
    labels: LabelSpace
    examples: list[Example]

    def split(self, name: str) -> list[Example]:
        return [e for e in self.examples if e.split == name]

    def split_sizes(self) -> dict[str, int]:
        return {s: sum(e.split == s for e in self.examples) for s in SPLITS}


def _split_name(raw: str) -> str:
    raw = raw.strip().lower()
    if raw in ("train",):
        return "train"
    if raw in ("valid", "validation", "dev", "val"):
        return "validation"
    if raw in ("test", "test-gold", "test_gold"):
        return "test"
    raise IngestError(f"unknown split name {raw!r}")


def _find(directory: Path, *patterns: str) -> Path | None:
    for pattern in patterns:
        hits = sorted(directory.glob(pattern))
        if hits:
            return hits[0]
    return None


# ---------------------------------------------------------------- EmpatheticDialogues


def load_ed(directory: str | Path) -> Dataset:
    """One example per conversation, utterances ordered by index.

    Reads ``train.csv``/``valid.csv``/``test.csv`` (the distribution layout,
    ``_comma_`` restored) or a single CSV with a ``split`` column.
    """
    directory = Path(directory)
    labels = LabelSpace("single", ED_LABELS)
    files = [(p, _split_name(p.stem)) for p in (directory / f for f in ("train.csv", "valid.csv", "test.csv"))
             if p.exists()]
    if not files:
        files = [(p, None) for p in sorted(directory.glob("*.csv"))]
    if not files:
        raise IngestError(f"no ED csv files under {directory}")

    convs: dict[str, dict] = {}
    for path, split in files:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            try:
                c_id, c_idx, c_ctx, c_utt = (header.index(k) for k in
                                             ("conv_id", "utterance_idx", "context", "utterance"))
            except ValueError as exc:
                raise IngestError(f"{path.name}: header lacks ED columns: {header}") from exc
            c_split = header.index("split") if "split" in header else None
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) <= max(c_id, c_idx, c_ctx, c_utt):
                    raise IngestError(f"{path.name}:{lineno}: short row {row!r}")
                label = row[c_ctx].strip()
                if label not in ED_LABELS:
                    raise IngestError(f"{path.name}:{lineno}: unknown emotion label {label!r} in row {row!r}")
                row_split = split if c_split is None else _split_name(row[c_split])
                conv = convs.setdefault(row[c_id], {"label": label, "split": row_split, "utts": []})
                if conv["label"] != label:
                    raise IngestError(f"{path.name}:{lineno}: conversation {row[c_id]} changes label")
                try:
                    idx = int(row[c_idx])
                except ValueError as exc:
                    raise IngestError(f"{path.name}:{lineno}: bad utterance index {row[c_idx]!r}") from exc
                conv["utts"].append((idx, row[c_utt].replace("_comma_", ",")))

    examples = []
    for split in SPLITS:
        for conv_id, conv in convs.items():
            if conv["split"] != split:
                continue
            utts = [u for _, u in sorted(conv["utts"], key=lambda pair: pair[0])]
            examples.append(Example(conv_id, utts, labels.index(conv["label"]), split, is_conversation=True))
    return Dataset("ed", labels, examples)


# ---------------------------------------------------------------- GoEmotions-style TSV


def _load_tsv_split(path: Path, split: str, n_classes: int) -> list[Example]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise IngestError(f"{path.name}:{lineno}: expected text, labels, id; got {len(cols)} columns")
            text, raw_labels, ex_id = cols
            if not raw_labels.strip():
                raise IngestError(f"{path.name}:{lineno}: empty label field")
            vec = [0] * n_classes
            for tok in raw_labels.split(","):
                try:
                    k = int(tok)
                except ValueError as exc:
                    raise IngestError(f"{path.name}:{lineno}: bad label id {tok!r}") from exc
                if not 0 <= k < n_classes:
                    raise IngestError(f"{path.name}:{lineno}: label id {k} outside [0, {n_classes})")
                vec[k] = 1
            out.append(Example(ex_id, text, vec, split))
    return out


def load_goemotions(directory: str | Path) -> Dataset:
    """``train.tsv``/``dev.tsv``/``test.tsv`` rows of text, comma-separated label ids, comment id."""
    directory = Path(directory)
    labels = LabelSpace("multi", GOEMOTIONS_LABELS)
    examples = []
    for fname, split in (("train.tsv", "train"), ("dev.tsv", "validation"), ("test.tsv", "test")):
        path = directory / fname
        if not path.exists():
            raise IngestError(f"missing GoEmotions file {path}")
        examples.extend(_load_tsv_split(path, split, labels.size))
    return Dataset("goemotions", labels, examples)


# ---------------------------------------------------------------- Affect in Tweets (E-c)

_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_MENTION_RE = re.compile(r"@\w+")
_REPEAT_RE = re.compile(r"([A-Za-z])\1{2,}")
_SPACE_RE = re.compile(r"\s+")


def preprocess_tweet(text: str) -> str:
    text = text.encode("ascii", "ignore").decode("ascii")
    text = _URL_RE.sub("<url>", text)
    text = _MENTION_RE.sub("<user>", text)
    text = _REPEAT_RE.sub(r"\1\1", text)
    return _SPACE_RE.sub(" ", text).strip()


def load_ait(directory: str | Path) -> Dataset:
    """SemEval-2018 E-c files: ``ID, Tweet`` then 11 binary emotion columns."""
    directory = Path(directory)
    labels = LabelSpace("multi", AIT_LABELS)
    found = {
        "train": _find(directory, "*train*.txt", "*train*.tsv"),
        "validation": _find(directory, "*dev*.txt", "*dev*.tsv"),
        "test": _find(directory, "*test*.txt", "*test*.tsv"),
    }
    examples = []
    for split, path in found.items():
        if path is None:
            raise IngestError(f"missing AIT {split} file under {directory}")
        with open(path, encoding="utf-8", newline="") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.rstrip("\r\n")
                if not line:
                    continue
                cols = line.split("\t")
                if lineno == 1 and cols[0].strip().lower() == "id":
                    continue
                if len(cols) != 2 + labels.size:
                    raise IngestError(f"{path.name}:{lineno}: expected {2 + labels.size} columns, got {len(cols)}")
                cells = [c.strip() for c in cols[2:]]
                if any(c not in ("0", "1") for c in cells):
                    raise IngestError(f"{path.name}:{lineno}: non-binary label cell in {cells}")
                examples.append(Example(cols[0], preprocess_tweet(cols[1]), [int(c) for c in cells], split))
    return Dataset("ait", labels, examples)


# ---------------------------------------------------------------- synthetic corpus


def load_synthetic(directory: str | Path) -> Dataset:
    """Corpus written by :func:`generate_synthetic` (GoEmotions row layout plus ``labels.txt``)."""
    directory = Path(directory)
    meta = json.loads((directory / "corpus.json").read_text(encoding="utf-8"))
    names = tuple(n for n in (directory / "labels.txt").read_text(encoding="utf-8").splitlines() if n)
    labels = LabelSpace(meta["mode"], names)
    examples = []
    for fname, split in (("train.tsv", "train"), ("dev.tsv", "validation"), ("test.tsv", "test")):
        rows = _load_tsv_split(directory / fname, split, labels.size)
        if labels.mode == "single":
            for ex in rows:
                hot = [i for i, v in enumerate(ex.label) if v]
                if len(hot) != 1:
                    raise IngestError(f"{fname}: single-label corpus row {ex.id} has {len(hot)} labels")
                ex.label = hot[0]
        examples.extend(rows)
    return Dataset(meta.get("name", "synthetic"), labels, examples)


_SYLLABLES = ("ba", "ke", "lo", "mi", "nu", "ra", "se", "ti", "vo", "zu", "da", "fe", "gi", "ho", "pu", "wa")


def _word(index: int, prefix: str) -> str:
    parts = []
    while True:
        parts.append(_SYLLABLES[index % len(_SYLLABLES)])
        index //= len(_SYLLABLES)
        if index == 0:
            break
    return prefix + "".join(parts)


def generate_synthetic(
    out_dir: str | Path,
    kind: str = "keyword",
    n_train: int = 200,
    n_dev: int = 50,
    n_test: int = 50,
    n_classes: int = 8,
    mode: str = "single",
    seq_len: int = 8,
    seed: int = 0,
) -> Path:
    """Write a small corpus plus a 3-channel lexicon (``lexicon.tsv``) to ``out_dir``.

    ``keyword``: each class owns three keywords mixed into shared filler words,
    so token identity determines the label.
    ``lexicon``: every token occurs exactly once in the whole corpus (so the
    vocabulary keeps none of them) and the label is the bin of the example's
    mean first-channel lexicon value; only the lexicon carries label signal.
    """
    if kind not in ("keyword", "lexicon"):
        raise InvalidConfigError(f"unknown synthetic kind {kind!r}")
    if kind == "lexicon" and mode != "single":
        raise InvalidConfigError("lexicon-determined corpora are single-label")
    if n_classes < 2 or seq_len < 2:
        raise InvalidConfigError("need n_classes >= 2 and seq_len >= 2")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = SplitMix64(seed)
    lexicon: dict[str, list[float]] = {}
    rows: dict[str, list[str]] = {"train.tsv": [], "dev.tsv": [], "test.tsv": []}
    counter = 0

    if kind == "keyword":
        keywords = [[_word(c * 3 + j, "k") for j in range(3)] for c in range(n_classes)]
        fillers = [_word(i, "f") for i in range(40)]
        for w in [w for group in keywords for w in group] + fillers:
            lexicon[w] = rng.stream("lex/" + w).random(3).tolist()

    for fname, n in (("train.tsv", n_train), ("dev.tsv", n_dev), ("test.tsv", n_test)):
        for i in range(n):
            r = rng.stream(f"{fname}/{i}")
            if kind == "keyword":
                if mode == "single":
                    active = [r.below(n_classes)]
                else:
                    active = sorted({r.below(n_classes) for _ in range(1 + r.below(2))})
                words = [fillers[r.below(len(fillers))] for _ in range(seq_len)]
                for c in active:
                    words[r.below(seq_len)] = keywords[c][r.below(3)]
                # keyword slots may collide; re-plant so every active class is present
                for c in active:
                    if not any(w in keywords[c] for w in words):
                        words[r.below(seq_len)] = keywords[c][0]
                active = [c for c in range(n_classes) if any(w in keywords[c] for w in words)]
            else:
                y = r.below(n_classes)
                active = [y]
                words = []
                for _ in range(seq_len):
                    w = _word(counter, "u")
                    counter += 1
                    centre = (y + 0.5) / n_classes
                    valence = centre + (r.random(1)[0] - 0.5) * 0.8 / n_classes
                    lexicon[w] = [valence, *r.random(2).tolist()]
                    words.append(w)
            rows[fname].append(f"{' '.join(words)}\t{','.join(map(str, active))}\t{fname[:-4]}-{i:05d}")

    for fname, lines in rows.items():
        (out / fname).write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "labels.txt").write_text("\n".join(f"class{c}" for c in range(n_classes)) + "\n", encoding="utf-8")
    meta = {"name": f"synthetic-{kind}", "kind": kind, "mode": mode, "seed": seed,
            "n_classes": n_classes, "sizes": [n_train, n_dev, n_test], "seq_len": seq_len}
    (out / "corpus.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_lexicon(out / "lexicon.tsv", lexicon, VAD_CHANNELS)
    return out


LOADERS = {"ed": load_ed, "goemotions": load_goemotions, "ait": load_ait, "synthetic": load_synthetic}


def load_dataset(name: str, path: str | Path) -> Dataset:
    try:
        loader = LOADERS[name]
    except KeyError:
        raise InvalidConfigError(f"unknown dataset {name!r}; expected one of {sorted(LOADERS)}") from None
    return loader(path)


# ---------------------------------------------------------------- encoding and batching


@dataclass
class Encoded:
    id: str
    tokens: list[str]
    ids: list[int]
    xe: np.ndarray
    channels: np.ndarray
    label: int | np.ndarray
    hc: np.ndarray | None = None


def tokens_of(example: Example, max_len: int) -> list[str]:
    return tokenize(example.text, is_conversation=example.is_conversation, max_len=max_len).tokens


def encode_examples(examples: Sequence[Example], vocab: Vocabulary, lexicon: Lexicon | None,
                    l_pad: int, max_len: int) -> list[Encoded]:
    out = []
    for ex in examples:
        toks = tokens_of(ex, max_len)
        if lexicon is not None:
            xe = featurize(toks, lexicon)
            channels = pad_channels(xe, l_pad, lexicon.default)
        else:
            xe = np.zeros((len(toks), 0))
            channels = np.zeros((0, l_pad))
        label = ex.label if isinstance(ex.label, int) else np.asarray(ex.label, dtype=np.float64)
        out.append(Encoded(ex.id, toks, vocab.encode(toks), xe, channels, label))
    return out


@dataclass
class Batch:
    ids: np.ndarray
    mask: np.ndarray
    xe: np.ndarray
    channels: np.ndarray
    labels: np.ndarray
    example_ids: list[str] = field(default_factory=list)
    hc: np.ndarray | None = None

    def __len__(self) -> int:
        return self.ids.shape[0]


def collate(items: Sequence[Encoded], pad_value: Sequence[float] = ()) -> Batch:
    """Pad every row with [PAD] to the longest sequence in this batch only.

    Lexicon rows past a sequence's end take ``pad_value`` (per channel), or 0 when it is empty.
    """
    B = len(items)
    L = max(len(it.ids) for it in items)
    l_e = items[0].xe.shape[1]
    ids = np.full((B, L), PAD_ID, dtype=np.int64)
    mask = np.zeros((B, L))
    xe = np.empty((B, L, l_e))
    xe[:] = np.asarray(pad_value, dtype=np.float64) if len(pad_value) else 0.0
    hc = None
    if items[0].hc is not None:
        hc = np.zeros((B, L, items[0].hc.shape[1]))
    for b, it in enumerate(items):
        n = len(it.ids)
        ids[b, :n] = it.ids
        mask[b, :n] = 1.0
        xe[b, :n] = it.xe
        if hc is not None:
            hc[b, :n] = it.hc
    channels = np.stack([it.channels for it in items])
    labels = np.stack([np.asarray(it.label) for it in items])
    return Batch(ids, mask, xe, channels, labels, [it.id for it in items], hc)


def make_batches(items: Sequence[Encoded], batch_size: int, seed: int = 0, shuffle: bool = False,
                 epoch: int = 0, pad_value: Sequence[float] = ()) -> Iterator[Batch]:
    """Fixed-order batches, or a seeded per-epoch shuffle when ``shuffle`` is set."""
    if batch_size < 1:
        raise InvalidConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = list(range(len(items)))
    if shuffle:
        order = SplitMix64(seed).stream(f"shuffle/{epoch}").permutation(len(items))
    for start in range(0, len(order), batch_size):
        yield collate([items[i] for i in order[start:start + batch_size]], pad_value)
