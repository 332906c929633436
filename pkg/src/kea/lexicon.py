"""Emotion lexicons and the per-token emotional feature matrix."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyLexiconError, InvalidConfigError, ParseError

SPECIAL_TOKENS = frozenset({"[PAD]", "[CLS]", "[SEP]", "[UNK]"})

VAD_CHANNELS = ("valence", "arousal", "dominance")
VAD_DEFAULT = 0.5
EIL_CHANNELS = ("anger", "anticipation", "disgust", "fear", "joy", "sadness", "surprise", "trust")
EIL_DEFAULT = 0.0


@dataclass(frozen=True)
class Lexicon:
    name: str
    channel_names: tuple[str, ...]
    entries: dict[str, tuple[float, ...]] = field(repr=False)
    default: tuple[float, ...]

    def __post_init__(self):
        n = len(self.channel_names)
        if len(self.default) != n:
            raise InvalidConfigError(f"default has {len(self.default)} values for {n} channels")

    @property
    def dims(self) -> int:
        return len(self.channel_names)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.entries

    def lookup(self, token: str) -> tuple[float, ...]:
        if token in SPECIAL_TOKENS:
            return self.default
        return self.entries.get(token.lower(), self.default)


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_lexicon(
    path: str | Path,
    l_e: int,
    default: Sequence[float] | float,
    name: str | None = None,
    channel_names: Sequence[str] | None = None,
) -> Lexicon:
    """Read a TAB-separated ``word v1 .. v_{l_e}`` file.

    A first line whose second column is not numeric is taken as a header and
    supplies channel names unless ``channel_names`` is given. Later rows for
    the same (lowercased) word overwrite earlier ones.
    """
    path = Path(path)
    if l_e < 1:
        raise InvalidConfigError(f"l_e must be positive, got {l_e}")
    if isinstance(default, (int, float)):
        default = (float(default),) * l_e
    default = tuple(float(x) for x in default)
    if len(default) != l_e:
        raise InvalidConfigError(f"default has {len(default)} values, expected {l_e}")

    header: list[str] | None = None
    entries: dict[str, tuple[float, ...]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if lineno == 1 and len(cols) > 1 and not _is_number(cols[1]):
                header = cols
                continue
            if len(cols) != l_e + 1:
                raise ParseError(f"expected {l_e + 1} tab-separated columns, found {len(cols)}", lineno)
            try:
                values = tuple(float(c) for c in cols[1:])
            except ValueError as exc:
                raise ParseError(f"unparsable number in {cols[1:]!r}", lineno) from exc
            if not all(math.isfinite(v) for v in values):
                raise ParseError(f"non-finite value in {cols[1:]!r}", lineno)
            entries[cols[0].strip().lower()] = values
    if not entries:
        raise EmptyLexiconError(f"no entries in lexicon file {path}")

    if channel_names is None:
        if header is not None and len(header) == l_e + 1:
            channel_names = [h.strip().lower() for h in header[1:]]
        else:
            channel_names = [f"ch{i}" for i in range(l_e)]
    return Lexicon(
        name=name or path.stem,
        channel_names=tuple(channel_names),
        entries=entries,
        default=default,
    )


def load_vad(path: str | Path) -> Lexicon:
    return load_lexicon(path, 3, VAD_DEFAULT, name="vad", channel_names=VAD_CHANNELS)


def load_eil(path: str | Path) -> Lexicon:
    """Load an EIL lexicon already converted to wide format (see :func:`eil_long_to_wide`)."""
    return load_lexicon(path, 8, EIL_DEFAULT, name="eil", channel_names=EIL_CHANNELS)


def featurize(tokens: Sequence[str], lex: Lexicon) -> np.ndarray:
    """N x l_e matrix whose row i is the lexicon vector of token i (or the default)."""
    if not tokens:
        return np.zeros((0, lex.dims))
    return np.array([lex.lookup(t) for t in tokens], dtype=np.float64)


def pad_channels(X_e: np.ndarray, L_pad: int, pad_value: float | Sequence[float]) -> np.ndarray:
    """Transpose to l_e x N, then pad or truncate every channel to ``L_pad``.

    ``pad_value`` may be one scalar or one value per channel.
    """
    if L_pad < 1:
        raise InvalidConfigError(f"L_pad must be positive, got {L_pad}")
    X_e = np.asarray(X_e, dtype=np.float64)
    n, l_e = X_e.shape
    out = np.empty((l_e, L_pad))
    out[:] = np.asarray(pad_value, dtype=np.float64).reshape(-1, 1) if np.ndim(pad_value) else pad_value
    keep = min(n, L_pad)
    out[:, :keep] = X_e[:keep].T
    return out


# ---------------------------------------------------------------- EIL conversion


def read_eil_long(path: str | Path) -> list[tuple[str, str, float]]:
    """Rows ``(word, emotion, score)`` from the published long layout; header optional."""
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ParseError(f"expected 3 columns (word, emotion, score), found {len(cols)}", lineno)
            if lineno == 1 and not _is_number(cols[2]):
                continue
            word, emotion = cols[0].strip().lower(), cols[1].strip().lower()
            if emotion not in EIL_CHANNELS:
                raise ParseError(f"unknown emotion {cols[1]!r}", lineno)
            try:
                score = float(cols[2])
            except ValueError as exc:
                raise ParseError(f"unparsable score {cols[2]!r}", lineno) from exc
            rows.append((word, emotion, score))
    return rows


def eil_long_to_wide(rows: Iterable[tuple[str, str, float]]) -> dict[str, list[float]]:
    """Pivot long rows to word -> 8 scores in the fixed emotion order; absent cells are 0."""
    index = {e: i for i, e in enumerate(EIL_CHANNELS)}
    wide: dict[str, list[float]] = {}
    for word, emotion, score in rows:
        wide.setdefault(word, [EIL_DEFAULT] * len(EIL_CHANNELS))[index[emotion]] = float(score)
    return wide


def eil_wide_to_long(wide: dict[str, Sequence[float]]) -> list[tuple[str, str, float]]:
    """Inverse pivot; zero cells are dropped because the long layout lists associations only."""
    rows = []
    for word in sorted(wide):
        for emotion, score in zip(EIL_CHANNELS, wide[word]):
            if score != EIL_DEFAULT:
                rows.append((word, emotion, float(score)))
    return rows


def write_lexicon(path: str | Path, entries: dict[str, Sequence[float]],
                  channel_names: Sequence[str] | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if channel_names is not None:
            fh.write("\t".join(["word", *channel_names]) + "\n")
        for word in sorted(entries):
            fh.write("\t".join([word, *(repr(float(v)) for v in entries[word])]) + "\n")


def convert_eil(long_path: str | Path, wide_path: str | Path) -> int:
    """One-time conversion of the long EIL file to the wide lexicon layout; returns word count."""
    wide = eil_long_to_wide(read_eil_long(long_path))
    write_lexicon(wide_path, wide, EIL_CHANNELS)
    return len(wide)
