import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from kea.errors import EmptyLexiconError, InvalidConfigError, ParseError
from kea.lexicon import (EIL_CHANNELS, convert_eil, eil_long_to_wide, eil_wide_to_long, featurize,
                         load_eil, load_lexicon, load_vad, pad_channels, read_eil_long)


def write(tmp_path, text, name="lex.txt"):
    p = tmp_path / name
    p.write_bytes(text.encode("utf-8"))
    return p


def test_single_row_is_echoed(tmp_path):
    lex = load_lexicon(write(tmp_path, "calm\t0.82\t0.17\t0.63\n"), 3, 0.5)
    assert lex.entries["calm"] == (0.82, 0.17, 0.63)
    assert len(lex) == 1


def test_duplicate_rows_last_wins(tmp_path):
    lex = load_lexicon(write(tmp_path, "Calm\t0.1\t0.1\t0.1\ncalm\t0.9\t0.8\t0.7\n"), 3, 0.5)
    assert lex.lookup("CALM") == (0.9, 0.8, 0.7)


def test_header_and_crlf(tmp_path):
    lex = load_lexicon(write(tmp_path, "Word\tV\tA\tD\r\ncalm\t0.82\t0.17\t0.63\r\n"), 3, 0.5)
    assert lex.channel_names == ("v", "a", "d")
    assert "calm" in lex


@pytest.mark.parametrize("body, line", [
    ("calm\t0.1\t0.2\t0.3\nbad\t0.1\t0.2\n", 2),
    ("calm\t0.1\t0.2\t0.3\nok\t0.1\t0.2\t0.3\nbad\t0.1\tx\t0.3\n", 3),
    ("w\tv\ta\td\nbad\t0.1\t0.2\t0.3\t0.4\n", 2),
])
def test_malformed_rows_report_line(tmp_path, body, line):
    with pytest.raises(ParseError) as info:
        load_lexicon(write(tmp_path, body), 3, 0.5)
    assert info.value.line == line


def test_empty_file_rejected(tmp_path):
    with pytest.raises(EmptyLexiconError):
        load_lexicon(write(tmp_path, ""), 3, 0.5)
    with pytest.raises(EmptyLexiconError):
        load_lexicon(write(tmp_path, "word\tv\ta\td\n"), 3, 0.5)


def test_vad_oov_and_special_tokens(fixtures):
    lex = load_vad(fixtures / "lexicons" / "vad_mini.txt")
    X = featurize(["[CLS]", "zyzzyva", "[SEP]", "[PAD]"], lex)
    np.testing.assert_array_equal(X, np.full((4, 3), 0.5))


def test_love_row_matches_file(fixtures):
    path = fixtures / "lexicons" / "vad_mini.txt"
    row = next(line for line in path.read_text().splitlines() if line.startswith("love\t"))
    expected = [float(v) for v in row.split("\t")[1:]]
    assert featurize(["love"], load_vad(path))[0].tolist() == expected


def test_vad_values_within_unit_interval(fixtures):
    lex = load_vad(fixtures / "lexicons" / "vad_mini.txt")
    values = np.array(list(lex.entries.values()))
    assert values.min() >= 0 and values.max() <= 1


@pytest.mark.skipif(not os.environ.get("KEA_VAD_PATH"), reason="full VAD lexicon not available")
def test_full_vad_file_has_about_twenty_thousand_words():
    lex = load_vad(Path(os.environ["KEA_VAD_PATH"]))
    assert 19_000 <= len(lex) <= 21_000


def test_featurize_empty_and_pure(fixtures):
    lex = load_vad(fixtures / "lexicons" / "vad_mini.txt")
    assert featurize([], lex).shape == (0, 3)
    toks = ["i", "love", "spider", "!"]
    np.testing.assert_array_equal(featurize(toks, lex), featurize(toks, lex))


def test_featurize_values_come_from_file_or_default(fixtures):
    lex = load_vad(fixtures / "lexicons" / "vad_mini.txt")
    allowed = {v for row in lex.entries.values() for v in row} | {0.5}
    X = featurize(["calm", "happy", "nope", "sad", "love"], lex)
    assert set(X.ravel().tolist()) <= allowed


def test_pad_channels_rules():
    X = np.array([[0.1], [0.9]])
    assert pad_channels(X, 4, 0.5).tolist() == [[0.1, 0.9, 0.5, 0.5]]
    X = np.arange(12.0).reshape(6, 2)
    np.testing.assert_array_equal(pad_channels(X, 4, 0.5), X[:4].T)
    np.testing.assert_array_equal(pad_channels(X, 6, 0.5), X.T)
    assert pad_channels(np.zeros((1, 2)), 3, [0.5, 0.0]).tolist() == [[0, 0.5, 0.5], [0, 0, 0]]
    with pytest.raises(InvalidConfigError):
        pad_channels(X, 0, 0.5)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10).flatmap(
    lambda n: hnp.arrays(np.float64, (n, 3), elements=st.floats(0, 1))), st.integers(0, 6))
def test_pad_then_unpad_recovers(X, extra):
    L = max(1, X.shape[0] + extra)
    padded = pad_channels(X, L, 0.5)
    np.testing.assert_array_equal(padded[:, :X.shape[0]].T, X)
    assert np.all(padded[:, X.shape[0]:] == 0.5)


def test_eil_round_trip_is_lossless(fixtures, tmp_path):
    long_path = fixtures / "lexicons" / "eil_long.txt"
    rows = read_eil_long(long_path)
    wide = eil_long_to_wide(rows)
    assert sorted(eil_wide_to_long(wide)) == sorted(rows)
    out = tmp_path / "eil_wide.txt"
    assert convert_eil(long_path, out) == len(wide)
    lex = load_eil(out)
    assert lex.channel_names == EIL_CHANNELS
    rebuilt = eil_wide_to_long({w: list(v) for w, v in lex.entries.items()})
    assert sorted(rebuilt) == sorted(rows)
    assert lex.lookup("love") == (0, 0, 0, 0, 0.828, 0, 0, 0.414)
    assert lex.lookup("unknown") == (0.0,) * 8


def test_eil_unknown_emotion_rejected(tmp_path):
    with pytest.raises(ParseError) as info:
        read_eil_long(write(tmp_path, "love\tjoy\t0.5\nhope\toptimism\t0.1\n"))
    assert info.value.line == 2
