import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kea import numcore as nc
from kea.encoder import (CLS, SEP, UNK_ID, EncoderConfig, Vocabulary, encode, encode_ids,
                         init_encoder_params, keae_bytes, load_precomputed, parse_keae, tokenize,
                         write_precomputed)
from kea.errors import FormatError, InvalidConfigError, InvalidIdError
from kea.numcore import SplitMix64

from helpers import fd_check


def test_tokenize_examples():
    assert tokenize("I am happy!").tokens == [CLS, "i", "am", "happy", "!"]
    assert tokenize(["hi there", "hello"], is_conversation=True).tokens == [CLS, "hi", "there", SEP, "hello"]
    assert tokenize("").tokens == [CLS]
    assert tokenize(["", "  ", "ok"], is_conversation=True).tokens == [CLS, "ok"]


def test_tokenize_truncates_and_keeps_placeholders():
    seq = tokenize("a b c d e f", max_len=4)
    assert seq.tokens == [CLS, "a", "b", "c"]
    assert tokenize("hey <user> see <url>").tokens == [CLS, "hey", "<user>", "see", "<url>"]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.text(max_size=30), min_size=1, max_size=4), st.integers(1, 20))
def test_tokenize_invariants(utts, max_len):
    seq = tokenize(utts, is_conversation=True, max_len=max_len)
    assert seq.tokens[0] == CLS
    assert len(seq) <= max_len
    assert seq.tokens.count(CLS) == 1
    assert all(t == t.lower() for t in seq.tokens if t not in (CLS, SEP))


def test_vocabulary_build():
    seqs = [["b", "a", "a"], ["c", "b", "[CLS]"]]
    vocab = Vocabulary.build(seqs, min_freq=2)
    assert vocab.itos == ["[PAD]", "[CLS]", "[SEP]", "[UNK]", "a", "b"]
    assert vocab["c"] == UNK_ID == 3
    assert vocab.encode(["[CLS]", "b", "zz"]) == [1, 5, 3]
    assert Vocabulary(vocab.to_list()).itos == vocab.itos


def small_cfg(**kw):
    base = dict(l_c=8, layers=1, heads=2, max_len=10, vocab_size=12)
    base.update(kw)
    return EncoderConfig(**base)


def test_encoder_config_validation():
    with pytest.raises(InvalidConfigError):
        small_cfg(l_c=6, heads=4).validate()
    with pytest.raises(InvalidConfigError):
        small_cfg(layers=0).validate()


def test_encode_shape_and_attention_rows():
    cfg = EncoderConfig(vocab_size=20)
    params = init_encoder_params(cfg, SplitMix64(0))
    seq = tokenize("one two three four five six", vocab=Vocabulary(["one", "two", "three"]))
    assert len(seq) == 7
    assert encode(seq, params, cfg).H_c.shape == (7, 64)
    weights = []
    encode_ids(np.array(seq.ids), params, cfg, weights_out=weights)
    assert len(weights) == cfg.layers
    for w in weights:
        assert w.shape == (cfg.heads, 7, 7)
        assert np.abs(w.sum(-1) - 1).max() <= 1e-9


def test_positions_matter_and_encoding_is_deterministic():
    cfg = small_cfg()
    params = init_encoder_params(cfg, SplitMix64(3))
    ids = np.array([1, 4, 5, 6, 7])
    swapped = np.array([1, 6, 5, 4, 7])
    a = encode_ids(ids, params, cfg).data
    np.testing.assert_array_equal(a, encode_ids(ids, params, cfg).data)
    assert not np.allclose(a, encode_ids(swapped, params, cfg).data)


def test_invalid_ids_rejected():
    cfg = small_cfg()
    params = init_encoder_params(cfg, SplitMix64(0))
    with pytest.raises(InvalidIdError):
        encode_ids(np.array([1, 12]), params, cfg)
    with pytest.raises(InvalidIdError):
        encode_ids(np.ones(11, dtype=int), params, cfg)


def test_padding_does_not_change_real_rows():
    cfg = small_cfg()
    params = init_encoder_params(cfg, SplitMix64(4))
    alone = encode_ids(np.array([[1, 4, 5]]), params, cfg, mask=np.ones((1, 3))).data
    padded = encode_ids(np.array([[1, 4, 5, 0, 0]]), params, cfg, mask=np.array([[1, 1, 1, 0, 0.0]])).data
    np.testing.assert_allclose(padded[0, :3], alone[0], rtol=0, atol=1e-12)


def test_encoder_gradients_flow_to_every_parameter():
    cfg = small_cfg(l_c=4, heads=2, max_len=6, vocab_size=8)
    params = init_encoder_params(cfg, SplitMix64(5))
    ids = np.array([[1, 4, 5, 6], [1, 7, 0, 0]])
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0.0]])
    rng = np.random.default_rng(0)
    w = rng.normal(size=(2, 4, 4))
    fn = lambda: nc.sum_(encode_ids(ids, params, cfg, mask=mask) * w)
    tensors = [params[k] for k in sorted(params)]
    assert fd_check(fn, tensors, rng, coords=6) == []
    assert all(np.any(t.grad != 0) for k, t in params.items() if k != "enc.tok")


# ---------------------------------------------------------------- KEAE


def test_keae_round_trip(tmp_path):
    H = np.random.default_rng(0).normal(size=(5, 4)).astype(np.float32)
    p = tmp_path / "x.keae"
    assert write_precomputed(p, H) == 16 + 4 * 5 * 4
    enc = load_precomputed(p)
    assert not enc.trainable
    np.testing.assert_array_equal(enc.H_c.data, H.astype(np.float64))
    assert keae_bytes(enc.H_c.data) == p.read_bytes()


def test_keae_single_row_echo(tmp_path):
    p = tmp_path / "one.keae"
    write_precomputed(p, np.array([[1.0, 2.0, 3.0, 4.0]]))
    assert p.read_bytes()[:16] == b"KEAE" + struct.pack("<III", 1, 1, 4)
    assert load_precomputed(p).h_0.data.tolist() == [1, 2, 3, 4]


@pytest.mark.parametrize("mutate, offset", [
    (lambda b: b"KEAX" + b[4:], 0),
    (lambda b: b[:4] + struct.pack("<I", 2) + b[8:], 4),
    (lambda b: b[:8] + struct.pack("<I", 0) + b[12:], 8),
    (lambda b: b[:12] + struct.pack("<I", 0) + b[16:], 12),
    (lambda b: b[:-3], None),
    (lambda b: b[:10], None),
    (lambda b: b + b"\0", None),
])
def test_keae_corruption(mutate, offset):
    good = keae_bytes(np.ones((2, 3)))
    with pytest.raises(FormatError) as info:
        parse_keae(mutate(good))
    if offset is not None:
        assert info.value.offset == offset
