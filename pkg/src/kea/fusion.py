"""Attention over contextual and lexicon keys, the two knowledge-fusion baselines, and the classifier head.

All functions accept optional leading batch extents; sequence axis is -2.
``mask`` arrays mark real tokens with 1 and padding with 0.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .encoder import EncoderConfig, encode_ids, init_encoder_params
from .errors import FormatError, InvalidConfigError, InvalidShapeError
from .numcore import SplitMix64, Tensor

VARIANTS = ("kea_sentence", "kea_word", "k_concat", "k_bilstm", "encoder_only")
MODES = ("single", "multi")
MULTI_THRESHOLD = 0.5


# ---------------------------------------------------------------- sentence level


def project_channels(padded_channels, W: Tensor, b: Tensor) -> Tensor:
    """Shared affine map L_pad -> l_c applied to each lexicon channel; row c of H_e is channel c."""
    padded_channels = nc.as_tensor(padded_channels)
    if padded_channels.shape[-1] != W.shape[0]:
        raise InvalidShapeError(
            f"channel length {padded_channels.shape[-1]} does not match projection input {W.shape[0]}")
    return nc.affine(padded_channels, W, b)


def attend(K: Tensor, h_0: Tensor, mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Unscaled dot-product attention of query ``h_0`` over key rows ``K``.

    Returns ``(h_l, s)`` with ``s = softmax(K h_0)`` and ``h_l = s^T K``.
    """
    if K.shape[-1] != h_0.shape[-1]:
        raise InvalidShapeError(f"key width {K.shape[-1]} differs from query width {h_0.shape[-1]}")
    lead = K.shape[:-2]
    m, d = K.shape[-2:]
    scores = nc.matmul(K, h_0.reshape(*lead, d, 1)).reshape(*lead, m)
    s = nc.softmax(scores, axis=-1, mask=mask)
    h_l = nc.matmul(s.reshape(*lead, 1, m), K).reshape(*lead, d)
    return h_l, s


def sentence_keys(H_c: Tensor, H_e: Tensor) -> Tensor:
    if H_c.shape[-1] != H_e.shape[-1]:
        raise InvalidShapeError(f"H_c width {H_c.shape[-1]} differs from H_e width {H_e.shape[-1]}")
    return nc.concat([H_c, H_e], axis=-2)


def kea_sentence(H_c: Tensor, H_e: Tensor, mask: np.ndarray | None = None,
                 return_weights: bool = False):
    """Attend ``h_0`` (row 0 of H_c) over K = concat(H_c, H_e)."""
    H_c, H_e = nc.as_tensor(H_c), nc.as_tensor(H_e)
    K = sentence_keys(H_c, H_e)
    key_mask = None
    if mask is not None:
        mask = np.asarray(mask)
        key_mask = np.concatenate([mask, np.ones(mask.shape[:-1] + (H_e.shape[-2],))], axis=-1)
    h_l, s = attend(K, H_c[..., 0, :], key_mask)
    return (h_l, s) if return_weights else h_l


# ---------------------------------------------------------------- word level


def init_lstm_params(rng: SplitMix64, d_in: int, hidden: int, prefix: str) -> dict[str, Tensor]:
    p = {}
    for direction in ("f", "b"):
        k = f"{prefix}.{direction}."
        p[k + "Wx"] = nc.glorot(rng, d_in, 4 * hidden)
        p[k + "Wh"] = nc.glorot(rng, hidden, 4 * hidden)
        p[k + "b"] = nc.zeros(4 * hidden)
    return p


def _lstm_direction(xp: Tensor, Wh: Tensor, mask: np.ndarray | None, reverse: bool) -> list[Tensor]:
    *lead, n, four_l = xp.shape
    l = four_l // 4
    h = Tensor(np.zeros((*lead, l)))
    c = Tensor(np.zeros((*lead, l)))
    outputs: list[Tensor] = [None] * n
    steps = range(n - 1, -1, -1) if reverse else range(n)
    for t in steps:
        gates = xp[..., t, :] + nc.matmul(h.reshape(*lead, 1, l), Wh).reshape(*lead, four_l)
        i = nc.sigmoid(gates[..., :l])
        f = nc.sigmoid(gates[..., l:2 * l])
        g = nc.tanh(gates[..., 2 * l:3 * l])
        o = nc.sigmoid(gates[..., 3 * l:])
        c_new = f * c + i * g
        h_new = o * nc.tanh(c_new)
        if mask is not None:
            m = np.asarray(mask, dtype=np.float64)[..., t:t + 1]
            if not np.all(m == 1.0):
                # padded steps carry the previous state through unchanged
                c_new = c_new * m + c * (1.0 - m)
                h_new = h_new * m + h * (1.0 - m)
        h, c = h_new, c_new
        outputs[t] = h
    return outputs


def bilstm(x: Tensor, params: dict[str, Tensor], prefix: str, mask: np.ndarray | None = None) -> Tensor:
    """Single-layer bidirectional LSTM; row i = [forward state i ; backward state i]."""
    x = nc.as_tensor(x)
    if x.shape[-2] < 1:
        raise InvalidShapeError("BiLSTM input has no time steps")
    halves = []
    for direction, reverse in (("f", False), ("b", True)):
        k = f"{prefix}.{direction}."
        xp = nc.affine(x, params[k + "Wx"], params[k + "b"])
        outs = _lstm_direction(xp, params[k + "Wh"], mask, reverse)
        l = outs[0].shape[-1]
        halves.append(nc.concat([h.reshape(*h.shape[:-1], 1, l) for h in outs], axis=-2))
    return nc.concat(halves, axis=-1)


def bilstm_fuse(H_c: Tensor, X_e, params: dict[str, Tensor], mask: np.ndarray | None = None,
                prefix: str = "lstm") -> Tensor:
    """Concatenate [h_i ; x_i^e] per position and run the BiLSTM; output width 2l must equal l_c."""
    H_c, X_e = nc.as_tensor(H_c), nc.as_tensor(X_e)
    if H_c.shape[:-1] != X_e.shape[:-1]:
        raise InvalidShapeError(f"H_c {H_c.shape} and X_e {X_e.shape} disagree on positions")
    hidden = params[f"{prefix}.f.Wh"].shape[0]
    if 2 * hidden != H_c.shape[-1]:
        raise InvalidConfigError(f"BiLSTM width 2l={2 * hidden} must equal l_c={H_c.shape[-1]}")
    return bilstm(nc.concat([H_c, X_e], axis=-1), params, prefix, mask)


def kea_word(H_ec: Tensor, h_0: Tensor, mask: np.ndarray | None = None, return_weights: bool = False):
    """Attend ``h_0`` over the BiLSTM states H_ec (which serve as keys)."""
    H_ec, h_0 = nc.as_tensor(H_ec), nc.as_tensor(h_0)
    if H_ec.shape[-1] != h_0.shape[-1]:
        raise InvalidShapeError(f"H_ec width {H_ec.shape[-1]} differs from l_c={h_0.shape[-1]}")
    h_l, s = attend(H_ec, h_0, mask)
    return (h_l, s) if return_weights else h_l


# ---------------------------------------------------------------- head and baselines


def init_head_params(rng: SplitMix64, d_in: int, d_hidden: int, n_classes: int) -> dict[str, Tensor]:
    return {
        "head.W1": nc.glorot(rng, d_in, d_hidden),
        "head.b1": nc.zeros(d_hidden),
        "head.W2": nc.glorot(rng, d_hidden, n_classes),
        "head.b2": nc.zeros(n_classes),
    }


def classify(h_l, head: dict[str, Tensor]) -> Tensor:
    """Two dense layers with tanh between; returns raw logits."""
    hidden = nc.tanh(nc.affine(h_l, head["head.W1"], head["head.b1"]))
    return nc.affine(hidden, head["head.W2"], head["head.b2"])


def probabilities(logits: np.ndarray, mode: str) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if mode == "single":
        z = np.exp(logits - logits.max(axis=-1, keepdims=True))
        return z / z.sum(axis=-1, keepdims=True)
    return nc._sigmoid(logits)


def concat_baseline(h_0: Tensor, H_e: Tensor, head: dict[str, Tensor]) -> Tensor:
    """Head over [h_0 ; row-major flatten(H_e)]."""
    h_0, H_e = nc.as_tensor(h_0), nc.as_tensor(H_e)
    if H_e.shape[-1] != h_0.shape[-1] or H_e.shape[:-2] != h_0.shape[:-1]:
        raise InvalidShapeError(f"h_0 {h_0.shape} and H_e {H_e.shape} are incompatible")
    flat = H_e.reshape(*H_e.shape[:-2], H_e.shape[-2] * H_e.shape[-1])
    x = nc.concat([h_0, flat], axis=-1)
    if x.shape[-1] != head["head.W1"].shape[0]:
        raise InvalidShapeError(f"head expects width {head['head.W1'].shape[0]}, got {x.shape[-1]}")
    return classify(x, head)


def bilstm_summary(H_ec: Tensor) -> Tensor:
    """[final forward state ; final backward state].

    Padded steps carry state, so the last row's forward half is the forward
    final state and row 0's backward half is the backward final state.
    """
    H_ec = nc.as_tensor(H_ec)
    if H_ec.ndim < 2 or H_ec.shape[-2] < 1:
        raise InvalidShapeError(f"BiLSTM summary needs at least one step, got {H_ec.shape}")
    l = H_ec.shape[-1] // 2
    return nc.concat([H_ec[..., -1, :l], H_ec[..., 0, l:]], axis=-1)


def bilstm_baseline(H_ec: Tensor, head: dict[str, Tensor]) -> Tensor:
    return classify(bilstm_summary(H_ec), head)


def loss_fn(logits: Tensor, labels, mode: str) -> Tensor:
    if mode == "single":
        return nc.cross_entropy(logits, labels)
    return nc.sigmoid_bce(logits, labels)


# ---------------------------------------------------------------- model


@dataclass
class ModelConfig:
    variant: str = "kea_sentence"
    n_classes: int = 2
    mode: str = "single"
    l_e: int = 3
    l_pad: int = 64
    pad_value: list[float] = field(default_factory=lambda: [0.5, 0.5, 0.5])
    source: str = "toy"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    d_hidden: int | None = None
    lstm_hidden: int | None = None

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)

    @property
    def l_c(self) -> int:
        return self.encoder.l_c

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise InvalidConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.mode not in MODES:
            raise InvalidConfigError(f"unknown label mode {self.mode!r}")
        if self.source not in ("toy", "precomputed"):
            raise InvalidConfigError(f"unknown encoder source {self.source!r}")
        if self.n_classes < 1 or self.l_pad < 1 or self.l_e < 0:
            raise InvalidConfigError("n_classes and l_pad must be positive, l_e non-negative")
        if len(self.pad_value) != self.l_e:
            raise InvalidConfigError(f"pad_value needs {self.l_e} entries, has {len(self.pad_value)}")
        if self.source == "toy":
            self.encoder.validate()
        if self.variant in ("kea_word", "k_bilstm"):
            hidden = self.lstm_hidden if self.lstm_hidden is not None else self.l_c // 2
            if 2 * hidden != self.l_c:
                raise InvalidConfigError(f"word-level keys need 2l = l_c; got l={hidden}, l_c={self.l_c}")

    def to_dict(self) -> dict:
        return asdict(self)


class FusionModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        rng = SplitMix64(seed)
        cfg = config
        p: dict[str, Tensor] = {}
        if cfg.source == "toy":
            p.update(init_encoder_params(cfg.encoder, rng.stream("encoder")))
        if cfg.variant in ("kea_sentence", "k_concat"):
            p["proj.W"] = nc.glorot(rng.stream("proj"), cfg.l_pad, cfg.l_c)
            p["proj.b"] = nc.zeros(cfg.l_c)
        if cfg.variant in ("kea_word", "k_bilstm"):
            hidden = cfg.lstm_hidden or cfg.l_c // 2
            p.update(init_lstm_params(rng.stream("lstm"), cfg.l_c + cfg.l_e, hidden, "lstm"))
        d_in = cfg.l_c + cfg.l_e * cfg.l_c if cfg.variant == "k_concat" else cfg.l_c
        p.update(init_head_params(rng.stream("head"), d_in, cfg.d_hidden or cfg.l_c, cfg.n_classes))
        for name, t in p.items():
            t.name = name
        self.params = p

    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def contextual(self, batch) -> Tensor:
        if self.config.source == "toy":
            return encode_ids(batch.ids, self.params, self.config.encoder, mask=batch.mask)
        if batch.hc is None:
            raise InvalidConfigError("precomputed source selected but batch carries no H_c")
        if batch.hc.shape[-1] != self.config.l_c:
            raise InvalidShapeError(f"cached H_c width {batch.hc.shape[-1]} differs from l_c={self.config.l_c}")
        return Tensor(batch.hc)

    def forward(self, batch, weights_out: dict | None = None) -> Tensor:
        """Logits B x C for a collated batch (see :class:`kea.data.Batch`)."""
        cfg = self.config
        p = self.params
        H_c = self.contextual(batch)
        h_0 = H_c[..., 0, :]
        if cfg.variant == "encoder_only":
            return classify(h_0, p)
        if cfg.variant in ("kea_sentence", "k_concat"):
            H_e = project_channels(batch.channels, p["proj.W"], p["proj.b"])
            if cfg.variant == "k_concat":
                return concat_baseline(h_0, H_e, p)
            h_l, s = kea_sentence(H_c, H_e, batch.mask, return_weights=True)
        else:
            H_ec = bilstm_fuse(H_c, batch.xe, p, batch.mask)
            if cfg.variant == "k_bilstm":
                return bilstm_baseline(H_ec, p)
            h_l, s = kea_word(H_ec, h_0, batch.mask, return_weights=True)
        if weights_out is not None:
            weights_out["kea"] = s.data
        return classify(h_l, p)

    def loss(self, logits: Tensor, labels) -> Tensor:
        return loss_fn(logits, labels, self.config.mode)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: self.params[k].data.copy() for k in sorted(self.params)}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            missing = sorted(set(self.params) - set(state))
            extra = sorted(set(state) - set(self.params))
            raise InvalidConfigError(f"parameter names disagree; missing {missing}, unexpected {extra}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise InvalidShapeError(f"{k}: stored {v.shape}, model {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)


# ---------------------------------------------------------------- checkpoint file
#
# magic "KEAC" | u32 version | u32 meta length | meta JSON (UTF-8, sorted keys)
# | u32 tensor count | per tensor: u32 name length, name (UTF-8), u32 ndim,
#   ndim x u32 extents, float64 LE payload (row-major). All integers little-endian.

CKPT_MAGIC = b"KEAC"
CKPT_VERSION = 1


def checkpoint_bytes(meta: dict, tensors: dict[str, np.ndarray]) -> bytes:
    meta_raw = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(meta_raw)), meta_raw,
             struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)) + raw_name)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def parse_checkpoint(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"checkpoint truncated: need {n} bytes", pos)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4) != CKPT_MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    version, meta_len = struct.unpack("<II", take(8))
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    at = pos
    try:
        meta = json.loads(take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint metadata: {exc}", at) from exc
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape)) if shape else 1
        tensors[name] = np.frombuffer(take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes in checkpoint", pos)
    return meta, tensors


def save_checkpoint(path: str | Path, model: FusionModel, meta: dict | None = None) -> None:
    meta = dict(meta or {})
    meta["model"] = model.config.to_dict()
    Path(path).write_bytes(checkpoint_bytes(meta, model.state_dict()))


def load_checkpoint(path: str | Path) -> tuple[FusionModel, dict]:
    meta, tensors = parse_checkpoint(Path(path).read_bytes())
    model = FusionModel(ModelConfig(**meta["model"]))
    model.load_state_dict(tensors)
    return model, meta
