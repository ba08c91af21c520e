"""Attention encoder-decoder over the autodiff graph.

Single-layer LSTM encoder and decoder. The decoder starts from the
encoder's final (h, c) state, attends over all encoder hidden states
with an additive score v . tanh(W_q h_dec + W_k h_enc) (a multiplicative
variant is available behind a config switch), and concatenates the
attention context with the cell output before the head projections.
There is no input feeding: the decoder input at each step is just the
embedding of the previous token.

Sequences are processed as batches of equal source length laid out
time-major, shape (L, B). A plain python list of ints is treated as a
batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from collections import OrderedDict

import numpy as np

from . import autodiff as ad
from .corpus import BOS_ID
from .objectives import RegularizerConfig

MODES = ("baseline", "self-train", "dual-train")
ATTENTION_KINDS = ("additive", "multiplicative")
INIT_RANGE = 0.08

_MODE_ALIASES = {
    "baseline": "baseline",
    "self": "self-train",
    "selftrain": "self-train",
    "self-train": "self-train",
    "self_train": "self-train",
    "dual": "dual-train",
    "dualtrain": "dual-train",
    "dual-train": "dual-train",
    "dual_train": "dual-train",
}


def canonical_mode(name):
    key = str(name).strip().lower()
    if key not in _MODE_ALIASES:
        raise ValueError(f"unknown training mode {name!r}, expected one of {MODES}")
    return _MODE_ALIASES[key]


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embedding_size: int = 400
    hidden_size: int = 500
    mode: str = "baseline"
    seed: int = 0
    attention: str = "additive"
    dtype: str = "float32"
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ValueError(f"vocab_size must cover the specials, got {self.vocab_size}")
        if self.embedding_size < 1 or self.hidden_size < 1:
            raise ValueError("embedding_size and hidden_size must be positive")
        object.__setattr__(self, "mode", canonical_mode(self.mode))
        if self.attention not in ATTENTION_KINDS:
            raise ValueError(f"unknown attention kind {self.attention!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def dual(self):
        return self.mode == "dual-train"

    def to_dict(self):
        return {
            "vocab_size": self.vocab_size,
            "embedding_size": self.embedding_size,
            "hidden_size": self.hidden_size,
            "mode": self.mode,
            "seed": self.seed,
            "attention": self.attention,
            "dtype": self.dtype,
            "regularizer": {
                "tau": self.regularizer.tau,
                "alpha": self.regularizer.alpha,
                "detach_soft_target": self.regularizer.detach_soft_target,
            },
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        reg = d.pop("regularizer", None)
        if reg is not None:
            d["regularizer"] = RegularizerConfig(**reg)
        return cls(**d)


def _param_shapes(config):
    m = config.vocab_size
    e = config.embedding_size
    h = config.hidden_size
    shapes = OrderedDict()
    shapes["embedding"] = (m, e)
    shapes["encoder.W"] = (e + h, 4 * h)
    shapes["encoder.b"] = (4 * h,)
    shapes["decoder.W"] = (e + h, 4 * h)
    shapes["decoder.b"] = (4 * h,)
    if config.attention == "additive":
        shapes["attention.query"] = (h, h)
        shapes["attention.key"] = (h, h)
        shapes["attention.v"] = (h,)
    else:
        shapes["attention.bilinear"] = (h, h)
    shapes["head1.W"] = (2 * h, m)
    shapes["head1.b"] = (m,)
    if config.dual:
        shapes["head2.W"] = (2 * h, m)
        shapes["head2.b"] = (m,)
    return shapes


class ModelParams:
    """Named parameter tensors held as persistent graph leaves."""

    def __init__(self, config, tensors):
        self.config = config
        self.tensors = tensors

    @classmethod
    def init(cls, config):
        """Seeded uniform(-0.08, 0.08) draw in a fixed parameter order.

        The order puts head one strictly before head two, so the two
        heads come from disjoint positions of the random stream and a
        dual model never starts with mirrored heads.
        """
        rng = np.random.default_rng(config.seed)
        tensors = OrderedDict()
        for key, shape in _param_shapes(config).items():
            draw = rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape)
            tensors[key] = ad.leaf(draw.astype(config.np_dtype))
        return cls(config, tensors)

    def __getitem__(self, key):
        return self.tensors[key]

    def keys(self):
        return self.tensors.keys()

    def zero_grad(self):
        ad.zero_grad(self.tensors.values())

    def gradients(self):
        """Gradient per parameter, zeros where nothing reached a leaf."""
        out = OrderedDict()
        for key, node in self.tensors.items():
            out[key] = node.grad if node.grad is not None else np.zeros_like(node.value)
        return out

    def flat_values(self):
        return np.concatenate([n.value.ravel() for n in self.tensors.values()])

    def set_flat_values(self, flat):
        offset = 0
        for node in self.tensors.values():
            size = node.value.size
            node.value = np.asarray(flat[offset:offset + size],
                                    dtype=node.value.dtype).reshape(node.value.shape)
            offset += size
        if offset != len(flat):
            raise ValueError(f"flat vector length {len(flat)} does not match parameters")

    def copy(self):
        tensors = OrderedDict((k, ad.leaf(n.value.copy())) for k, n in self.tensors.items())
        return ModelParams(self.config, tensors)


@dataclass
class EncoderStates:
    """Per-position encoder hidden states plus precomputed attention keys."""

    states: list
    keys: list
    final_h: ad.Node
    final_c: ad.Node
    batch: int

    @property
    def length(self):
        return len(self.states)


@dataclass
class DecoderStepOutput:
    logits_head1: ad.Node
    logits_head2: ad.Node | None
    state: tuple
    attention: ad.Node


def _as_id_matrix(seq):
    """Normalise token ids to a time-major (L, B) int array."""
    arr = np.asarray(seq)
    if arr.ndim == 1:
        arr = arr[:, None]
    elif arr.ndim == 2:
        arr = arr.T
    else:
        raise ValueError(f"token ids must be 1-d or 2-d, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("empty token sequence")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"token ids must be integers, got dtype {arr.dtype}")
    return arr


def _check_ids(arr, vocab_size, what):
    if arr.min() < 0 or arr.max() >= vocab_size:
        raise ValueError(f"{what} contains ids outside the vocabulary of size {vocab_size}")


def _lstm_step(w, b, x, h, c, hidden):
    z = ad.add_rowvec(ad.matmul(ad.concat([x, h], axis=1), w), b)
    i = ad.sigmoid(ad.slice_cols(z, 0, hidden))
    f = ad.sigmoid(ad.slice_cols(z, hidden, 2 * hidden))
    o = ad.sigmoid(ad.slice_cols(z, 2 * hidden, 3 * hidden))
    g = ad.tanh(ad.slice_cols(z, 3 * hidden, 4 * hidden))
    c_next = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_next = ad.mul(o, ad.tanh(c_next))
    return h_next, c_next


def encode(params, source):
    """Run the encoder over a source batch of equal-length sequences."""
    config = params.config
    src = _as_id_matrix(source)
    _check_ids(src, config.vocab_size, "source")
    length, batch = src.shape
    h = ad.constant(np.zeros((batch, config.hidden_size), dtype=config.np_dtype))
    c = h
    states = []
    for t in range(length):
        x = ad.rows(params["embedding"], src[t])
        h, c = _lstm_step(params["encoder.W"], params["encoder.b"],
                          x, h, c, config.hidden_size)
        states.append(h)
    if config.attention == "additive":
        keys = [ad.matmul(s, params["attention.key"]) for s in states]
    else:
        keys = [ad.matmul(s, params["attention.bilinear"]) for s in states]
    return EncoderStates(states=states, keys=keys, final_h=h, final_c=c, batch=batch)


def initial_state(encoder_states):
    """Decoder start state: the encoder's final state, unchanged."""
    return encoder_states.final_h, encoder_states.final_c


def _attend(params, h_dec, enc):
    config = params.config
    batch = enc.batch
    if config.attention == "additive":
        query = ad.matmul(h_dec, params["attention.query"])
        cols = [ad.reshape(ad.matmul(ad.tanh(ad.add(key, query)), params["attention.v"]),
                           (batch, 1))
                for key in enc.keys]
    else:
        cols = [ad.reshape(ad.rowdot(h_dec, key), (batch, 1)) for key in enc.keys]
    weights = ad.softmax(ad.concat(cols, axis=1))
    context = None
    for i, state in enumerate(enc.states):
        alpha_i = ad.reshape(ad.slice_cols(weights, i, i + 1), (batch,))
        term = ad.scale_rows(state, alpha_i)
        context = term if context is None else ad.add(context, term)
    return weights, context


def decode_step(params, state, prev_token, encoder_states):
    """One decoder step: LSTM update, attention, head projections."""
    config = params.config
    prev = np.asarray(prev_token)
    if prev.ndim == 0:
        prev = prev[None]
    if prev.shape != (encoder_states.batch,):
        raise ValueError(
            f"prev_token batch {prev.shape} does not match encoder batch "
            f"({encoder_states.batch},)")
    _check_ids(prev, config.vocab_size, "prev_token")
    h, c = state
    x = ad.rows(params["embedding"], prev)
    h, c = _lstm_step(params["decoder.W"], params["decoder.b"],
                      x, h, c, config.hidden_size)
    weights, context = _attend(params, h, encoder_states)
    feature = ad.concat([h, context], axis=1)
    logits1 = ad.add_rowvec(ad.matmul(feature, params["head1.W"]), params["head1.b"])
    logits2 = None
    if config.dual:
        logits2 = ad.add_rowvec(ad.matmul(feature, params["head2.W"]), params["head2.b"])
    return DecoderStepOutput(logits_head1=logits1, logits_head2=logits2,
                             state=(h, c), attention=weights)


def teacher_forced_pass(params, source, target):
    """Decode with gold prefixes; one output per target position after BOS.

    ``target`` must begin with the start-of-sequence id in every row.
    The output list has length len(target) - 1; position t is the
    prediction for target[t + 1], so the final position predicts the
    end-of-sequence token.
    """
    tgt = _as_id_matrix(target)
    _check_ids(tgt, params.config.vocab_size, "target")
    if not np.all(tgt[0] == BOS_ID):
        raise ValueError("target sequences must begin with the start-of-sequence id")
    if tgt.shape[0] < 2:
        raise ValueError("target must contain at least one position after the start id")
    enc = encode(params, source)
    if enc.batch != tgt.shape[1]:
        raise ValueError(f"source batch {enc.batch} does not match target batch {tgt.shape[1]}")
    state = initial_state(enc)
    outputs = []
    for t in range(tgt.shape[0] - 1):
        step = decode_step(params, state, tgt[t], enc)
        state = step.state
        outputs.append(step)
    return outputs
