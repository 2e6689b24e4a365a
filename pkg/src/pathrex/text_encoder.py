"""CNN sentence encoder with a softmax relation classifier.

Each token is the concatenation of a word vector and two position vectors
(offset to the head and to the tail mention). A width-``k`` convolution with
zero padding yields ``l + k - 1`` windows; column-wise max pooling followed by
``tanh`` gives the sentence vector, which a linear layer maps to relation
probabilities. A bag of sentences is scored by its best sentence (``max``) or
by a uniformly drawn one (``rand``).
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .corpus import random_word_table
from .numkernel import dropout_mask, softmax

PARAM_ORDER = ("word", "pos_head", "pos_tail", "conv_W", "conv_b", "cls_U", "cls_v")


@dataclass(frozen=True)
class EncoderConfig:
    d_w: int = 50
    d_p: int = 5
    d_c: int = 230
    k: int = 3
    n_r: int = 2
    max_len: int = 120
    pos_clip: int = 30

    def __post_init__(self):
        for name in ("d_w", "d_p", "d_c", "k", "n_r", "max_len", "pos_clip"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def d(self):
        return self.d_w + 2 * self.d_p

    @property
    def n_pos(self):
        return 2 * self.pos_clip + 1


@dataclass(frozen=True)
class EncodedSentence:
    """Token ids plus the first-token positions of the two mentions."""

    ids: np.ndarray
    head_pos: int
    tail_pos: int

    @classmethod
    def from_instance(cls, inst, vocab):
        return cls(vocab.encode(inst.tokens), inst.head.start, inst.tail.start)


@dataclass
class SentenceForward:
    """Everything the backward pass needs for one sentence."""

    sent: EncodedSentence
    rows_head: np.ndarray
    rows_tail: np.ndarray
    windows: np.ndarray
    argmax: np.ndarray
    s: np.ndarray
    mask: np.ndarray
    p: np.ndarray


def _glorot(rng, fan_out, fan_in):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_encoder_params(store, cfg, vocab_size, rng, word_table=None):
    if word_table is None:
        word_table = random_word_table(vocab_size, cfg.d_w, rng.child("word"))
    if word_table.shape != (vocab_size, cfg.d_w):
        raise ValueError(f"word table shape {word_table.shape} != {(vocab_size, cfg.d_w)}")
    store.add("word", word_table)
    store.add("pos_head", rng.child("pos_head").uniform(-0.01, 0.01, (cfg.n_pos, cfg.d_p)))
    store.add("pos_tail", rng.child("pos_tail").uniform(-0.01, 0.01, (cfg.n_pos, cfg.d_p)))
    store.add("conv_W", _glorot(rng.child("conv"), cfg.d_c, cfg.k * cfg.d))
    store.add("conv_b", np.zeros(cfg.d_c))
    store.add("cls_U", _glorot(rng.child("cls"), cfg.n_r, cfg.d_c))
    store.add("cls_v", np.zeros(cfg.n_r))
    return store


def position_rows(length, anchor, pos_clip):
    """Row indices into a position table for offsets ``i - anchor``."""
    return np.clip(np.arange(length) - anchor, -pos_clip, pos_clip) + pos_clip


def embed_tokens(sent, store, cfg):
    """Input matrix ``l x d``: word vector, head offset vector, tail offset vector."""
    n = len(sent.ids)
    rows_h = position_rows(n, sent.head_pos, cfg.pos_clip)
    rows_t = position_rows(n, sent.tail_pos, cfg.pos_clip)
    X = np.concatenate(
        [store["word"][sent.ids], store["pos_head"][rows_h], store["pos_tail"][rows_t]], axis=1
    )
    return X, rows_h, rows_t


def conv_windows(X, k):
    """Stack the ``l + k - 1`` zero-padded windows of width ``k`` as rows."""
    n, d = X.shape
    pad = np.zeros((k - 1, d), dtype=X.dtype)
    padded = np.concatenate([pad, X, pad])
    return sliding_window_view(padded, (k, d))[:, 0].reshape(n + k - 1, k * d)


def conv_forward(X, W, b, k):
    """Convolution outputs ``h`` (one row per window) and the window matrix."""
    Q = conv_windows(X, k)
    return Q @ W.T + b, Q


def pool_tanh(h):
    """``tanh`` of the column-wise max; ties resolve to the first row."""
    idx = np.argmax(h, axis=0)
    return np.tanh(h[idx, np.arange(h.shape[1])]), idx


def sentence_prob(s, U, v, mask=None):
    z = s if mask is None else s * mask
    return softmax(U @ z + v)


def encode(sent, store, cfg, mask=None):
    X, rows_h, rows_t = embed_tokens(sent, store, cfg)
    h, Q = conv_forward(X, store["conv_W"], store["conv_b"], cfg.k)
    s, idx = pool_tanh(h)
    if mask is None:
        mask = np.ones_like(s)
    p = sentence_prob(s, store["cls_U"], store["cls_v"], mask)
    return SentenceForward(sent, rows_h, rows_t, Q, idx, s, mask, p)


def encode_bag(sents, store, cfg, rng=None, keep_p=1.0):
    """Forward every sentence; dropout on ``s`` only when ``rng`` is given."""
    out = []
    for sent in sents:
        mask = None
        if rng is not None and keep_p < 1.0:
            mask = dropout_mask(rng, keep_p, cfg.d_c, dtype=store.dtype)
        out.append(encode(sent, store, cfg, mask))
    return out


def bag_scores(probs, mode="max", rng=None):
    """Per-relation bag score and the chosen sentence for each relation.

    ``probs`` is ``n_sentences x n_r``. In ``rand`` mode a single sentence is
    drawn and used for every relation.
    """
    probs = np.asarray(probs)
    if probs.shape[0] == 0:
        raise ValueError("bag is empty")
    if mode == "max":
        idx = np.argmax(probs, axis=0)
        return probs[idx, np.arange(probs.shape[1])], idx
    if mode == "rand":
        i = int(rng.integers(probs.shape[0]))
        return probs[i].copy(), np.full(probs.shape[1], i)
    raise ValueError(f"unknown bag mode {mode!r}")


def bag_score(probs, r, mode="max", rng=None):
    """Score of relation ``r`` for a bag, with the index of the sentence used."""
    probs = np.asarray(probs)
    if probs.shape[0] == 0:
        raise ValueError("bag is empty")
    if mode == "max":
        i = int(np.argmax(probs[:, r]))
    elif mode == "rand":
        i = int(rng.integers(probs.shape[0]))
    else:
        raise ValueError(f"unknown bag mode {mode!r}")
    return float(probs[i, r]), i


def encoder_backward(fwd, dp, store, grads, cfg):
    """Accumulate parameter gradients given ``dp = dJ/dp`` for one sentence.

    Max pooling routes each column's gradient only to its cached argmax
    window; embedding tables receive row-sparse updates.
    """
    if fwd is None:
        raise RuntimeError("encoder_backward called without a forward cache")
    p = fwd.p
    de = p * (dp - dp @ p)
    z = fwd.s * fwd.mask
    grads.add("cls_U", np.outer(de, z))
    grads.add("cls_v", de)
    dz = store["cls_U"].T @ de
    dpre = dz * fwd.mask * (1.0 - fwd.s**2)

    W = store["conv_W"]
    grads.add("conv_W", dpre[:, None] * fwd.windows[fwd.argmax])
    grads.add("conv_b", dpre)
    dQ = np.zeros_like(fwd.windows)
    np.add.at(dQ, fwd.argmax, dpre[:, None] * W)

    n = len(fwd.sent.ids)
    k, d = cfg.k, cfg.d
    dpad = np.zeros((n + 2 * (k - 1), d), dtype=dQ.dtype)
    for a in range(k):
        dpad[a : a + n + k - 1] += dQ[:, a * d : (a + 1) * d]
    dX = dpad[k - 1 : k - 1 + n]
    grads.add_rows("word", fwd.sent.ids, dX[:, : cfg.d_w])
    grads.add_rows("pos_head", fwd.rows_head, dX[:, cfg.d_w : cfg.d_w + cfg.d_p])
    grads.add_rows("pos_tail", fwd.rows_tail, dX[:, cfg.d_w + cfg.d_p :])
