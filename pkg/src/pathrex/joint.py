"""Joint text + path model, its objective, SGD training and checkpoints.

For an entity pair and candidate relation ``r`` the model combines the bag
score ``E`` from direct sentences with the best path score ``G``::

    L = E + (1 - E) * beta * G

and training maximises ``sum(log L)`` over labelled pairs with plain
mini-batch SGD. ``beta = 0`` is exactly the text-only CNN model.
"""

import logging
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .corpus import NA, build_bags
from .errors import CheckpointCorruptError, CheckpointFormatError, DimensionError, DivergenceError
from .numkernel import GradBuffer, ParamStore, SeededRng, sgd_step
from .path_encoder import (
    init_relation_embeddings,
    infer_hop_relation,
    path_backward,
    path_prob_table,
    path_relation_prob,
)
from .text_encoder import (
    PARAM_ORDER,
    EncodedSentence,
    EncoderConfig,
    bag_scores,
    encode_bag,
    encoder_backward,
    init_encoder_params,
)

logger = logging.getLogger(__name__)

MAGIC = b"PNRE"
VERSION = 1
CHECKPOINT_PARAMS = PARAM_ORDER + ("rel",)


@dataclass
class JointConfig:
    beta: float = 0.5
    lr: float = 0.01
    batch_size: int = 160
    epochs: int = 25
    bag_mode: str = "max"
    hop_mode: str = "greedy"
    keep_prob: float = 0.5
    seed: int = 0
    freeze_hops: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.bag_mode not in ("max", "rand"):
            raise ValueError(f"bag_mode must be max or rand, got {self.bag_mode!r}")
        if self.hop_mode not in ("greedy", "exhaustive"):
            raise ValueError(f"hop_mode must be greedy or exhaustive, got {self.hop_mode!r}")


def global_score(E, G, beta):
    """``L = E + alpha * G`` with ``alpha = (1 - E) * beta``."""
    return E + (1.0 - E) * beta * G


class PathModel:
    def __init__(self, cfg, d_r, store, vocab_hash=0):
        self.cfg = cfg
        self.d_r = d_r
        self.store = store
        self.vocab_hash = vocab_hash

    @classmethod
    def create(cls, cfg, d_r, vocab_size, seed=0, word_table=None, dtype=np.float32, vocab_hash=0):
        rng = SeededRng(seed).child("init")
        store = ParamStore(dtype)
        init_encoder_params(store, cfg, vocab_size, rng, word_table)
        init_relation_embeddings(store, cfg.n_r, d_r, rng.child("rel"))
        return cls(cfg, d_r, store, vocab_hash)

    @property
    def vocab_size(self):
        return self.store["word"].shape[0]

    def dims(self):
        c = self.cfg
        return (c.d_w, c.d_p, c.d_c, c.k, c.n_r, self.d_r, self.vocab_size, c.pos_clip)

    def astype(self, dtype):
        return PathModel(self.cfg, self.d_r, self.store.copy(dtype), self.vocab_hash)


class TextData:
    """Vocabulary-encoded sentences grouped into bags.

    ``relations`` is the relation inventory (NA first); bag gold sets are
    stored as relation ids.
    """

    def __init__(self, instances, vocab, relations):
        self.instances = list(instances)
        self.relations = list(relations)
        self.rel_index = {name: i for i, name in enumerate(self.relations)}
        self.na_index = self.rel_index[NA]
        self.sentences = [EncodedSentence.from_instance(i, vocab) for i in self.instances]
        self.bags = build_bags(self.instances)
        self._gold = {
            key: tuple(self.rel_index[r] for r in bag.relations) for key, bag in self.bags.items()
        }

    def bag_sentences(self, key):
        return [self.sentences[i] for i in self.bags[key].sentences]

    def gold_ids(self, key):
        return self._gold[key]

    def training_items(self):
        """One ``(pair, relation id)`` item per gold relation of every bag."""
        return [(key, r) for key in self.bags for r in self._gold[key]]


# ---------------------------------------------------------------------------
# objective


@dataclass
class _Upstream:
    """Per-sentence ``dJ/dp`` accumulated in first-touch order."""

    n_r: int
    dtype: np.dtype
    grads: dict = field(default_factory=dict)

    def add(self, key, sentence, r, value):
        vec = self.grads.get((key, sentence))
        if vec is None:
            vec = self.grads[(key, sentence)] = np.zeros(self.n_r, dtype=self.dtype)
        vec[r] += value


def _pick_rng(cfg, rng, key):
    if cfg.bag_mode != "rand":
        return None
    base = rng if rng is not None else SeededRng(cfg.seed).child("eval")
    return base.child("pick", *key)


def _usable_paths(paths, pair, data):
    if not paths:
        return []
    return [p for p in paths.get(pair, ()) if p.hop1 in data.bags and p.hop2 in data.bags]


def objective(model, batch, data, paths, cfg, rng=None, backward=True):
    """``J = sum(log L)`` over ``batch`` items ``(pair, relation id)``.

    With ``rng`` given the pass is a training pass (dropout on, keyed by
    ``rng``). With ``backward`` the gradient of ``J`` is added to
    ``model.store.grads``. Returns ``(J, list of L)``.
    """
    store, ecfg = model.store, model.cfg
    use_paths = cfg.beta > 0
    plans = []
    needed = {}
    for pair, r in batch:
        if pair not in data.bags:
            raise ValueError(f"pair {pair} has no direct bag")
        needed[pair] = True
        hops = _usable_paths(paths, pair, data) if use_paths else []
        for rec in hops:
            needed[rec.hop1] = True
            needed[rec.hop2] = True
        plans.append((pair, r, hops))

    keep = cfg.keep_prob if rng is not None else 1.0
    fwd = {}
    probs = {}
    for key in needed:
        drop_rng = rng.child("drop", *key) if rng is not None else None
        fwd[key] = encode_bag(data.bag_sentences(key), store, ecfg, drop_rng, keep)
        probs[key] = np.stack([f.p for f in fwd[key]])

    R = store["rel"]
    hop_cache = {}

    def gold_hop(key):
        if key not in hop_cache:
            hop_cache[key] = infer_hop_relation(
                probs[key], "gold", data.gold_ids(key), cfg.bag_mode, _pick_rng(cfg, rng, key), data.na_index
            )
        return hop_cache[key]

    upstream = _Upstream(ecfg.n_r, np.float64)
    path_grads = GradBuffer()
    J = 0.0
    Ls = []
    for pair, r, hops in plans:
        scores, idx = bag_scores(probs[pair], cfg.bag_mode, _pick_rng(cfg, rng, pair))
        E = float(scores[r])
        G, best = 0.0, None
        for rec in hops:
            ha, hb = gold_hop(rec.hop1), gold_hop(rec.hop2)
            if ha is None or hb is None:
                continue
            g = ha.confidence * hb.confidence * float(path_relation_prob(ha.relation, hb.relation, R)[r])
            if best is None or g > G:
                G, best = g, (rec, ha, hb)
        L = global_score(E, G, cfg.beta)
        if not (L > 0 and math.isfinite(L)):
            raise DivergenceError(f"non-finite objective for pair {pair}, relation {r}", where=pair)
        J += math.log(L)
        Ls.append(L)
        if not backward:
            continue
        dL = 1.0 / L
        upstream.add(pair, int(idx[r]), r, dL * (1.0 - cfg.beta * G))
        if best is not None:
            rec, ha, hb = best
            dG = dL * (1.0 - E) * cfg.beta
            d_ea, d_eb = path_backward(r, ha, hb, R, dG, path_grads)
            if not cfg.freeze_hops:
                upstream.add(rec.hop1, ha.sentence, ha.relation, float(d_ea))
                upstream.add(rec.hop2, hb.sentence, hb.relation, float(d_eb))

    if backward:
        path_grads.merge_into(store)
        jobs = list(upstream.grads.items())

        def run(job):
            (key, i), dp = job
            buf = GradBuffer()
            encoder_backward(fwd[key][i], dp.astype(store.dtype), store, buf, ecfg)
            return buf

        if cfg.threads > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(cfg.threads) as pool:
                buffers = list(pool.map(run, jobs))
        else:
            buffers = [run(job) for job in jobs]
        for buf in buffers:
            buf.merge_into(store)
    return J, Ls


# ---------------------------------------------------------------------------
# training


def train(model, data, paths, cfg, checkpoint=None, on_epoch=None):
    """Mini-batch SGD ascent on the objective; returns the per-epoch J log.

    Pairs are reshuffled every epoch from a seeded stream. If ``checkpoint``
    is a path the model is saved after every epoch, so a divergence leaves
    the last good state on disk (and in memory).
    """
    items = data.training_items()
    if not items:
        raise ValueError("no training items")
    root = SeededRng(cfg.seed).child("train")
    history = []
    for epoch in range(cfg.epochs):
        good = model.store.state()
        order = root.child("shuffle", epoch).permutation(len(items))
        total = 0.0
        try:
            for step, start in enumerate(range(0, len(items), cfg.batch_size)):
                batch = [items[i] for i in order[start : start + cfg.batch_size]]
                J, _ = objective(model, batch, data, paths, cfg, rng=root.child("step", epoch, step))
                sgd_step(model.store, cfg.lr)
                total += J
        except DivergenceError:
            model.store.load_state(good)
            model.store.zero_grads()
            logger.error("training diverged in epoch %d; restored last good parameters", epoch + 1)
            raise
        history.append(total)
        logger.info("epoch %d/%d  J=%.6f", epoch + 1, cfg.epochs, total)
        if on_epoch is not None:
            on_epoch(epoch, total)
        if checkpoint is not None:
            save_checkpoint(model, checkpoint)
    return history


# ---------------------------------------------------------------------------
# inference


class Scorer:
    """Dropout-free candidate scoring with per-bag caches."""

    def __init__(self, model, data, paths, cfg):
        self.model = model
        self.data = data
        self.paths = paths
        self.cfg = cfg
        self._probs = {}
        self._hops = {}
        self._table = None

    def bag_probs(self, key):
        if key not in self._probs:
            fwd = encode_bag(self.data.bag_sentences(key), self.model.store, self.model.cfg)
            self._probs[key] = np.stack([f.p for f in fwd])
        return self._probs[key]

    def _greedy_hop(self, key):
        if key not in self._hops:
            self._hops[key] = infer_hop_relation(
                self.bag_probs(key), "greedy", None, self.cfg.bag_mode,
                _pick_rng(self.cfg, None, key), self.data.na_index,
            )
        return self._hops[key]

    def path_evidence(self, pair):
        """``G`` for every relation (zeros when the pair has no usable path)."""
        n_r = self.model.cfg.n_r
        G = np.zeros(n_r)
        R = self.model.store["rel"]
        for rec in _usable_paths(self.paths, pair, self.data):
            if self.cfg.hop_mode == "greedy":
                ha, hb = self._greedy_hop(rec.hop1), self._greedy_hop(rec.hop2)
                if ha is None or hb is None:
                    continue
                g = ha.confidence * hb.confidence * path_relation_prob(ha.relation, hb.relation, R)
            else:
                if self._table is None:
                    self._table = path_prob_table(R)
                keep = [i for i in range(n_r) if i != self.data.na_index]
                ea, _ = bag_scores(self.bag_probs(rec.hop1), self.cfg.bag_mode, _pick_rng(self.cfg, None, rec.hop1))
                eb, _ = bag_scores(self.bag_probs(rec.hop2), self.cfg.bag_mode, _pick_rng(self.cfg, None, rec.hop2))
                T = self._table[np.ix_(keep, keep)]
                prod = ea[keep][:, None, None] * eb[keep][None, :, None] * T
                g = prod.reshape(-1, n_r).max(axis=0)
            G = np.maximum(G, g)
        return G

    def score(self, pair):
        """``L`` for every relation id of ``pair``; ``None`` when it has no bag."""
        if pair not in self.data.bags:
            return None
        E, _ = bag_scores(self.bag_probs(pair), self.cfg.bag_mode, _pick_rng(self.cfg, None, pair))
        E = E.astype(np.float64)
        if self.cfg.beta == 0:
            return E
        return global_score(E, self.path_evidence(pair), self.cfg.beta)


def score_candidates(model, data, pair, paths, cfg, candidates=None, scorer=None):
    """Scores ``L`` for ``candidates`` (default: every relation id)."""
    scorer = scorer or Scorer(model, data, paths, cfg)
    L = scorer.score(pair)
    if L is None:
        return None
    if candidates is None:
        return L
    return L[list(candidates)]


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model, path):
    """Write ``model`` atomically in the PNRE binary format."""
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<8i", *model.dims())]
    for name in CHECKPOINT_PARAMS:
        chunks.append(np.ascontiguousarray(model.store[name], dtype="<f4").tobytes())
    chunks.append(struct.pack("<Q", model.vocab_hash))
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


def _shapes(dims):
    d_w, d_p, d_c, k, n_r, d_r, vocab, pos_clip = dims
    n_pos = 2 * pos_clip + 1
    d = d_w + 2 * d_p
    return {
        "word": (vocab, d_w),
        "pos_head": (n_pos, d_p),
        "pos_tail": (n_pos, d_p),
        "conv_W": (d_c, k * d),
        "conv_b": (d_c,),
        "cls_U": (n_r, d_c),
        "cls_v": (n_r,),
        "rel": (n_r, d_r),
    }


def load_checkpoint(path, expect=None, max_len=120, vocab_hash=None):
    """Read a PNRE checkpoint into a float32 :class:`PathModel`.

    ``expect`` may be a model or a dims tuple; any differing dimension is
    rejected. ``vocab_hash`` (if given) must match the stored hash.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a PNRE checkpoint")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
    if len(blob) < 40:
        raise CheckpointCorruptError(f"{path}: truncated header")
    dims = struct.unpack_from("<8i", blob, 8)
    if any(x <= 0 for x in dims):
        raise CheckpointCorruptError(f"{path}: invalid dimensions {dims}")
    shapes = _shapes(dims)
    size = 40 + 4 * sum(int(np.prod(s)) for s in shapes.values()) + 8
    if len(blob) != size:
        raise CheckpointCorruptError(f"{path}: expected {size} bytes, found {len(blob)}")
    if expect is not None:
        want = expect.dims() if isinstance(expect, PathModel) else tuple(expect)
        names = ("d_w", "d_p", "d_c", "k", "n_r", "d_r", "vocab", "pos_clip")
        diff = [f"{n}={a} (expected {b})" for n, a, b in zip(names, dims, want) if a != b]
        if diff:
            raise DimensionError(f"{path}: checkpoint dimensions differ: " + ", ".join(diff))
    store = ParamStore(np.float32)
    at = 40
    for name in CHECKPOINT_PARAMS:
        n = int(np.prod(shapes[name]))
        store.add(name, np.frombuffer(blob, dtype="<f4", count=n, offset=at).reshape(shapes[name]))
        at += 4 * n
    (stored_hash,) = struct.unpack_from("<Q", blob, at)
    if vocab_hash is not None and stored_hash != vocab_hash:
        raise CheckpointFormatError(f"{path}: vocabulary hash mismatch")
    d_w, d_p, d_c, k, n_r, d_r, _, pos_clip = dims
    cfg = EncoderConfig(d_w=d_w, d_p=d_p, d_c=d_c, k=k, n_r=n_r, max_len=max_len, pos_clip=pos_clip)
    return PathModel(cfg, d_r, store, stored_hash)
