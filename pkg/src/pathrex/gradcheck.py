"""Finite-difference verification of the full model on a tiny world."""

import numpy as np

from .corpus import NA, EntityMention, PathRecord, SentenceInstance, Vocabulary
from .joint import JointConfig, PathModel, TextData, objective
from .numkernel import SeededRng, finite_diff_check
from .text_encoder import EncoderConfig

TINY = EncoderConfig(d_w=4, d_p=2, d_c=6, k=3, n_r=5, max_len=20, pos_clip=30)
TINY_D_R = 6


def tiny_vocab():
    return Vocabulary([f"w{i}" for i in range(6)] + ["A", "B", "C"])


def tiny_world(seed=0, length=7):
    """Three entities, four bags and two paths (A->C->B and A->B->C)."""
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(6)]
    vocab = tiny_vocab()
    relations = [NA, "r1", "r2", "r3", "r4"]
    layout = {("A", "B"): ("r1", 2), ("A", "C"): ("r2", 3), ("C", "B"): ("r3", 2), ("B", "C"): ("r4", 1)}
    instances = []
    for (h, t), (rel, n) in layout.items():
        for _ in range(n):
            toks = list(rng.choice(words, size=length))
            hp, tp = sorted(rng.choice(length, size=2, replace=False))
            if rng.random() < 0.5:
                hp, tp = tp, hp
            toks[hp], toks[tp] = h, t
            instances.append(SentenceInstance(toks, EntityMention(h, hp, hp + 1), EntityMention(t, tp, tp + 1), rel))
    data = TextData(instances, vocab, relations)
    paths = {("A", "B"): [PathRecord("A", "C", "B")], ("A", "C"): [PathRecord("A", "B", "C")]}
    return data, paths


def tiny_model(seed=0, vocab_size=11, scale=0.5):
    model = PathModel.create(TINY, TINY_D_R, vocab_size, seed=seed, dtype=np.float64)
    rng = SeededRng(seed).child("gradcheck")
    for name in model.store.names():
        # spread values out so gradients are well above round-off
        model.store[name][...] = rng.child(name).uniform(-scale, scale, model.store[name].shape)
    return model


def full_pipeline_error(seed=0, beta=0.5, bag_mode="max", eps=1e-6, names=None):
    """Max relative error between analytic and numeric ``dJ/dtheta``."""
    data, paths = tiny_world(seed)
    model = tiny_model(seed, len(tiny_vocab()))
    cfg = JointConfig(beta=beta, bag_mode=bag_mode, keep_prob=1.0, seed=seed)
    batch = data.training_items()
    model.store.zero_grads()
    objective(model, batch, data, paths, cfg)

    def loss(store):
        J, _ = objective(model, batch, data, paths, cfg, backward=False)
        return J

    return finite_diff_check(loss, model.store, eps, names)
