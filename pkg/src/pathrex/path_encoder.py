"""Relation-path scoring.

A path ``h -(rA)-> e -(rB)-> t`` is embedded as ``R[rA] + R[rB]``; every
relation is scored by the negative L1 distance of its own embedding to that
sum and the scores are normalised with a softmax. The path score for a
candidate relation multiplies this probability by the text confidences of
both hops, and several paths are combined by taking the best one.
"""

from dataclasses import dataclass

import numpy as np

from .numkernel import softmax
from .text_encoder import bag_scores


@dataclass(frozen=True)
class HopAssignment:
    relation: int
    confidence: float
    source: str
    sentence: int = 0


def init_relation_embeddings(store, n_r, d_r, rng):
    return store.add("rel", rng.uniform(-0.01, 0.01, (n_r, d_r)))


def path_logits(ra, rb, R):
    return -np.abs(R - (R[ra] + R[rb])).sum(axis=1)


def path_relation_prob(ra, rb, R):
    """``p(. | rA, rB)`` over all relations."""
    return softmax(path_logits(ra, rb, R))


def path_prob_table(R):
    """``T[a, b]`` is ``path_relation_prob(a, b, R)``; ``n_r x n_r x n_r``."""
    comp = R[:, None, :] + R[None, :, :]
    logits = -np.abs(R[None, None, :, :] - comp[:, :, None, :]).sum(axis=-1)
    return softmax(logits)


def infer_hop_relation(probs, mode, gold=None, bag_mode="max", rng=None, na_index=0):
    """Pick the relation a hop bag stands for.

    ``gold`` mode uses the bag's KB relations (best-scoring one if several)
    and returns ``None`` when the bag is NA, which tells the caller to drop
    the path. ``greedy`` mode takes the best non-NA relation; ties resolve to
    the lowest relation id.
    """
    scores, idx = bag_scores(probs, bag_mode, rng)
    if mode == "gold":
        cands = [r for r in sorted(gold or ()) if r != na_index]
        source = "gold"
    elif mode == "greedy":
        cands = [r for r in range(len(scores)) if r != na_index]
        source = "predicted"
    else:
        raise ValueError(f"unknown hop mode {mode!r}")
    if not cands:
        return None
    best = max(cands, key=lambda r: (scores[r], -r))
    return HopAssignment(best, float(scores[best]), source, int(idx[best]))


def path_score(r, hop_a, hop_b, R):
    p = path_relation_prob(hop_a.relation, hop_b.relation, R)
    return hop_a.confidence * hop_b.confidence * float(p[r])


def aggregate_paths(scores):
    """Best path score; no paths means no path evidence (0)."""
    return max(scores, default=0.0)


def path_backward(r, hop_a, hop_b, R, dG, grads):
    """Gradient of one path's score into ``R`` and into both hop confidences.

    Returns ``(dG/dE_A * dG, dG/dE_B * dG)`` so the caller can route them to
    the hop sentences. The L1 subgradient uses ``sign(0) = 0``.
    """
    ra, rb = hop_a.relation, hop_b.relation
    p = path_relation_prob(ra, rb, R)
    ea, eb = hop_a.confidence, hop_b.confidence
    dp_r = dG * ea * eb
    onehot = np.zeros_like(p)
    onehot[r] = 1.0
    do = dp_r * p[r] * (onehot - p)
    sgn = np.sign(R - (R[ra] + R[rb]))
    dR = -do[:, None] * sgn
    dcomp = (do[:, None] * sgn).sum(axis=0)
    dR[ra] += dcomp
    dR[rb] += dcomp
    grads.add("rel", dR)
    return dG * eb * p[r], dG * ea * p[r]
