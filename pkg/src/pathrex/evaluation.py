"""Held-out evaluation: fact ranking, P/R curves, slices and the zero-shot probe."""

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .corpus import NA
from .joint import Scorer
from .path_encoder import infer_hop_relation
from .text_encoder import encode

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankedFact:
    head: str
    relation: str
    tail: str
    score: float

    @property
    def triple(self):
        return (self.head, self.relation, self.tail)


class PRPoint(NamedTuple):
    cutoff: int
    precision: float
    recall: float


def gold_facts(instances):
    """Relational ``(h, r, t)`` triples present in ``instances``."""
    return {(i.head.entity, i.label, i.tail.entity) for i in instances if i.label != NA}


def rank_predictions(model, data, paths, cfg, pairs=None, relations=None, scorer=None):
    """Score every test pair against every non-NA relation and sort.

    ``pairs`` defaults to every bag in ``data`` (hop bags may live in
    ``data`` without being ranked); ``relations`` restricts the candidate
    relation names. Order is descending score, ties broken by ``(head, relation, tail)``.
    """
    scorer = scorer or Scorer(model, data, paths, cfg)
    names = [r for r in data.relations if r != NA] if relations is None else list(relations)
    ids = [data.rel_index[r] for r in names]
    facts = []
    for pair in sorted(data.bags if pairs is None else pairs):
        L = scorer.score(pair)
        if L is None:
            continue
        for name, r in zip(names, ids):
            facts.append(RankedFact(pair[0], name, pair[1], float(L[r])))
    facts.sort(key=lambda f: (-f.score, f.head, f.relation, f.tail))
    return facts


def pr_curve(ranked, gold):
    if not gold:
        raise ValueError("gold fact set is empty")
    points = []
    hits = 0
    for n, fact in enumerate(ranked, 1):
        hits += fact.triple in gold
        points.append(PRPoint(n, hits / n, hits / len(gold)))
    return points


def p_at_fractions(ranked, gold, total=20000, fractions=(0.1, 0.2, 0.5)):
    """Precision among the top ``floor(total * f)`` facts for each fraction."""
    if len(ranked) < total:
        logger.warning("ranking has %d facts, fewer than %d; using the full length", len(ranked), total)
        total = len(ranked)
    out = {}
    for f in fractions:
        cut = int(math.floor(total * f))
        if cut == 0:
            raise ValueError(f"cutoff floor({total} * {f}) is zero")
        out[f] = sum(fact.triple in gold for fact in ranked[:cut]) / cut
    return out


def f1(precision, recall):
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


def max_f1(points):
    if not points:
        raise ValueError("empty P/R curve")
    return max(f1(p.precision, p.recall) for p in points)


# ---------------------------------------------------------------------------
# test-set slices


def longtail_slice(instances, n_s):
    """Facts with at most ``n_s`` test sentences, their sentences, and every NA sentence."""
    if n_s < 1:
        raise ValueError("n_s must be >= 1")
    counts = Counter((i.head.entity, i.label, i.tail.entity) for i in instances if i.label != NA)
    return [
        i for i in instances if i.label == NA or counts[(i.head.entity, i.label, i.tail.entity)] <= n_s
    ]


def noise_slice(instances, target, rng):
    """Keep every relational sentence and draw NA sentences up to ``target``.

    ``target`` is the NA fraction of the resulting sentence set. When there
    are too few NA sentences all of them are kept and a warning is logged.
    Kept sentences stay in their original order.
    """
    if not 0 <= target < 1:
        raise ValueError("target must be in [0, 1)")
    na = [k for k, i in enumerate(instances) if i.label == NA]
    n_rel = len(instances) - len(na)
    want = int(round(target * n_rel / (1 - target)))
    if want >= len(na):
        if want > len(na):
            got = len(na) / max(len(instances), 1)
            logger.warning("noise target %.3f unreachable; keeping all NA sentences (%.3f)", target, got)
        keep_na = set(na)
    else:
        pick = rng.child("noise", repr(float(target))).permutation(len(na))[:want]
        keep_na = {na[j] for j in pick}
    return [i for k, i in enumerate(instances) if i.label != NA or k in keep_na]


def na_fraction(instances):
    return sum(i.label == NA for i in instances) / len(instances) if instances else 0.0


# ---------------------------------------------------------------------------
# zero-shot probe


def probe_features(model, data, paths, cfg, pairs):
    """``[s_hop1 ; s_hop2]`` for the first usable path of each pair.

    Each hop contributes the sentence picked for its greedily inferred
    relation. Pairs without a usable path are skipped; returns the feature
    matrix and the list of pairs it covers.
    """
    scorer = Scorer(model, data, paths, cfg)
    rows, kept = [], []
    for pair in pairs:
        for rec in paths.get(pair, ()):
            if rec.hop1 not in data.bags or rec.hop2 not in data.bags:
                continue
            vecs = []
            for hop in (rec.hop1, rec.hop2):
                sel = infer_hop_relation(scorer.bag_probs(hop), "greedy", None, cfg.bag_mode, None, data.na_index)
                sent = data.bag_sentences(hop)[sel.sentence]
                vecs.append(encode(sent, model.store, model.cfg).s.astype(np.float64))
            rows.append(np.concatenate(vecs))
            kept.append(pair)
            break
    width = 2 * model.cfg.d_c
    return (np.stack(rows) if rows else np.zeros((0, width))), kept


class LogisticProbe:
    """Multinomial logistic regression trained by mini-batch SGD."""

    def __init__(self, n_classes, l2=1e-4, lr=0.1, epochs=100, batch_size=16):
        self.n_classes = n_classes
        self.l2 = l2
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.W = None
        self.b = None

    def _probs(self, X):
        z = X @ self.W.T + self.b
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def fit(self, X, y, rng):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n, d = X.shape
        self.W = np.zeros((self.n_classes, d))
        self.b = np.zeros(self.n_classes)
        onehot = np.eye(self.n_classes)[y]
        for epoch in range(self.epochs):
            order = rng.child("probe", epoch).permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                err = self._probs(X[idx]) - onehot[idx]
                self.W -= self.lr * (err.T @ X[idx] / len(idx) + self.l2 * self.W)
                self.b -= self.lr * err.mean(axis=0)
        return self

    def predict(self, X):
        return np.argmax(self._probs(np.asarray(X, dtype=np.float64)), axis=1)


def zero_shot_probe(X_train, y_train, X_test, y_test, n_classes, rng, **kw):
    """Test accuracy of a logistic probe fitted on the training features."""
    if len(X_train) == 0 or len(X_test) == 0:
        raise ValueError("zero-shot probe needs non-empty train and test sets")
    probe = LogisticProbe(n_classes, **kw).fit(X_train, y_train, rng)
    return float(np.mean(probe.predict(X_test) == np.asarray(y_test)))


# ---------------------------------------------------------------------------
# output


def write_pr_csv(path, points):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["cutoff", "precision", "recall"])
        for p in points:
            w.writerow([p.cutoff, repr(p.precision), repr(p.recall)])


def write_summary_csv(path, metrics):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for key, value in metrics.items():
            w.writerow([key, value])


def pr_svg(curves, width=480, height=360, pad=40):
    """SVG markup plotting precision against recall for each named curve."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    w, h = width - 2 * pad, height - 2 * pad
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect x="{pad}" y="{pad}" width="{w}" height="{h}" fill="none" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="12">recall</text>',
        f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})">precision</text>',
    ]
    for n, (name, points) in enumerate(sorted(curves.items())):
        color = colors[n % len(colors)]
        coords = " ".join(f"{pad + p.recall * w:.2f},{pad + (1 - p.precision) * h:.2f}" for p in points)
        parts.append(f'<polyline fill="none" stroke="{color}" points="{coords}"/>')
        parts.append(f'<text x="{pad + 8}" y="{pad + 16 + 14 * n}" font-size="12" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_pr_svg(path, curves):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(pr_svg(curves))
