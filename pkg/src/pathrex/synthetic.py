"""Synthetic compositional relation-extraction benchmark.

The KB has twelve relations. ``r03`` is a composed relation: it holds for
``(h, t)`` exactly when some ``e`` has ``r01(h, e)`` and ``r02(e, t)``. Every
relation owns a few keyword tokens; a sentence *expresses* its relation by
containing one of them, otherwise it is filler only. Held-out ``r03`` facts
get filler-only direct sentences, so only the two-hop path can reveal them.

Run ``python -m pathrex.synthetic OUT_DIR`` to write ``triples.tsv``,
``negatives.tsv`` and ``sentences.jsonl`` for the command-line pipeline.
"""

import argparse
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Triple, align, relation_inventory, sample_negatives, write_triples
from .numkernel import SeededRng

RELATIONS = [f"r{i:02d}" for i in range(1, 13)]
HOP1, HOP2, COMPOSED = "r01", "r02", "r03"


@dataclass
class SyntheticConfig:
    n_entities: int = 1500
    n_chains: int = 80
    facts_per_relation: int = 40
    heldout_fraction: float = 0.5
    other_test_fraction: float = 0.3
    n_train_na: int = 800
    n_test_na: int = 3200
    informative_p: float = 0.9
    confusing_na_p: float = 0.05
    n_filler: int = 1000
    n_names: int = 40
    keywords_per_relation: int = 3
    min_len: int = 8
    max_len: int = 14
    sentence_counts: tuple = (1, 2, 3, 4, 5)
    sentence_probs: tuple = (0.4, 0.25, 0.15, 0.1, 0.1)


@dataclass
class SyntheticBenchmark:
    kb: list
    relations: list
    train: list
    test: list
    heldout: set
    negatives: list = field(default_factory=list)
    raw_sentences: list = field(default_factory=list)


def _entity(i):
    return f"E{i:05d}"


def _compose(r1_pairs, r2_pairs):
    by_mid = {}
    for e, t in r2_pairs:
        by_mid.setdefault(e, []).append(t)
    out = set()
    for h, e in r1_pairs:
        for t in by_mid.get(e, ()):
            if h != t:
                out.add((h, t))
    return out


def _build_kb(cfg, rng):
    used = set()
    ents = list(range(cfg.n_entities))

    def fresh_pair():
        while True:
            a, b = (int(x) for x in rng.choice(cfg.n_entities, 2))
            if a != b and (a, b) not in used and (b, a) not in used:
                used.add((a, b))
                return _entity(a), _entity(b)

    r1, r2 = set(), set()
    while len(r1) < cfg.n_chains:
        h, e, t = (int(x) for x in rng.choice(ents, 3))
        if len({h, e, t}) < 3:
            continue
        p1, p2 = (h, e), (e, t)
        if {p1, p2, (h, t)} & used or {(e, h), (t, e), (t, h)} & used:
            continue
        used.update([p1, p2, (h, t)])
        r1.add((_entity(h), _entity(e)))
        r2.add((_entity(e), _entity(t)))
    r3 = _compose(r1, r2)
    for h, t in r3:
        used.add((int(h[1:]), int(t[1:])))
    kb = [Triple(h, HOP1, t) for h, t in r1] + [Triple(h, HOP2, t) for h, t in r2]
    kb += [Triple(h, COMPOSED, t) for h, t in r3]
    for rel in RELATIONS[3:]:
        for _ in range(cfg.facts_per_relation):
            a, b = fresh_pair()
            kb.append(Triple(a, rel, b))
    return sorted(kb)


class _Writer:
    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.rng = rng
        self.filler = [f"w{i:03d}" for i in range(cfg.n_filler)]
        # mention surface forms do not identify the entity
        self.names = [f"name{i:02d}" for i in range(cfg.n_names)]
        self.keywords = {
            rel: [f"{rel}k{j}" for j in range(cfg.keywords_per_relation)] for rel in RELATIONS
        }

    def sentence(self, h, t, keyword=None, outside=False):
        """Filler sentence mentioning ``h`` and ``t``.

        A ``keyword`` goes between the two mentions, or before both of them
        when ``outside`` is set.
        """
        cfg, rng = self.cfg, self.rng
        n = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        toks = [self.filler[int(i)] for i in rng.integers(len(self.filler), size=n)]
        slots = sorted(int(x) for x in rng.choice(n, 3 if keyword else 2, replace=False))
        if keyword:
            if outside:
                kp, hp, tp = slots
            else:
                hp, kp, tp = slots
            toks[kp] = keyword
        else:
            hp, tp = slots
        if rng.random() < 0.5:
            hp, tp = tp, hp
        toks[hp], toks[tp] = (self.names[int(i)] for i in rng.integers(len(self.names), size=2))
        return {
            "tokens": toks,
            "mentions": [{"id": h, "start": hp, "end": hp + 1}, {"id": t, "start": tp, "end": tp + 1}],
        }

    def keyword(self, rel):
        words = self.keywords[rel]
        return words[int(self.rng.integers(len(words)))]

    def count(self):
        cfg = self.cfg
        return int(self.rng.choice(cfg.sentence_counts, p=cfg.sentence_probs))


def make_benchmark(seed=0, cfg=None):
    """Generate KB, sentences and a designed fact-disjoint train/test split.

    ``r01``/``r02`` facts all go to train (they are the path hops); a
    ``heldout_fraction`` of ``r03`` facts and ``other_test_fraction`` of the
    remaining relations go to test. NA pairs come from corrupting KB triples,
    excluding any corrupted pair that the composition rule would make an
    ``r03`` fact.
    """
    cfg = cfg or SyntheticConfig()
    root = SeededRng(seed).child("synthetic")
    rng = np.random.default_rng(root.integers(2**63))
    kb = _build_kb(cfg, rng)
    kb_pairs = {(t.head, t.tail) for t in kb}
    r1 = {(t.head, t.tail) for t in kb if t.relation == HOP1}
    r2 = {(t.head, t.tail) for t in kb if t.relation == HOP2}

    n_na = cfg.n_train_na + cfg.n_test_na
    ents = sorted({t.head for t in kb} | {t.tail for t in kb})
    ratio = 1.5 * n_na / len(kb)
    corrupted = sample_negatives(kb, ents, ratio, root.child("negatives"))
    mids = {}
    for h, e in r1:
        mids.setdefault(h, []).append(e)
    na_pairs = []
    seen = set()
    for t in corrupted:
        pair = (t.head, t.tail)
        if pair in kb_pairs or pair in seen or t.head == t.tail:
            continue
        if any((e, t.tail) in r2 for e in mids.get(t.head, ())):
            continue
        seen.add(pair)
        na_pairs.append(t)
    if len(na_pairs) < n_na:
        raise ValueError(f"only {len(na_pairs)} NA pairs available, need {n_na}")
    order = rng.permutation(len(na_pairs))
    na_pairs = [na_pairs[i] for i in order[:n_na]]
    na_test_pairs = {(t.head, t.tail) for t in na_pairs[cfg.n_train_na :]}

    composed = sorted((t.head, t.tail) for t in kb if t.relation == COMPOSED)
    pick = rng.permutation(len(composed))
    heldout = {composed[i] for i in pick[: int(round(cfg.heldout_fraction * len(composed)))]}
    others = sorted({(t.head, t.tail) for t in kb if t.relation not in (HOP1, HOP2, COMPOSED)})
    pick = rng.permutation(len(others))
    other_test = {others[i] for i in pick[: int(round(cfg.other_test_fraction * len(others)))]}
    test_pairs = heldout | other_test | na_test_pairs

    writer = _Writer(cfg, rng)
    raw = []
    for t in kb:
        pair = (t.head, t.tail)
        for _ in range(writer.count()):
            informative = pair not in heldout and rng.random() < cfg.informative_p
            raw.append(writer.sentence(t.head, t.tail, writer.keyword(t.relation) if informative else None))
    for t in na_pairs:
        for _ in range(writer.count()):
            kw = None
            if rng.random() < cfg.confusing_na_p:
                kw = writer.keyword(RELATIONS[int(rng.integers(len(RELATIONS)))])
            raw.append(writer.sentence(t.head, t.tail, kw, outside=True))

    result = align(kb, raw, na_pairs)
    train = [i for i in result.instances if i.pair not in test_pairs]
    test = [i for i in result.instances if i.pair in test_pairs]
    return SyntheticBenchmark(kb, relation_inventory(kb), train, test, heldout, na_pairs, raw)


def main(argv=None):
    parser = argparse.ArgumentParser(description="write a synthetic triples/sentences pair")
    parser.add_argument("out", type=Path)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--small", action="store_true", help="a few hundred sentences only")
    args = parser.parse_args(argv)
    cfg = SyntheticConfig()
    if args.small:
        cfg = SyntheticConfig(n_entities=300, n_chains=20, facts_per_relation=10, n_train_na=60, n_test_na=60)
    bench = make_benchmark(args.seed, cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    write_triples(args.out / "triples.tsv", bench.kb)
    write_triples(args.out / "negatives.tsv", sorted(bench.negatives))
    with open(args.out / "sentences.jsonl", "w", encoding="utf-8") as fh:
        for record in bench.raw_sentences:
            fh.write(json.dumps(record) + "\n")
    print(f"wrote {len(bench.kb)} triples, {len(bench.negatives)} negatives and {len(bench.raw_sentences)} sentences to {args.out}")


if __name__ == "__main__":
    main()
