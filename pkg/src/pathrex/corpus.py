"""Distant-supervision dataset construction.

A knowledge base of ``(head, relation, tail)`` triples is aligned with
sentences whose entity mentions are already annotated. Every sentence that
mentions both entities of a known pair becomes a labelled instance; pairs
from a corrupted copy of the KB supply the ``NA`` ("no relation") noise.
"""

import hashlib
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, GenerationError, ParseError

logger = logging.getLogger(__name__)

NA = "NA"
PAD = "<pad>"
UNK = "<unk>"


class Triple(NamedTuple):
    head: str
    relation: str
    tail: str


@dataclass(frozen=True)
class EntityMention:
    entity: str
    start: int
    end: int

    def overlaps(self, other):
        return self.start < other.end and other.start < self.end


@dataclass
class SentenceInstance:
    tokens: list
    head: EntityMention
    tail: EntityMention
    label: str = NA

    @property
    def pair(self):
        return (self.head.entity, self.tail.entity)

    def to_json(self):
        return {
            "tokens": list(self.tokens),
            "head": {"id": self.head.entity, "start": self.head.start, "end": self.head.end},
            "tail": {"id": self.tail.entity, "start": self.tail.start, "end": self.tail.end},
            "label": self.label,
        }

    @classmethod
    def from_json(cls, record):
        return cls(
            tokens=list(record["tokens"]),
            head=_mention(record["head"]),
            tail=_mention(record["tail"]),
            label=record.get("label", NA),
        )


@dataclass
class Bag:
    """All sentences of one ordered entity pair.

    ``sentences`` indexes into the owning instance list. For a pair holding
    several KB relations the instances are duplicated once per relation, but
    the bag lists each underlying sentence once.
    """

    key: tuple
    sentences: list
    relations: tuple

    def __len__(self):
        return len(self.sentences)

    @property
    def is_na(self):
        return self.relations == (NA,)


class PathRecord(NamedTuple):
    head: str
    mid: str
    tail: str

    @property
    def hop1(self):
        return (self.head, self.mid)

    @property
    def hop2(self):
        return (self.mid, self.tail)


def _mention(record):
    return EntityMention(str(record["id"]), int(record["start"]), int(record["end"]))


def relation_inventory(triples):
    """Relation names with ``NA`` at index 0 followed by the sorted KB relations."""
    names = sorted({t.relation for t in triples} - {NA})
    return [NA] + names


# ---------------------------------------------------------------------------
# file formats


def read_triples(path):
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", lineno)
            head, rel, tail = parts
            if head == tail:
                raise ParseError(f"head equals tail ({head!r})", lineno)
            triples.append(Triple(head, rel, tail))
    return triples


def write_triples(path, triples):
    with open(path, "w", encoding="utf-8") as fh:
        for t in triples:
            fh.write(f"{t.head}\t{t.relation}\t{t.tail}\n")


def read_jsonl(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(str(exc), lineno) from None
    return records


def read_sentences(path):
    out = []
    for lineno, record in enumerate(read_jsonl(path), 1):
        try:
            out.append(SentenceInstance.from_json(record))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad sentence record: {exc}", lineno) from None
    return out


def write_sentences(path, instances):
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_json(), ensure_ascii=False) + "\n")


def write_paths(path, paths):
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(paths):
            for rec in paths[key]:
                fh.write(json.dumps({"h": rec.head, "e": rec.mid, "t": rec.tail}, ensure_ascii=False) + "\n")


def read_paths(path):
    paths = defaultdict(list)
    for record in read_jsonl(path):
        rec = PathRecord(record["h"], record["e"], record["t"])
        paths[(rec.head, rec.tail)].append(rec)
    return dict(paths)


# ---------------------------------------------------------------------------
# alignment


def truncate(tokens, head, tail, max_len):
    """Cut ``tokens`` to ``max_len`` around the midpoint of the two mentions.

    Returns ``None`` when both mentions cannot fit in the window.
    """
    if len(tokens) <= max_len:
        return list(tokens), head, tail
    lo = min(head.start, tail.start)
    hi = max(head.end, tail.end)
    start = (lo + hi) // 2 - max_len // 2
    start = min(max(start, 0), len(tokens) - max_len)
    end = start + max_len
    if lo < start or hi > end:
        return None

    def shift(m):
        return EntityMention(m.entity, m.start - start, m.end - start)

    return list(tokens[start:end]), shift(head), shift(tail)


def _raw_mentions(record):
    if isinstance(record, SentenceInstance):
        return list(record.tokens), [record.head, record.tail]
    tokens = list(record["tokens"])
    if "mentions" in record:
        mentions = [_mention(m) for m in record["mentions"]]
    else:
        mentions = [_mention(record["head"]), _mention(record["tail"])]
    return tokens, mentions


@dataclass
class AlignResult:
    instances: list
    bags: dict
    skipped: int = 0
    stats: dict = field(default_factory=dict)


def align(kb, sentences, negatives=(), max_len=120):
    """Label every sentence mentioning a KB pair (or a corrupted pair as NA).

    A sentence may carry any number of mentions; every ordered pair of
    distinct entities in it is checked. The first mention of an entity is
    the one used. Pairs present in ``kb`` take precedence over corrupted
    pairs.
    """
    by_pair = defaultdict(set)
    for t in kb:
        by_pair[(t.head, t.tail)].add(t.relation)
    neg_pairs = {(t.head, t.tail) for t in negatives} - set(by_pair)

    instances = []
    skipped = 0
    for record in sentences:
        try:
            tokens, mentions = _raw_mentions(record)
        except (KeyError, TypeError, ValueError):
            skipped += 1
            continue
        first = {}
        bad = False
        for m in mentions:
            if not 0 <= m.start < m.end <= len(tokens):
                bad = True
                break
            first.setdefault(m.entity, m)
        if bad:
            skipped += 1
            continue
        ents = list(first)
        for a in ents:
            for b in ents:
                if a == b:
                    continue
                pair = (a, b)
                if pair in by_pair:
                    labels = sorted(by_pair[pair])
                elif pair in neg_pairs:
                    labels = [NA]
                else:
                    continue
                head, tail = first[a], first[b]
                if head.overlaps(tail):
                    skipped += 1
                    continue
                cut = truncate(tokens, head, tail, max_len)
                if cut is None:
                    skipped += 1
                    continue
                toks, h, t = cut
                for label in labels:
                    instances.append(SentenceInstance(list(toks), h, t, label))
    if skipped:
        logger.warning("align: skipped %d unresolvable sentence/pair mentions", skipped)
    return AlignResult(instances, build_bags(instances), skipped)


def build_bags(instances):
    """Group instances by ordered pair; returns ``{pair: Bag}`` sorted by pair."""
    by_pair = defaultdict(lambda: defaultdict(list))
    for i, inst in enumerate(instances):
        by_pair[inst.pair][inst.label].append(i)
    bags = {}
    for key in sorted(by_pair):
        labels = by_pair[key]
        rels = sorted(labels)
        if len(rels) > 1 and NA in rels:
            rels.remove(NA)
        bags[key] = Bag(key, list(labels[rels[0]]), tuple(rels))
    return bags


# ---------------------------------------------------------------------------
# negatives, splits, paths


def sample_negatives(kb, entities, ratio, rng, max_retries=100):
    """Corrupt head or tail of KB triples; none of the results is in ``kb``.

    ``ratio`` corruptions are produced per positive triple (fractional ratios
    are rounded over the whole KB). The returned list is duplicate free and
    sorted.
    """
    if ratio < 0:
        raise ValueError(f"ratio must be >= 0, got {ratio}")
    kb = sorted(set(kb))
    pool = sorted(set(entities))
    known = set(kb)
    total = int(round(ratio * len(kb)))
    out = set()
    for n in range(total):
        h, r, t = kb[n % len(kb)]
        for _ in range(max_retries):
            e = pool[int(rng.integers(len(pool)))]
            cand = Triple(e, r, t) if rng.random() < 0.5 else Triple(h, r, e)
            if cand.head != cand.tail and cand not in known and cand not in out:
                out.add(cand)
                break
        else:
            raise GenerationError(
                f"could not corrupt {(h, r, t)} without collision after {max_retries} tries"
            )
    return sorted(out)


def _partition(units, ratios, rng):
    order = [units[i] for i in rng.permutation(len(units))]
    sizes = [math.floor(len(units) * r + 1e-9) for r in ratios]
    sizes[0] += len(units) - sum(sizes)
    parts, at = [], 0
    for size in sizes:
        parts.append(set(order[at : at + size]))
        at += size
    return parts


def split(instances, ratios, rng):
    """Fact-disjoint train/valid/test split.

    Relational facts are the unit of assignment; facts that share an entity
    pair share sentences, so they move together. NA bags are split on their
    own at bag level. Remainders after flooring go to train.
    """
    if not instances:
        raise ValueError("cannot split an empty dataset")
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    pairs = defaultdict(set)
    for inst in instances:
        pairs[inst.pair].add(inst.label)
    relational = sorted(p for p, labels in pairs.items() if labels != {NA})
    na_pairs = sorted(p for p, labels in pairs.items() if labels == {NA})
    assign = {}
    for units, key in ((relational, "facts"), (na_pairs, "na")):
        for idx, part in enumerate(_partition(units, ratios, rng.child("split", key))):
            for p in part:
                assign[p] = idx
    out = ([], [], [])
    for inst in instances:
        out[assign[inst.pair]].append(inst)
    return out


def facts_of(instances):
    """Relational ``Triple`` set mentioned by ``instances``."""
    return {Triple(i.head.entity, i.label, i.tail.entity) for i in instances if i.label != NA}


def extract_paths(bags, max_paths_per_pair=8, pairs=None):
    """Two-hop paths ``h -> e -> t`` through nonempty bags.

    ``bags`` maps pair -> bag (anything with ``len``). Paths are computed for
    every bag pair plus any extra ``pairs``. When more than
    ``max_paths_per_pair`` intermediates exist, those whose weaker hop has the
    most sentences win; ties go to the smaller entity id.
    """
    outgoing = defaultdict(dict)
    incoming = defaultdict(dict)
    for (h, t), bag in bags.items():
        if len(bag):
            outgoing[h][t] = len(bag)
            incoming[t][h] = len(bag)
    wanted = set(bags) | set(pairs or ())
    result = {}
    for h, t in sorted(wanted):
        mids = outgoing.get(h, {}).keys() & incoming.get(t, {}).keys()
        mids.discard(h)
        mids.discard(t)
        ranked = sorted(mids, key=lambda e: (-min(outgoing[h][e], incoming[t][e]), e))
        result[(h, t)] = [PathRecord(h, e, t) for e in ranked[:max_paths_per_pair]]
    return result


# ---------------------------------------------------------------------------
# vocabulary and embeddings


class Vocabulary:
    """Token <-> index table with reserved padding (0) and unknown (1) rows."""

    pad_index = 0
    unk_index = 1

    def __init__(self, tokens=()):
        self.itos = [PAD, UNK]
        self.stoi = {PAD: 0, UNK: 1}
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def index(self, token):
        return self.stoi.get(token, self.unk_index)

    def encode(self, tokens):
        return np.array([self.index(t) for t in tokens], dtype=np.int64)

    def hash64(self):
        digest = hashlib.blake2b("\n".join(self.itos).encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")

    def save(self, path):
        Path(path).write_text("\n".join(self.itos[2:]) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line for line in lines if line)


def build_vocab(sentences, min_count=100):
    """Keep tokens occurring strictly more than ``min_count`` times.

    ``min_count=0`` keeps everything. ``sentences`` are token sequences or
    instances.
    """
    if min_count < 0:
        raise ValueError("min_count must be >= 0")
    counts = Counter()
    for s in sentences:
        counts.update(s.tokens if isinstance(s, SentenceInstance) else s)
    kept = sorted((tok for tok, c in counts.items() if c > min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


@dataclass
class EmbeddingStats:
    found: int = 0
    missing: int = 0
    duplicates: int = 0


def random_word_table(vocab_size, d_w, rng, dtype=np.float32):
    table = rng.uniform(-0.25, 0.25, size=(vocab_size, d_w)) / d_w
    table[Vocabulary.pad_index] = 0.0
    return table.astype(dtype)


def load_embeddings(path, vocab, d_w, rng, dtype=np.float32):
    """Read a word2vec text file into a ``len(vocab) x d_w`` table.

    Rows not covered by the file keep a random uniform init in
    ``[-0.25, 0.25] / d_w``. If a token appears twice the last row wins.
    Returns ``(table, EmbeddingStats)``.
    """
    table = random_word_table(len(vocab), d_w, rng, dtype)
    seen = set()
    stats = EmbeddingStats()
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ParseError("header must be 'count dim'", 1)
        try:
            dim = int(header[1])
            int(header[0])
        except ValueError:
            raise ParseError("header must be 'count dim'", 1) from None
        if dim != d_w:
            raise DimensionError(f"embedding file has dim {dim}, expected d_w={d_w}")
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            if len(parts) != d_w + 1:
                raise ParseError(f"expected token and {d_w} values, got {len(parts) - 1}", lineno)
            try:
                vec = np.array([float(x) for x in parts[1:]])
            except ValueError:
                raise ParseError("non-numeric vector component", lineno) from None
            tok = parts[0]
            if tok not in vocab or tok == PAD:
                continue
            if tok in seen:
                stats.duplicates += 1
                logger.warning("load_embeddings: token %r repeated at line %d; keeping last", tok, lineno)
            seen.add(tok)
            table[vocab.index(tok)] = vec
    regular = set(vocab.itos[2:])
    stats.found = len(seen & regular)
    stats.missing = len(regular - seen)
    return table, stats
