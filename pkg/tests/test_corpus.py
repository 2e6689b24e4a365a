import itertools
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathrex.corpus import (
    NA,
    Bag,
    EntityMention,
    PathRecord,
    SentenceInstance,
    Triple,
    Vocabulary,
    align,
    build_bags,
    build_vocab,
    extract_paths,
    facts_of,
    load_embeddings,
    read_paths,
    read_sentences,
    read_triples,
    relation_inventory,
    sample_negatives,
    split,
    truncate,
    write_paths,
    write_sentences,
)
from pathrex.errors import DimensionError, GenerationError, ParseError
from pathrex.numkernel import SeededRng


def raw(tokens, *mentions):
    return {"tokens": tokens.split(), "mentions": [{"id": e, "start": s, "end": s + 1} for e, s in mentions]}


def test_align_single_fact():
    kb = [Triple("A", "r1", "B")]
    res = align(kb, [raw("A met B", ("A", 0), ("B", 2))])
    assert len(res.instances) == 1
    assert res.instances[0].label == "r1"
    assert list(res.bags) == [("A", "B")]


def test_align_needs_both_entities():
    kb = [Triple("A", "r1", "B")]
    assert align(kb, [raw("A slept", ("A", 0))]).instances == []


def test_align_bag_size_matches_bruteforce_scan():
    kb = [Triple("A", "r1", "B"), Triple("C", "r2", "A")]
    sents = [
        raw("A met B", ("A", 0), ("B", 2)),
        raw("B saw A today", ("B", 0), ("A", 2)),
        raw("C and A and B", ("C", 0), ("A", 2), ("B", 4)),
        raw("nobody here", ),
        raw("A then B", ("A", 0), ("B", 2)),
    ]
    res = align(kb, sents)
    # oracle: count sentences whose mention set contains both ends of each pair
    for t in kb:
        expected = sum(
            1 for s in sents if {t.head, t.tail} <= {m["id"] for m in s["mentions"]}
        )
        assert len(res.bags[(t.head, t.tail)]) == expected
    assert len(res.bags[("A", "B")]) == 4


def test_align_multi_relation_pair_duplicates_instances():
    kb = [Triple("A", "r1", "B"), Triple("A", "r2", "B")]
    res = align(kb, [raw("A x B", ("A", 0), ("B", 2)), raw("A y B", ("A", 0), ("B", 2))])
    assert sorted(i.label for i in res.instances) == ["r1", "r1", "r2", "r2"]
    bag = res.bags[("A", "B")]
    assert bag.relations == ("r1", "r2")
    assert len(bag) == 2


def test_align_negatives_get_na_and_kb_wins():
    kb = [Triple("A", "r1", "B")]
    negs = [Triple("C", "r1", "B"), Triple("A", "r9", "B")]
    res = align(kb, [raw("C B", ("C", 0), ("B", 1)), raw("A B", ("A", 0), ("B", 1))], negs)
    labels = {i.pair: i.label for i in res.instances}
    assert labels == {("C", "B"): NA, ("A", "B"): "r1"}
    assert res.bags[("C", "B")].is_na


def test_align_skips_bad_spans(caplog):
    kb = [Triple("A", "r1", "B")]
    bad = {"tokens": ["A", "B"], "mentions": [{"id": "A", "start": 0, "end": 1}, {"id": "B", "start": 1, "end": 5}]}
    with caplog.at_level(logging.WARNING):
        res = align(kb, [bad])
    assert res.instances == [] and res.skipped == 1
    assert "skipped 1" in caplog.text


def test_alignment_soundness_random():
    rng = np.random.default_rng(0)
    ents = [f"e{i}" for i in range(8)]
    kb = [Triple(a, "r", b) for a, b in itertools.permutations(ents, 2) if rng.random() < 0.3]
    sents = []
    for _ in range(60):
        picked = rng.choice(ents, size=3, replace=False)
        sents.append(raw(" ".join(["w"] * 2 + list(picked)), *[(e, 2 + j) for j, e in enumerate(picked)]))
    res = align(kb, sents)
    for inst in res.instances:
        assert inst.tokens[inst.head.start] == inst.head.entity
        assert inst.tokens[inst.tail.start] == inst.tail.entity


def test_truncate_keeps_both_mentions():
    toks = [str(i) for i in range(300)]
    out = truncate(toks, EntityMention("A", 140, 141), EntityMention("B", 170, 172), 120)
    tokens, h, t = out
    assert len(tokens) == 120
    assert tokens[h.start] == "140" and tokens[t.start] == "170"
    assert truncate(toks, EntityMention("A", 0, 1), EntityMention("B", 250, 251), 120) is None


def test_sample_negatives_only_noncolliding():
    kb = [Triple("A", "r1", "B")]
    seen = set()
    for seed in range(40):
        out = sample_negatives(kb, ["A", "B", "C"], 1, SeededRng(seed))
        assert len(out) == 1
        seen.add(out[0])
    assert seen == {Triple("C", "r1", "B"), Triple("A", "r1", "C")}


def test_sample_negatives_ratio_zero():
    assert sample_negatives([Triple("A", "r", "B")], ["A", "B", "C"], 0, SeededRng(0)) == []


def test_sample_negatives_never_in_kb():
    rng = np.random.default_rng(1)
    ents = [f"e{i}" for i in range(20)]
    kb = set()
    while len(kb) < 50:
        a, b = rng.choice(ents, 2, replace=False)
        kb.add(Triple(str(a), f"r{rng.integers(3)}", str(b)))
    total = 0
    for seed in range(50):
        out = sample_negatives(kb, ents, 4, SeededRng(seed))
        assert not set(out) & kb
        total += len(out)
    assert total == 10_000


def test_sample_negatives_pool_too_small():
    with pytest.raises(GenerationError):
        sample_negatives([Triple("A", "r", "B")], ["A", "B"], 1, SeededRng(0))


def _facts_corpus(n_facts, n_na=0):
    insts = []
    for i in range(n_facts):
        for j in range(1 + i % 3):
            insts.append(SentenceInstance(["x", "y"], EntityMention(f"h{i}", 0, 1), EntityMention(f"t{i}", 1, 2), "r"))
    for i in range(n_na):
        insts.append(SentenceInstance(["x", "y"], EntityMention(f"n{i}", 0, 1), EntityMention(f"m{i}", 1, 2), NA))
    return insts


def test_split_sizes_floor_then_train():
    train, valid, test = split(_facts_corpus(10), (0.6, 0.2, 0.2), SeededRng(0))
    assert [len(facts_of(x)) for x in (train, valid, test)] == [6, 2, 2]
    train, valid, test = split(_facts_corpus(11), (0.6, 0.2, 0.2), SeededRng(0))
    assert [len(facts_of(x)) for x in (train, valid, test)] == [7, 2, 2]


def test_split_single_fact_and_determinism():
    parts = split(_facts_corpus(1), (0.6, 0.2, 0.2), SeededRng(3))
    assert sorted(len(p) > 0 for p in parts) == [False, False, True]
    a = split(_facts_corpus(30, 12), (0.5, 0.25, 0.25), SeededRng(9))
    b = split(_facts_corpus(30, 12), (0.5, 0.25, 0.25), SeededRng(9))
    assert a == b


def test_split_errors():
    with pytest.raises(ValueError):
        split([], (0.6, 0.2, 0.2), SeededRng(0))
    with pytest.raises(ValueError):
        split(_facts_corpus(3), (0.6, 0.6, 0.2), SeededRng(0))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.integers(0, 20), st.integers(0, 10_000))
def test_split_disjoint_and_sentences_follow_facts(n_facts, n_na, seed):
    insts = _facts_corpus(n_facts, n_na)
    parts = split(insts, (0.7, 0.15, 0.15), SeededRng(seed))
    pair_sets = [{i.pair for i in p} for p in parts]
    for a, b in itertools.combinations(pair_sets, 2):
        assert not a & b
    assert sum(len(p) for p in parts) == len(insts)


def _bags(pairs):
    return {p: Bag(p, list(range(n)), ("r",)) for p, n in pairs.items()}


def test_extract_paths_simple():
    paths = extract_paths(_bags({("A", "E1"): 1, ("E1", "B"): 1, ("A", "E2"): 1}), pairs=[("A", "B")])
    assert paths[("A", "B")] == [PathRecord("A", "E1", "B")]
    assert paths[("A", "E2")] == []


def test_extract_paths_cap_ranking():
    sizes = {("A", "E1"): 5, ("E1", "B"): 1, ("A", "E2"): 2, ("E2", "B"): 2, ("A", "E3"): 4, ("E3", "B"): 3,
             ("A", "E4"): 2, ("E4", "B"): 9, ("A", "E5"): 1, ("E5", "B"): 1}
    paths = extract_paths(_bags(sizes), max_paths_per_pair=3, pairs=[("A", "B")])
    # min sizes: E1 1, E2 2, E3 3, E4 2, E5 1 -> E3, then E2/E4 tie by id
    assert [p.mid for p in paths[("A", "B")]] == ["E3", "E2", "E4"]


def brute_force_paths(bags, pairs, cap):
    ents = sorted({e for key in bags for e in key})
    out = {}
    for h, t in pairs:
        cands = []
        for e in ents:
            if e in (h, t):
                continue
            if (h, e) in bags and (e, t) in bags and len(bags[(h, e)]) and len(bags[(e, t)]):
                cands.append((-min(len(bags[(h, e)]), len(bags[(e, t)])), e))
        cands.sort()
        out[(h, t)] = [PathRecord(h, e, t) for _, e in cands[:cap]]
    return out


@pytest.mark.parametrize("seed", range(5))
def test_extract_paths_matches_double_loop(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(20, 200))
    ents = [f"e{i:03d}" for i in range(n)]
    pairs = {}
    for _ in range(n * 4):
        a, b = rng.choice(n, 2, replace=False)
        pairs[(ents[a], ents[b])] = int(rng.integers(1, 5))
    bags = _bags(pairs)
    got = extract_paths(bags, max_paths_per_pair=4)
    assert got == brute_force_paths(bags, sorted(bags), 4)


def test_build_vocab_strict_threshold():
    vocab = build_vocab([["a", "a", "b"]], min_count=1)
    assert vocab.itos == ["<pad>", "<unk>", "a"]
    assert len(build_vocab([["a", "a", "b"]], min_count=0)) == 4
    assert vocab.index("zzz") == Vocabulary.unk_index
    assert vocab.pad_index != vocab.unk_index


def test_vocab_roundtrip_and_hash(tmp_path):
    vocab = build_vocab([["b", "a", "a", "c"]], min_count=0)
    vocab.save(tmp_path / "v.txt")
    again = Vocabulary.load(tmp_path / "v.txt")
    assert again.itos == vocab.itos
    assert again.hash64() == vocab.hash64()
    assert Vocabulary(["x"]).hash64() != vocab.hash64()


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_embeddings_full_coverage(tmp_path):
    vocab = Vocabulary(["a", "b"])
    f = _write(tmp_path / "e.txt", "2 3\na 1 2 3\nb 4 5 6\n")
    table, stats = load_embeddings(f, vocab, 3, SeededRng(0))
    assert stats.missing == 0 and stats.found == 2
    np.testing.assert_array_equal(table[vocab.index("b")], [4, 5, 6])
    assert not table[vocab.pad_index].any()


def test_load_embeddings_empty_file_random_rows(tmp_path):
    vocab = Vocabulary(["a", "b"])
    f = _write(tmp_path / "e.txt", "0 4\n")
    table, stats = load_embeddings(f, vocab, 4, SeededRng(0))
    assert stats.missing == 2 and stats.found == 0
    assert np.all(np.abs(table) <= 0.25 / 4)
    assert table[2].any()


def test_load_embeddings_duplicate_last_wins(tmp_path, caplog):
    vocab = Vocabulary(["a"])
    f = _write(tmp_path / "e.txt", "2 2\na 1 1\na 2 3\n")
    with caplog.at_level(logging.WARNING):
        table, stats = load_embeddings(f, vocab, 2, SeededRng(0))
    np.testing.assert_array_equal(table[vocab.index("a")], [2, 3])
    assert stats.duplicates == 1
    assert "repeated" in caplog.text


def test_load_embeddings_errors(tmp_path):
    vocab = Vocabulary(["a"])
    with pytest.raises(DimensionError):
        load_embeddings(_write(tmp_path / "d.txt", "1 5\n"), vocab, 4, SeededRng(0))
    with pytest.raises(ParseError, match="line 3"):
        load_embeddings(_write(tmp_path / "m.txt", "2 2\na 1 1\nb 1\n"), vocab, 2, SeededRng(0))


def test_file_roundtrips(tmp_path):
    insts = _facts_corpus(3, 2)
    write_sentences(tmp_path / "s.jsonl", insts)
    assert read_sentences(tmp_path / "s.jsonl") == insts
    paths = {("A", "B"): [PathRecord("A", "E", "B")], ("C", "D"): []}
    write_paths(tmp_path / "p.jsonl", paths)
    assert read_paths(tmp_path / "p.jsonl") == {("A", "B"): [PathRecord("A", "E", "B")]}
    (tmp_path / "t.tsv").write_text("A\tr\tB\nC\ts\tD\n")
    assert read_triples(tmp_path / "t.tsv") == [Triple("A", "r", "B"), Triple("C", "s", "D")]
    assert relation_inventory(read_triples(tmp_path / "t.tsv")) == [NA, "r", "s"]


def test_build_bags_from_split_file_keeps_duplicate_sentences():
    m = (EntityMention("A", 0, 1), EntityMention("B", 1, 2))
    insts = [SentenceInstance(["A", "B"], *m, "r1"), SentenceInstance(["A", "B"], *m, "r1"),
             SentenceInstance(["A", "B"], *m, "r2"), SentenceInstance(["A", "B"], *m, "r2")]
    bag = build_bags(insts)[("A", "B")]
    assert bag.sentences == [0, 1] and bag.relations == ("r1", "r2")
