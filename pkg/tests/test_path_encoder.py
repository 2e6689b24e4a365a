import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pathrex.numkernel import GradBuffer, ParamStore, finite_diff_check
from pathrex.path_encoder import (
    HopAssignment,
    aggregate_paths,
    infer_hop_relation,
    path_backward,
    path_logits,
    path_prob_table,
    path_relation_prob,
    path_score,
)


def test_zero_distance_relation_wins():
    R = np.array([[0.25, 0.5], [0.5, -0.75], [0.75, -0.25], [2.0, 2.0]])
    p = path_relation_prob(0, 1, R)
    assert path_logits(0, 1, R)[2] == 0
    assert np.argmax(p) == 2


def test_identical_embeddings_uniform():
    np.testing.assert_allclose(path_relation_prob(0, 1, np.ones((4, 3))), [0.25] * 4)


def test_hand_evaluated_one_dimensional_case():
    R = np.array([[0.0], [1.0], [3.0]])
    np.testing.assert_array_equal(path_logits(0, 1, R), [-1.0, 0.0, -2.0])
    z = 1 + math.exp(-1) + math.exp(-2)
    np.testing.assert_allclose(path_relation_prob(0, 1, R), [math.exp(-1) / z, 1 / z, math.exp(-2) / z], atol=1e-15)


@given(st.integers(0, 10_000))
def test_logits_nonpositive_and_argmax_is_nearest(seed):
    rng = np.random.default_rng(seed)
    R = rng.normal(size=(6, 4))
    a, b = rng.integers(6, size=2)
    o = path_logits(a, b, R)
    assert np.all(o <= 0)
    p = path_relation_prob(a, b, R)
    assert abs(p.sum() - 1) < 1e-9
    dists = [np.abs(R[i] - (R[a] + R[b])).sum() for i in range(6)]
    assert np.argmax(p) == int(np.argmin(dists))


def test_prob_table_matches_pairwise():
    R = np.random.default_rng(0).normal(size=(5, 3))
    T = path_prob_table(R)
    for a in range(5):
        for b in range(5):
            np.testing.assert_allclose(T[a, b], path_relation_prob(a, b, R), atol=1e-14)


def test_infer_hop_gold_and_greedy():
    probs = np.array([[0.9, 0.05, 0.05], [0.2, 0.2, 0.6]])
    hop = infer_hop_relation(probs, "greedy")
    assert (hop.relation, hop.confidence, hop.source) == (2, 0.6, "predicted")
    assert hop.sentence == 1
    gold = infer_hop_relation(np.array([[0.1, 0.7, 0.2]]), "gold", gold=(1,))
    assert (gold.relation, gold.confidence, gold.source) == (1, 0.7, "gold")
    assert infer_hop_relation(probs, "gold", gold=(0,)) is None


def test_infer_hop_degenerate_inventory_and_ties():
    probs = np.array([[0.99, 0.01]])
    assert infer_hop_relation(probs, "greedy").relation == 1
    assert infer_hop_relation(np.array([[0.2, 0.4, 0.4]]), "greedy").relation == 1


def test_path_score_examples():
    R = np.random.default_rng(3).normal(size=(4, 2))
    p = path_relation_prob(1, 2, R)
    one = path_score(3, HopAssignment(1, 1.0, "gold"), HopAssignment(2, 1.0, "gold"), R)
    assert one == pytest.approx(p[3])
    R = np.zeros((2, 1))
    R[1] = 10.0  # p(0 | 0, 0) = 1/(1+e^-10)
    p0 = path_relation_prob(0, 0, R)[0]
    assert path_score(0, HopAssignment(0, 0.5, "gold"), HopAssignment(0, 0.5, "gold"), R) == pytest.approx(0.25 * p0)


def test_path_score_hand_product():
    # E_A = E_B = 0.5 and p = 0.8 -> 0.2; build R so that p(c | a, b) = 0.8 exactly
    # with two relations: p0 = 1 / (1 + exp(o1 - o0)) = 0.8 -> o0 - o1 = ln 4
    R = np.array([[0.0], [math.log(4)]])
    p = path_relation_prob(0, 0, R)
    assert p[0] == pytest.approx(0.8)
    assert path_score(0, HopAssignment(0, 0.5, "gold"), HopAssignment(0, 0.5, "gold"), R) == pytest.approx(0.2)


@given(st.floats(1e-6, 1 - 1e-6), st.floats(1e-6, 1 - 1e-6), st.integers(0, 1000))
def test_path_score_bounds(ea, eb, seed):
    R = np.random.default_rng(seed).normal(size=(3, 2))
    g = path_score(1, HopAssignment(0, ea, "gold"), HopAssignment(2, eb, "gold"), R)
    assert 0 < g < 1
    assert g <= min(ea, eb)


def test_aggregate_paths():
    assert aggregate_paths([0.1, 0.7, 0.3]) == 0.7
    assert aggregate_paths([]) == 0
    assert aggregate_paths([0.42]) == 0.42


@given(st.lists(st.floats(0, 1), max_size=20))
def test_aggregate_equals_explicit_max(scores):
    best = 0.0
    for s in scores:
        if s > best:
            best = s
    assert aggregate_paths(scores) == best


@pytest.mark.parametrize("seed", range(4))
def test_path_backward_finite_differences(seed):
    rng = np.random.default_rng(seed)
    store = ParamStore(np.float64)
    store.add("rel", rng.normal(size=(3, 4)))
    ha = HopAssignment(0, 0.7, "gold")
    hb = HopAssignment(1, 0.4, "gold")
    r = 2

    def loss(s):
        return math.log(path_score(r, ha, hb, s["rel"]))

    g = path_score(r, ha, hb, store["rel"])
    buf = GradBuffer()
    d_ea, d_eb = path_backward(r, ha, hb, store["rel"], 1.0 / g, buf)
    buf.merge_into(store)
    assert finite_diff_check(loss, store, 1e-6) < 1e-4
    # d log G / d E_A = 1 / E_A
    assert d_ea == pytest.approx(1 / 0.7)
    assert d_eb == pytest.approx(1 / 0.4)


def test_path_backward_same_hop_relation():
    store = ParamStore(np.float64)
    store.add("rel", np.random.default_rng(9).normal(size=(3, 2)))
    h = HopAssignment(1, 0.5, "gold")
    buf = GradBuffer()
    path_backward(0, h, h, store["rel"], 1.0, buf)
    buf.merge_into(store)
    err = finite_diff_check(lambda s: path_score(0, h, h, s["rel"]), store, 1e-6)
    assert err < 1e-4


def test_l1_subgradient_zero_at_exact_match():
    R = np.array([[1.0, 2.0], [0.5, 1.0], [0.5, 1.0]])
    # R[0] == R[1] + R[2] in coordinate 0 and 1
    buf = GradBuffer()
    path_backward(1, HopAssignment(1, 0.5, "gold"), HopAssignment(2, 0.5, "gold"), R, 1.0, buf)
    dR = buf.dense["rel"]
    sgn = np.sign(R[0] - (R[1] + R[2]))
    assert not sgn.any()
    # relation 0's own row only receives the (zero) subgradient of its logit
    assert not dR[0].any()
