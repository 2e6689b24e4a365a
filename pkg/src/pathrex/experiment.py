"""Path model vs text-only baseline on the synthetic compositional benchmark."""

import logging
from dataclasses import dataclass, field

from .corpus import build_vocab, extract_paths
from .evaluation import gold_facts, longtail_slice, max_f1, noise_slice, pr_curve, rank_predictions
from .joint import JointConfig, PathModel, Scorer, TextData, train
from .numkernel import SeededRng
from .synthetic import COMPOSED, SyntheticConfig, make_benchmark
from .text_encoder import EncoderConfig

logger = logging.getLogger(__name__)

NOISE_TARGETS = (0.75, 0.85, 0.95)


@dataclass
class ExperimentConfig:
    d_w: int = 16
    d_p: int = 4
    d_c: int = 32
    d_r: int = 16
    max_len: int = 40
    lr: float = 0.05
    batch_size: int = 50
    epochs: int = 30
    beta: float = 0.5
    keep_prob: float = 0.5
    min_count: int = 3
    path_cap: int = 8
    benchmark: SyntheticConfig = field(default_factory=SyntheticConfig)


@dataclass
class RunResult:
    beta: float
    seed: int
    history: list
    heldout_f1: float
    full_f1: float
    longtail_f1: float
    noise_f1: dict


def _evaluate(model, train_data, test_instances, vocab, relations, cfg, exp, pairs=None):
    data = TextData(train_data.instances + list(test_instances), vocab, relations)
    test_pairs = sorted({i.pair for i in test_instances})
    paths = extract_paths(data.bags, exp.path_cap, pairs=test_pairs)
    scorer = Scorer(model, data, paths, cfg)
    return data, paths, scorer, test_pairs


def run_model(bench, seed, beta, exp=None):
    """Train one model on ``bench`` and measure every benchmark metric."""
    exp = exp or ExperimentConfig()
    vocab = build_vocab([i.tokens for i in bench.train], min_count=exp.min_count)
    ecfg = EncoderConfig(
        d_w=exp.d_w, d_p=exp.d_p, d_c=exp.d_c, k=3, n_r=len(bench.relations), max_len=exp.max_len
    )
    train_data = TextData(bench.train, vocab, bench.relations)
    # training paths only use train bags so no test label leaks in
    train_paths = extract_paths(train_data.bags, exp.path_cap)
    cfg = JointConfig(
        beta=beta, lr=exp.lr, batch_size=exp.batch_size, epochs=exp.epochs,
        keep_prob=exp.keep_prob, seed=seed,
    )
    model = PathModel.create(ecfg, exp.d_r, len(vocab), seed=seed, vocab_hash=vocab.hash64())
    history = train(model, train_data, train_paths, cfg)

    data, paths, scorer, test_pairs = _evaluate(model, train_data, bench.test, vocab, bench.relations, cfg, exp)
    heldout_gold = {(h, COMPOSED, t) for h, t in bench.heldout}
    ranked = rank_predictions(model, data, paths, cfg, pairs=test_pairs, relations=[COMPOSED], scorer=scorer)
    heldout_f1 = max_f1(pr_curve(ranked, heldout_gold))
    full = rank_predictions(model, data, paths, cfg, pairs=test_pairs, scorer=scorer)
    full_f1 = max_f1(pr_curve(full, gold_facts(bench.test)))

    tail = longtail_slice(bench.test, 1)
    tail_pairs = sorted({i.pair for i in tail})
    # a pair's bag may shrink when only part of its sentences survive the slice
    data_t, paths_t, scorer_t, _ = _evaluate(model, train_data, tail, vocab, bench.relations, cfg, exp)
    ranked_t = rank_predictions(model, data_t, paths_t, cfg, pairs=tail_pairs, scorer=scorer_t)
    longtail_f1 = max_f1(pr_curve(ranked_t, gold_facts(tail)))

    noise = {}
    for target in NOISE_TARGETS:
        part = noise_slice(bench.test, target, SeededRng(seed).child("noise-eval"))
        data_n, paths_n, scorer_n, pairs_n = _evaluate(model, train_data, part, vocab, bench.relations, cfg, exp)
        ranked_n = rank_predictions(model, data_n, paths_n, cfg, pairs=pairs_n, scorer=scorer_n)
        noise[target] = max_f1(pr_curve(ranked_n, gold_facts(part)))
    result = RunResult(beta, seed, history, heldout_f1, full_f1, longtail_f1, noise)
    logger.info("seed %d beta %g: %s", seed, beta, result)
    return result


def run_pair(seed, exp=None):
    """``(path model result, text-only result)`` on the benchmark drawn from ``seed``."""
    exp = exp or ExperimentConfig()
    bench = make_benchmark(seed, exp.benchmark)
    return run_model(bench, seed, exp.beta, exp), run_model(bench, seed, 0.0, exp)
