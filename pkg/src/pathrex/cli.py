"""``pathrex`` command line: corpus building through evaluation.

Every command reads a flat ``key = value`` config (``--config``), applies
flag overrides, writes its outputs plus the effective ``config.cfg`` into
``--out`` and prints a one-line summary. Exit codes: 0 success,
1 validation error, 2 I/O error, 3 numeric failure.
"""

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

from .config import load_config
from .corpus import (
    NA,
    Vocabulary,
    align,
    build_vocab,
    extract_paths,
    load_embeddings,
    read_jsonl,
    read_paths,
    read_sentences,
    read_triples,
    relation_inventory,
    sample_negatives,
    split,
    write_paths,
    write_sentences,
)
from .errors import CheckpointFormatError, ConfigError, DivergenceError, PathrexError
from .evaluation import (
    gold_facts,
    longtail_slice,
    max_f1,
    na_fraction,
    noise_slice,
    p_at_fractions,
    pr_curve,
    probe_features,
    rank_predictions,
    write_pr_csv,
    write_pr_svg,
    write_summary_csv,
    zero_shot_probe,
)
from .joint import PathModel, TextData, load_checkpoint, train
from .numkernel import SeededRng

logger = logging.getLogger("pathrex")

SPLITS = ("train", "valid", "test")
GRAD_TOL = 1e-4


class UsageError(PathrexError, ValueError):
    pass


def _require(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return path


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args):
    cfg = load_config(_require(args.config) if args.config else None)
    overrides = {name: getattr(args, name, None) for name in ("seed", "threads", "beta", "bag_mode", "hop_mode",
                                                                "epochs", "lr", "min_count", "neg_ratio")}
    return cfg.replace(**overrides)


# ---------------------------------------------------------------------------
# corpus artifacts


def _load_split(corpus, name):
    return read_sentences(_require(Path(corpus) / f"{name}.jsonl"))


def _load_corpus(corpus):
    corpus = Path(corpus)
    vocab = Vocabulary.load(_require(corpus / "vocab.txt"))
    relations = _require(corpus / "relations.txt").read_text(encoding="utf-8").split()
    splits = {name: _load_split(corpus, name) for name in SPLITS}
    return vocab, relations, splits


def cmd_build_corpus(args, cfg):
    kb = read_triples(_require(args.triples))
    sentences = read_jsonl(_require(args.sentences))
    rng = SeededRng(cfg.seed).child("corpus")
    entities = sorted({t.head for t in kb} | {t.tail for t in kb})
    negatives = sample_negatives(kb, entities, cfg.neg_ratio, rng.child("negatives")) if cfg.neg_ratio > 0 else []
    if args.negatives:
        negatives = sorted(set(negatives) | set(read_triples(_require(args.negatives))))
    result = align(kb, sentences, negatives, cfg.max_len)
    if not result.instances:
        raise UsageError("no sentence mentions a KB or negative pair")
    parts = dict(zip(SPLITS, split(result.instances, cfg.split_ratios, rng)))
    out = _out_dir(args)
    for name, instances in parts.items():
        write_sentences(out / f"{name}.jsonl", instances)
    vocab = build_vocab([i.tokens for i in parts["train"]], cfg.min_count)
    vocab.save(out / "vocab.txt")
    relations = relation_inventory(kb)
    (out / "relations.txt").write_text("\n".join(relations) + "\n", encoding="utf-8")
    stats = dict(result.stats)
    stats.update(
        triples=len(kb), negatives=len(negatives), sentences_in=len(sentences), skipped=result.skipped,
        vocab=len(vocab), relations=len(relations),
        **{f"{name}_sentences": len(v) for name, v in parts.items()},
        **{f"{name}_facts": len(gold_facts(v)) for name, v in parts.items()},
    )
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    cfg.dump(out / "config.cfg")
    sizes = ", ".join(f"{n}={len(v)}" for n, v in parts.items())
    return f"build-corpus: {len(result.instances)} instances ({sizes}) -> {out}"


def cmd_extract_paths(args, cfg):
    vocab, relations, splits = _load_corpus(args.corpus)
    train_bags = TextData(splits["train"], vocab, relations).bags
    all_bags = TextData(splits["train"] + splits["valid"] + splits["test"], vocab, relations).bags
    train_paths = extract_paths(train_bags, cfg.path_cap)
    eval_pairs = sorted({i.pair for name in ("valid", "test") for i in splits[name]})
    eval_paths = extract_paths(all_bags, cfg.path_cap, pairs=eval_pairs)
    out = _out_dir(args)
    write_paths(out / "paths_train.jsonl", train_paths)
    write_paths(out / "paths_eval.jsonl", eval_paths)
    cfg.dump(out / "config.cfg")
    n_train = sum(map(len, train_paths.values()))
    n_eval = sum(map(len, eval_paths.values()))
    return f"extract-paths: {n_train} training paths, {n_eval} evaluation paths -> {out}"


def _paths(args, name):
    where = Path(args.paths or args.corpus) / name
    return read_paths(_require(where))


def cmd_train(args, cfg):
    vocab, relations, splits = _load_corpus(args.corpus)
    data = TextData(splits["train"], vocab, relations)
    paths = _paths(args, "paths_train.jsonl") if cfg.beta > 0 else {}
    rng = SeededRng(cfg.seed).child("init", "words")
    table = None
    if args.embeddings:
        table, stats = load_embeddings(_require(args.embeddings), vocab, cfg.d_w, rng)
        logger.info("embeddings: %d found, %d missing", stats.found, stats.missing)
    model = PathModel.create(cfg.encoder(len(relations)), cfg.d_r, len(vocab), cfg.seed, table,
                             vocab_hash=vocab.hash64())
    out = _out_dir(args)
    cfg.dump(out / "config.cfg")
    ckpt = out / "model.pnre"
    log = open(out / "history.csv", "w", encoding="utf-8")
    log.write("epoch,J\n")
    try:
        history = train(model, data, paths, cfg.joint(), checkpoint=ckpt,
                        on_epoch=lambda e, J: (log.write(f"{e + 1},{J!r}\n"), log.flush()))
    finally:
        log.close()
    return f"train: {len(history)} epochs, final J={history[-1]:.6f} -> {ckpt}"


def _load_model(args, cfg, vocab, relations):
    model = load_checkpoint(_require(args.model), max_len=cfg.max_len, vocab_hash=vocab.hash64())
    if model.cfg.n_r != len(relations) or model.vocab_size != len(vocab):
        raise CheckpointFormatError(f"{args.model}: checkpoint does not match the corpus")
    return model


def cmd_eval(args, cfg):
    vocab, relations, splits = _load_corpus(args.corpus)
    model = _load_model(args, cfg, vocab, relations)
    target = splits[args.split]
    context = splits["train"] + ([] if args.split == "train" else target)
    data = TextData(context, vocab, relations)
    pairs = sorted({i.pair for i in target})
    if args.split == "train":
        paths = _paths(args, "paths_train.jsonl")
    else:
        paths = extract_paths(data.bags, cfg.path_cap, pairs=pairs)
    gold = gold_facts(target)
    ranked = rank_predictions(model, data, paths, cfg.joint(), pairs=pairs)
    points = pr_curve(ranked, gold)
    metrics = {"max_f1": max_f1(points), "f1_operating_point": "max over ranked cutoffs"}
    for f, p in p_at_fractions(ranked, gold, cfg.p_at_total).items():
        metrics[f"p_at_{int(round(f * 100))}pct"] = p
    metrics.update(facts_ranked=len(ranked), gold_facts=len(gold), na_sentence_fraction=na_fraction(target))
    out = _out_dir(args)
    write_pr_csv(out / "pr.csv", points)
    write_summary_csv(out / "summary.csv", metrics)
    write_pr_svg(out / "pr.svg", {f"beta={cfg.beta}": points})
    cfg.dump(out / "config.cfg")
    return f"eval: max F1 {metrics['max_f1']:.4f} over {len(ranked)} ranked facts -> {out}"


def cmd_slice(args, cfg):
    corpus = Path(args.corpus)
    test = _load_split(corpus, args.split)
    if args.kind == "longtail":
        if args.n_s is None:
            raise UsageError("--n-s is required for a long-tail slice")
        part = longtail_slice(test, args.n_s)
    else:
        if args.target is None:
            raise UsageError("--target is required for a noise slice")
        part = noise_slice(test, args.target, SeededRng(cfg.seed).child("slice"))
    out = _out_dir(args)
    for name in ("train", "valid", "test", "vocab", "relations"):
        suffix = ".txt" if name in ("vocab", "relations") else ".jsonl"
        if name != args.split:
            shutil.copyfile(_require(corpus / f"{name}{suffix}"), out / f"{name}{suffix}")
    write_sentences(out / f"{args.split}.jsonl", part)
    cfg.dump(out / "config.cfg")
    return f"slice: {len(part)} of {len(test)} {args.split} sentences kept (NA fraction {na_fraction(part):.3f}) -> {out}"


def cmd_zero_shot(args, cfg):
    vocab, relations, splits = _load_corpus(args.corpus)
    model = _load_model(args, cfg, vocab, relations)
    data = TextData(splits["train"] + splits["valid"] + splits["test"], vocab, relations)
    jcfg = cfg.joint()
    sets = {}
    for name in ("train", "test"):
        labels = {}
        for inst in splits[name]:
            if inst.label != NA:
                labels.setdefault(inst.pair, data.rel_index[inst.label])
        pairs = sorted(labels)
        # the probe only sees hop sentences, never the pair's own bag
        paths = extract_paths(data.bags, cfg.path_cap, pairs=pairs)
        X, kept = probe_features(model, data, paths, jcfg, pairs)
        sets[name] = (X, [labels[p] for p in kept])
    acc = zero_shot_probe(*sets["train"], *sets["test"], len(relations), SeededRng(cfg.seed).child("probe"))
    out = _out_dir(args)
    write_summary_csv(out / "zero_shot.csv", {"accuracy": acc, "train_pairs": len(sets["train"][1]),
                                              "test_pairs": len(sets["test"][1])})
    cfg.dump(out / "config.cfg")
    return f"zero-shot: accuracy {acc:.4f} on {len(sets['test'][1])} pairs -> {out}"


def cmd_grad_check(args, cfg):
    from .gradcheck import full_pipeline_error

    worst = 0.0
    for bag_mode in ("max", "rand"):
        err = full_pipeline_error(seed=cfg.seed, beta=cfg.beta, bag_mode=bag_mode)
        logger.info("grad-check %s: %.3e", bag_mode, err)
        worst = max(worst, err)
    if not worst < GRAD_TOL:
        raise DivergenceError(f"max rel error {worst:.3e} >= {GRAD_TOL:g}")
    if args.out:
        out = _out_dir(args)
        write_summary_csv(out / "grad_check.csv", {"max_rel_error": worst})
        cfg.dump(out / "config.cfg")
    return f"grad-check: max rel error {worst:.3e} < {GRAD_TOL:g}"


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file (defaults when omitted)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", help="output directory")

    parser = argparse.ArgumentParser(prog="pathrex", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-corpus", parents=[common], help="align a KB with sentences and split")
    p.add_argument("--triples", required=True, help="TSV of head<TAB>relation<TAB>tail")
    p.add_argument("--sentences", required=True, help="JSON Lines sentences with entity mentions")
    p.add_argument("--negatives", help="extra TSV of corrupted triples to label as NA")
    p.add_argument("--neg-ratio", dest="neg_ratio", type=float)
    p.add_argument("--min-count", dest="min_count", type=int)
    p.set_defaults(func=cmd_build_corpus, out_required=True)

    p = sub.add_parser("extract-paths", parents=[common], help="precompute two-hop paths")
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_extract_paths, out_required=True)

    p = sub.add_parser("train", parents=[common], help="train a model and write a checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--paths", help="directory holding paths_train.jsonl (default: --corpus)")
    p.add_argument("--embeddings", help="word2vec text file for the word table")
    _model_flags(p)
    p.set_defaults(func=cmd_train, out_required=True)

    p = sub.add_parser("eval", parents=[common], help="held-out ranking metrics")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--paths", help="directory holding paths_train.jsonl (train split only)")
    p.add_argument("--split", choices=SPLITS, default="test")
    _model_flags(p)
    p.set_defaults(func=cmd_eval, out_required=True)

    p = sub.add_parser("slice", parents=[common], help="long-tail or noise slice of a split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--kind", choices=("longtail", "noise"), required=True)
    p.add_argument("--n-s", dest="n_s", type=int)
    p.add_argument("--target", type=float, help="NA sentence fraction for a noise slice")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.set_defaults(func=cmd_slice, out_required=True)

    p = sub.add_parser("zero-shot", parents=[common], help="logistic probe on hop sentence vectors")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    _model_flags(p)
    p.set_defaults(func=cmd_zero_shot, out_required=True)

    p = sub.add_parser("grad-check", parents=[common], help="finite-difference check of the full model")
    p.add_argument("--beta", type=float)
    p.set_defaults(func=cmd_grad_check, out_required=False)
    return parser


def _model_flags(p):
    p.add_argument("--beta", type=float)
    p.add_argument("--bag-mode", dest="bag_mode", choices=("max", "rand"))
    p.add_argument("--hop-mode", dest="hop_mode", choices=("greedy", "exhaustive"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)


def main(argv=None):
    level = os.environ.get("PATHREX_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.out_required and not args.out:
        parser.error(f"{args.command}: --out is required")
    try:
        cfg = _config(args)
        print(args.func(args, cfg))
        return 0
    except (FileNotFoundError, IsADirectoryError, PermissionError, CheckpointFormatError) as exc:
        print(f"pathrex {args.command}: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, FloatingPointError) as exc:
        print(f"pathrex {args.command}: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"pathrex {args.command}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"pathrex {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
