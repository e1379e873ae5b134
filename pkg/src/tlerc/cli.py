"""Command-line surface.

Subcommands: pretrain, export-context, train-erc, gridsearch, evaluate,
synth, subsample, profile-lexicon. All inputs arrive via flags; outputs
are deterministic given identical flags and seeds.
"""
from __future__ import annotations

import argparse
import json
import sys
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import (SynthConfig, Vocabulary, build_vocab,
                     generate_synthetic, lexicon_profile, load_corpus,
                     load_lemma_map, load_lexicon, save_corpus,
                     subsample_training)
from .erc import (ErcConfig, TrainableEncoderSpec,
                  TrainErcConfig, build_erc_model, checkpoint_from_erc,
                  erc_from_checkpoint, evaluate_metric, load_vector_file,
                  train_erc)
from .errors import ContractError
from .harness import GridCell, GridSpec, grid_search
from .hred import PretrainConfig, build_hred_model, pretrain, write_trace
from .metrics import aggregate_runs
from .transfer import (TransferSpec, apply_adaptation, context_subset_checkpoint,
                       init_target)

VARIANT_FLAGS = {"random": "random", "encoder": "encoder_only",
                 "encoder+context": "encoder_plus_context"}
ADAPT_FLAGS = {"finetune": "finetune_all", "freeze-enc": "freeze_encoder",
               "freeze-enc-ctx": "freeze_encoder_and_context"}


def _write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _cmd_pretrain(args):
    train = load_corpus(args.corpus)
    val = load_corpus(args.val)
    vocab = build_vocab(train, min_freq=args.min_freq)
    latent = args.latent if args.vhred else 0
    model = build_hred_model(vocab, hidden=args.hidden, embed=args.embed,
                             seed=args.seed, latent_dim=latent)
    result = pretrain(model, train, val,
                      PretrainConfig(epochs=args.epochs, lr=args.lr,
                                     optimizer=args.optimizer,
                                     batch_size=args.batch, seed=args.seed))
    save_checkpoint(result.checkpoint, args.out)
    write_trace(result.trace, str(args.out) + ".trace.jsonl")
    print(f"saved {result.checkpoint.kind} checkpoint to {args.out} "
          f"(best epoch {result.best_epoch})")


def _cmd_export_context(args):
    ckpt = load_checkpoint(args.ckpt)
    subset = context_subset_checkpoint(ckpt)
    save_checkpoint(subset, args.out)
    print(f"exported {len(subset.params)} context tensors to {args.out}")


def _build_target_model(args, train_corpus, source_ckpt, seed):
    labels = tuple(train_corpus.labels())
    if not labels:
        raise ContractError("training corpus has no labeled utterances")
    if source_ckpt is not None:
        hidden = int(source_ckpt.config["hidden"])
        embed = int(source_ckpt.config["embed"])
        latent = int(source_ckpt.config.get("latent_dim", 0))
    else:
        hidden, embed, latent = args.hidden, args.embed, 0
    config = ErcConfig(hidden=hidden, labels=labels, dropout=args.dropout,
                       latent_dim=latent)
    if args.vectors:
        encoder = load_vector_file(args.vectors)
    elif source_ckpt is not None:
        vocab = Vocabulary.from_dict(source_ckpt.config["vocab"],
                                     source_ckpt.config.get("min_freq", 1))
        encoder = TrainableEncoderSpec(vocab=vocab, embed=embed, hidden=hidden)
    else:
        vocab = build_vocab(train_corpus, min_freq=1)
        encoder = TrainableEncoderSpec(vocab=vocab, embed=embed, hidden=hidden)
    return build_erc_model(config, encoder, seed=seed)


def _cmd_train_erc(args):
    train = load_corpus(args.corpus)
    val = load_corpus(args.val)
    test = load_corpus(args.test)
    variant = VARIANT_FLAGS[args.variant]
    adaptation = ADAPT_FLAGS[args.adapt]
    source = load_checkpoint(args.source) if args.source else None
    if variant != "random" and source is None and not args.vectors:
        raise ContractError(f"variant {args.variant!r} needs --source or --vectors")

    if args.fraction < 1.0:
        train = subsample_training(train, args.fraction, seed=0)
    seeds = ([int(s) for s in args.seeds.split(",") if s] if args.seeds
             else list(range(args.runs)))
    if len(seeds) < args.runs:
        raise ContractError(f"need {args.runs} seeds, got {len(seeds)}")
    seeds = seeds[: args.runs]
    exclude = tuple(s for s in args.exclude_labels.split(",") if s)

    runs = []
    best_run = None
    best_model_ckpt = None
    for seed in seeds:
        model = _build_target_model(args, train, source, seed)
        init_target(model, TransferSpec(
            variant, source=None if variant == "random" else source), seed=seed)
        mask = apply_adaptation(model, adaptation)
        config = TrainErcConfig(lr=args.lr, optimizer=args.optimizer,
                                batch_size=args.batch, seed=seed,
                                max_epochs=args.epochs, patience=10, test=test,
                                exclude_labels=exclude, freeze_mask=mask)
        result = train_erc(model, train, val, config)
        runs.append(result)
        if best_run is None or result.best_val_loss < best_run.best_val_loss:
            best_run = result
            best_model_ckpt = checkpoint_from_erc(model)

    agg = aggregate_runs([r.metric_value for r in runs], seeds=seeds,
                         best_epochs=[r.best_epoch for r in runs])
    report = {
        "variant": args.variant,
        "adaptation": args.adapt,
        "fraction": args.fraction,
        "exclude_labels": list(exclude),
        "runs": [r.to_dict() for r in runs],
        "aggregate": agg.to_dict(),
    }
    _write_json(report, args.out)
    save_checkpoint(best_model_ckpt, str(args.out) + ".ckpt")
    print(f"mean metric {agg.mean:.4f} over {len(runs)} runs "
          f"(mean best epoch {agg.mean_best_epoch:.1f}); report at {args.out}")


def _cmd_gridsearch(args):
    if args.grid != "default":
        raise ContractError(f"unknown grid {args.grid!r}")
    train = load_corpus(args.corpus)
    val = load_corpus(args.val)
    labels = tuple(train.labels())
    vocab = build_vocab(train, min_freq=1)
    grid = GridSpec()

    def train_cell(cell: GridCell) -> float:
        config = ErcConfig(hidden=args.hidden, labels=labels, dropout=cell.dropout)
        model = build_erc_model(
            config, TrainableEncoderSpec(vocab=vocab, embed=args.embed,
                                         hidden=args.hidden), seed=0)
        result = train_erc(model, train, val,
                           TrainErcConfig(lr=cell.lr, optimizer=cell.optimizer,
                                          batch_size=cell.batch_size, seed=0,
                                          max_epochs=args.epochs, patience=5))
        value, _ = evaluate_metric(model, val)
        return value

    result = grid_search(grid, train_cell)
    _write_json(result.to_dict(), args.out)
    best = result.best
    print(f"best cell: lr={best.lr} optimizer={best.optimizer} "
          f"batch={best.batch_size} dropout={best.dropout}")


def _cmd_evaluate(args):
    ckpt = load_checkpoint(args.ckpt)
    model = erc_from_checkpoint(ckpt)
    corpus = load_corpus(args.corpus)
    exclude = tuple(s for s in args.exclude_labels.split(",") if s)
    if args.metric == "wf":
        value, detail = evaluate_metric(model, corpus, exclude=exclude)
        print(f"weighted_f {value:.6f}")
        for lab, scores in sorted(detail["per_class"].items()):
            print(f"class {lab}\tprecision {scores['precision']:.4f}"
                  f"\trecall {scores['recall']:.4f}\tf1 {scores['f1']:.4f}"
                  f"\tsupport {scores['support']}")
    else:
        value, detail = evaluate_metric(model, corpus)
        for dim, r in sorted(detail.items()):
            print(f"pearson_r {dim}\t{r:.6f}")


def _cmd_synth(args):
    with open(args.config, "r", encoding="utf-8") as fh:
        config = SynthConfig.from_dict(json.load(fh))
    corpus = generate_synthetic(config)
    save_corpus(corpus, args.out)
    print(f"wrote {corpus.n_dialogues} conversations "
          f"({corpus.n_utterances} utterances) to {args.out}")


def _cmd_subsample(args):
    corpus = load_corpus(args.corpus)
    subset = subsample_training(corpus, args.fraction, seed=args.seed)
    save_corpus(subset, args.out)
    print(f"kept {subset.n_dialogues}/{corpus.n_dialogues} dialogues")


def _cmd_profile_lexicon(args):
    corpus = load_corpus(args.corpus)
    vocab = build_vocab(corpus, min_freq=args.min_freq)
    lexicon = load_lexicon(args.lexicon)
    lemmas = load_lemma_map(args.lemmas) if args.lemmas else None
    counts, matched = lexicon_profile(vocab, lexicon, lemmas)
    print(f"vocabulary_tokens\t{len(vocab.regular_tokens())}")
    print(f"matched_tokens\t{matched}")
    for tag in sorted(counts):
        print(f"{tag}\t{counts[tag]}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tlerc")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train the generative source model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--hidden", type=int, required=True)
    p.add_argument("--embed", type=int, required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=("adam", "rmsprop"), default="adam")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--vhred", action="store_true")
    p.add_argument("--latent", type=int, default=8)
    p.add_argument("--min-freq", type=int, default=1, dest="min_freq")
    p.set_defaults(fn=_cmd_pretrain)

    p = sub.add_parser("export-context", help="export the transfer subset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_export_context)

    p = sub.add_parser("train-erc", help="train the emotion classifier")
    p.add_argument("--corpus", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--variant", choices=tuple(VARIANT_FLAGS), required=True)
    p.add_argument("--source")
    p.add_argument("--vectors")
    p.add_argument("--adapt", choices=tuple(ADAPT_FLAGS), default="finetune")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--seeds", default="")
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--exclude-labels", default="", dest="exclude_labels")
    p.add_argument("--out", required=True)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--embed", type=int, default=12)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=("adam", "rmsprop"), default="adam")
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--epochs", type=int, default=300)
    p.set_defaults(fn=_cmd_train_erc)

    p = sub.add_parser("gridsearch", help="hyper-parameter grid search")
    p.add_argument("--corpus", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--grid", default="default")
    p.add_argument("--out", required=True)
    p.add_argument("--hidden", type=int, default=12)
    p.add_argument("--embed", type=int, default=10)
    p.add_argument("--epochs", type=int, default=30)
    p.set_defaults(fn=_cmd_gridsearch)

    p = sub.add_parser("evaluate", help="score a trained classifier")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--metric", choices=("wf", "pearson"), required=True)
    p.add_argument("--exclude-labels", default="", dest="exclude_labels")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("synth", help="generate a planted-dynamics corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("subsample", help="label-stratified dialogue subset")
    p.add_argument("--corpus", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_subsample)

    p = sub.add_parser("profile-lexicon", help="emotion-lexicon vocabulary profile")
    p.add_argument("--corpus", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--lemmas")
    p.add_argument("--min-freq", type=int, default=5, dest="min_freq")
    p.set_defaults(fn=_cmd_profile_lexicon)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (ContractError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
