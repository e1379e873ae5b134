"""The frozen planted-dynamics benchmark.

A dyadic emotion process generates a large unlabeled source corpus and a
small labeled target corpus in a related but shifted domain (different
inertia/mirror mix, partially novel vocabulary). The source model is
pre-trained once; target classifiers are then trained under different
initialization variants and adaptation strategies with paired seeds.

Every constant here is frozen; the acceptance suite asserts trends on
exactly this configuration.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from .checkpoint import Checkpoint
from .corpus import Corpus, SynthConfig, Vocabulary, build_vocab, generate_synthetic, make_splits
from .erc import (ErcConfig, RunResult, TrainableEncoderSpec, TrainErcConfig,
                  build_erc_model, train_erc)
from .hred import PretrainConfig, build_hred_model, pretrain
from .transfer import TransferSpec, apply_adaptation, init_target

HIDDEN = 16
EMBED = 12
N_EMOTIONS = 6
VOCAB_SIZE = 72
TURNS = 6

_BASE = dict(turns=TURNS, vocab_size=VOCAB_SIZE, n_emotions=N_EMOTIONS,
             min_tokens=3, max_tokens=4, signal_strength=0.7)

SOURCE_GEN = SynthConfig(n_conversations=2000, seed=7001, inertia_prob=0.6,
                         mirror_prob=0.3, token_subrange=(0.0, 0.7), **_BASE)
TARGET_GEN = SynthConfig(n_conversations=190, seed=7002, inertia_prob=0.5,
                         mirror_prob=0.35, token_subrange=(0.1, 1.0), **_BASE)
VOCAB_PROBE_GEN = replace(TARGET_GEN, n_conversations=300, seed=7009)

SOURCE_TRAIN_CONFIG = PretrainConfig(epochs=8, lr=2e-3, batch_size=8, seed=100)
TARGET_TRAIN = TrainErcConfig(lr=3e-3, batch_size=8, max_epochs=45, patience=10)

N_TARGET_TRAIN = 100
N_TARGET_VAL = 30
PAIRED_SEEDS = tuple(range(10))
LABELS = tuple(f"e{i}" for i in range(N_EMOTIONS))


@dataclass
class BenchmarkWorld:
    vocab: Vocabulary
    source_checkpoint: Checkpoint
    source_trace: list
    train: Corpus
    val: Corpus
    test: Corpus


def build_world() -> BenchmarkWorld:
    """Generate both corpora and pre-train the source model once."""
    source = generate_synthetic(SOURCE_GEN)
    probe = generate_synthetic(VOCAB_PROBE_GEN)
    vocab = build_vocab(Corpus(list(source) + list(probe)), min_freq=1)
    src_train, src_val = make_splits(source, 0.1, seed=0)
    model = build_hred_model(vocab, hidden=HIDDEN, embed=EMBED,
                             seed=SOURCE_TRAIN_CONFIG.seed)
    result = pretrain(model, src_train, src_val, SOURCE_TRAIN_CONFIG)

    target = generate_synthetic(TARGET_GEN)
    train = Corpus(target.conversations[:N_TARGET_TRAIN])
    val = Corpus(target.conversations[N_TARGET_TRAIN:N_TARGET_TRAIN + N_TARGET_VAL])
    test = Corpus(target.conversations[N_TARGET_TRAIN + N_TARGET_VAL:])
    return BenchmarkWorld(vocab=vocab, source_checkpoint=result.checkpoint,
                          source_trace=result.trace, train=train, val=val,
                          test=test)


def build_target_model(world: BenchmarkWorld, seed: int):
    config = ErcConfig(hidden=HIDDEN, labels=LABELS)
    encoder = TrainableEncoderSpec(vocab=world.vocab, embed=EMBED, hidden=HIDDEN)
    return build_erc_model(config, encoder, seed=seed)


def run_target(world: BenchmarkWorld, variant: str, adaptation: str, seed: int,
               train: Corpus | None = None) -> RunResult:
    model = build_target_model(world, seed)
    source = None if variant == "random" else world.source_checkpoint
    init_target(model, TransferSpec(variant, source=source), seed=seed)
    mask = apply_adaptation(model, adaptation)
    config = replace(TARGET_TRAIN, seed=seed, freeze_mask=mask, test=world.test)
    return train_erc(model, train if train is not None else world.train,
                     world.val, config)
