"""Target task: per-utterance emotion classification or dimensional
regression over a conversation.

Sentence encoding is pluggable: either a trainable bi-GRU over the
corpus vocabulary or fixed vectors loaded from a file (the stand-in for
frozen pre-trained sentence encoders). The context encoder is the same
GRU-plus-projection as the source task, so its recurrent weights can be
received from a pre-trained checkpoint.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint
from .corpus import Conversation, Corpus, Vocabulary
from .errors import (ContractError, FormatError, NumericOverflowError,
                     SchemaError, TrainingDiverged)
from .metrics import pearson_r, weighted_fscore
from .optim import OptimizerState, optimizer_step
from .params import ParameterSet, glorot_uniform
from .rnn import (ContextParams, EncoderParams, context_step, encode_sentence,
                  init_context, init_encoder)
from .tensor import (Tape, Tensor, backward, concat, constant, cross_entropy,
                     linear, mse, mul, mul_scalar, sum_tensors, zeros)


# ---------------------------------------------------------------------------
# sentence-encoder plugins


class TrainableEncoderPlugin:
    """Bi-GRU sentence encoder trained with the rest of the model."""

    kind = "trainable"

    def __init__(self, vocab: Vocabulary, enc: EncoderParams):
        self.vocab = vocab
        self.enc = enc

    @property
    def output_dim(self) -> int:
        return self.enc.output_dim

    def encode(self, conv: Conversation, index: int) -> Tensor:
        ids = self.vocab.encode(conv.utterances[index].tokens)
        return encode_sentence(ids, self.enc)


class ExternalVectorPlugin:
    """Fixed sentence vectors keyed by (conversation id, utterance index)."""

    kind = "external"

    def __init__(self, dim: int, table: dict, path: str | None = None):
        self.dim = int(dim)
        self.table = table
        self.path = path

    @property
    def output_dim(self) -> int:
        return self.dim

    def encode(self, conv: Conversation, index: int) -> Tensor:
        key = (conv.id, index)
        vec = self.table.get(key)
        if vec is None:
            raise KeyError(f"no sentence vector for conversation {conv.id!r} utterance {index}")
        return Tensor(vec)


def load_vector_file(path) -> ExternalVectorPlugin:
    """Header 'dim<TAB>d', then 'conv<TAB>index<TAB>v1 v2 ... vd' records."""
    table = {}
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if dim is None:
                if len(parts) != 2 or parts[0] != "dim":
                    raise FormatError(f"line {line_no}: expected header 'dim<TAB>N'")
                dim = int(parts[1])
                continue
            if len(parts) != 3:
                raise FormatError(f"line {line_no}: expected conv<TAB>index<TAB>values")
            values = np.array([float(v) for v in parts[2].split()], dtype=np.float64)
            if values.shape[0] != dim:
                raise FormatError(
                    f"line {line_no}: vector has {values.shape[0]} values, header says {dim}"
                )
            table[(parts[0], int(parts[1]))] = values
    if dim is None:
        raise FormatError(f"{path}: missing 'dim' header line")
    return ExternalVectorPlugin(dim=dim, table=table, path=os.fspath(path))


def save_vector_file(table: dict, dim: int, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim\t{dim}\n")
        for (conv_id, idx) in sorted(table):
            vec = table[(conv_id, idx)]
            fh.write(f"{conv_id}\t{idx}\t{' '.join(repr(float(v)) for v in vec)}\n")


@dataclass
class TrainableEncoderSpec:
    """Recipe for building a trainable sentence encoder inside a model."""
    vocab: Vocabulary
    embed: int
    hidden: int


# ---------------------------------------------------------------------------
# model


@dataclass
class ErcConfig:
    hidden: int
    task: str = "classification"
    labels: tuple[str, ...] = ()
    dims: tuple[str, ...] = ()
    dropout: float = 0.0
    latent_dim: int = 0

    def __post_init__(self):
        if self.task not in ("classification", "regression"):
            raise ContractError(f"unknown task {self.task!r}")
        if self.task == "classification" and not self.labels:
            raise ContractError("classification needs a label inventory")
        if self.task == "regression" and not self.dims:
            raise ContractError("regression needs dimension names")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must lie in [0, 1), got {self.dropout}")


@dataclass
class LatentHead:
    """Prior MLPs carried over from a variational source model; the target
    uses the prior mean deterministically."""
    prior_mu_w: Tensor
    prior_mu_b: Tensor
    prior_sigma_w: Tensor
    prior_sigma_b: Tensor

    @property
    def latent_dim(self) -> int:
        return self.prior_mu_w.shape[0]


@dataclass
class ErcModel:
    config: ErcConfig
    plugin: TrainableEncoderPlugin | ExternalVectorPlugin
    context: ContextParams
    params: ParameterSet
    head_w: Tensor | None = None
    head_b: Tensor | None = None
    heads: dict[str, tuple[Tensor, Tensor]] = field(default_factory=dict)
    latent: LatentHead | None = None

    @property
    def label_index(self) -> dict[str, int]:
        return {lab: i for i, lab in enumerate(self.config.labels)}


def build_erc_model(config: ErcConfig, encoder, seed: int) -> ErcModel:
    """``encoder`` is a TrainableEncoderSpec or an ExternalVectorPlugin."""
    params = ParameterSet()
    rng = np.random.default_rng(seed)
    if isinstance(encoder, TrainableEncoderSpec):
        enc_params = init_encoder(params, encoder.vocab.size, encoder.embed,
                                  encoder.hidden, rng)
        plugin = TrainableEncoderPlugin(encoder.vocab, enc_params)
    elif isinstance(encoder, ExternalVectorPlugin):
        plugin = encoder
    else:
        raise ContractError(f"unsupported encoder {type(encoder).__name__}")

    context = init_context(params, plugin.output_dim, config.hidden, rng)
    latent = None
    if config.latent_dim > 0:
        latent = LatentHead(
            prior_mu_w=params.add("context/prior_mu_W",
                                  glorot_uniform(rng, (config.latent_dim, config.hidden))),
            prior_mu_b=params.add("context/prior_mu_b", np.zeros(config.latent_dim)),
            prior_sigma_w=params.add("context/prior_sigma_W",
                                     glorot_uniform(rng, (config.latent_dim, config.hidden))),
            prior_sigma_b=params.add("context/prior_sigma_b", np.zeros(config.latent_dim)),
        )
    head_in = config.hidden + config.latent_dim
    model = ErcModel(config=config, plugin=plugin, context=context, params=params,
                     latent=latent)
    if config.task == "classification":
        k = len(config.labels)
        model.head_w = params.add("head/W", glorot_uniform(rng, (k, head_in)))
        model.head_b = params.add("head/b", np.zeros(k))
    else:
        for dim in config.dims:
            w = params.add(f"head/{dim}/W", glorot_uniform(rng, (1, head_in)))
            b = params.add(f"head/{dim}/b", np.zeros(1))
            model.heads[dim] = (w, b)
    return model


# ---------------------------------------------------------------------------
# forward / loss / predict


def _dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, constant(mask))


def erc_forward(model: ErcModel, conv: Conversation, train: bool = False,
                rng: np.random.Generator | None = None) -> list[Tensor]:
    """Per-turn logits (classification) or stacked regression outputs.

    Position t depends only on utterances up to t. Dropout applies only
    when ``train`` is true and the model's rate is positive.
    """
    if len(conv) == 0:
        raise ContractError("conversation is empty")
    rate = model.config.dropout if train else 0.0
    if rate > 0.0 and rng is None:
        raise ContractError("training with dropout needs a random generator")

    outputs = []
    h = zeros(model.config.hidden)
    for t in range(len(conv)):
        vec = model.plugin.encode(conv, t)
        if rate > 0.0:
            vec = _dropout(vec, rate, rng)
        h = context_step(vec, h, model.context)
        head_in = h
        if model.latent is not None:
            # deterministic prior mean; the latent scale is left untouched
            z = linear(h, model.latent.prior_mu_w, model.latent.prior_mu_b)
            head_in = concat(h, z)
        if rate > 0.0:
            head_in = _dropout(head_in, rate, rng)
        if model.config.task == "classification":
            outputs.append(linear(head_in, model.head_w, model.head_b))
        else:
            parts = [linear(head_in, w, b) for w, b in
                     (model.heads[d] for d in model.config.dims)]
            out = parts[0]
            for p in parts[1:]:
                out = concat(out, p)
            outputs.append(out)
    return outputs


def _target_vector(model: ErcModel, utt) -> np.ndarray | None:
    if utt.targets is None:
        return None
    if any(d not in utt.targets for d in model.config.dims):
        return None
    return np.array([utt.targets[d] for d in model.config.dims], dtype=np.float64)


def scored_turns(model: ErcModel, conv: Conversation) -> int:
    if model.config.task == "classification":
        return sum(1 for u in conv.utterances if u.label is not None)
    return sum(1 for u in conv.utterances if _target_vector(model, u) is not None)


def erc_loss(model: ErcModel, conv: Conversation, train: bool = False,
             rng: np.random.Generator | None = None) -> Tensor:
    """Summed per-turn loss; unlabeled turns shape the context but add no
    loss term."""
    outputs = erc_forward(model, conv, train=train, rng=rng)
    terms = []
    idx = model.label_index
    for t, utt in enumerate(conv.utterances):
        if model.config.task == "classification":
            if utt.label is None:
                continue
            if utt.label not in idx:
                raise ContractError(f"label {utt.label!r} not in model inventory")
            terms.append(cross_entropy(outputs[t], idx[utt.label]))
        else:
            target = _target_vector(model, utt)
            if target is None:
                continue
            terms.append(mse(outputs[t], constant(target)))
    if not terms:
        raise ContractError(f"conversation {conv.id!r} has no scored turns")
    return sum_tensors(terms)


def predict(model: ErcModel, conv: Conversation):
    """Deterministic inference: argmax labels (lowest index wins ties) or
    per-dimension regression values."""
    outputs = erc_forward(model, conv, train=False)
    if model.config.task == "classification":
        return [model.config.labels[int(np.argmax(o.data))] for o in outputs]
    return [{d: float(o.data[i]) for i, d in enumerate(model.config.dims)}
            for o in outputs]


# ---------------------------------------------------------------------------
# training with early stopping


class EarlyStopper:
    """Stop after ``patience`` consecutive epochs without improvement."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ContractError("patience must be positive")
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.epoch = 0
        self.bad = 0

    def update(self, loss: float) -> bool:
        """Record an epoch loss; returns True when training should stop."""
        self.epoch += 1
        if loss < self.best:
            self.best = loss
            self.best_epoch = self.epoch
            self.bad = 0
        else:
            self.bad += 1
        return self.bad >= self.patience


@dataclass
class TrainErcConfig:
    lr: float = 1e-3
    optimizer: str = "adam"
    batch_size: int = 8
    seed: int = 0
    max_epochs: int = 300
    patience: int = 10
    test: Corpus | None = None
    exclude_labels: tuple[str, ...] = ()
    fscore_mode: str = "weighted"
    freeze_mask: frozenset = frozenset()


@dataclass
class RunResult:
    seed: int
    best_epoch: int
    best_val_loss: float
    train_trace: list[float]
    val_trace: list[float]
    metric_value: float | None = None
    eval_detail: dict | None = None
    snapshot: dict | None = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "train_trace": self.train_trace,
            "val_trace": self.val_trace,
            "metric_value": self.metric_value,
            "eval_detail": self.eval_detail,
        }


def evaluate_loss(model: ErcModel, corpus: Corpus) -> float:
    """Mean per-scored-utterance loss, no dropout, no gradient recording."""
    total = 0.0
    turns = 0
    for conv in corpus:
        n = scored_turns(model, conv)
        if n == 0:
            continue
        total += erc_loss(model, conv).item()
        turns += n
    if turns == 0:
        raise ContractError("no scored utterances in corpus")
    return total / turns


def evaluate_metric(model: ErcModel, corpus: Corpus, exclude=(),
                    fscore_mode: str = "weighted"):
    """(scalar metric, detail dict) on a test corpus with the current params."""
    if model.config.task == "classification":
        gold, pred = [], []
        for conv in corpus:
            labels = predict(model, conv)
            for utt, p in zip(conv.utterances, labels):
                if utt.label is not None:
                    gold.append(utt.label)
                    pred.append(p)
        result = weighted_fscore(gold, pred, exclude=exclude, mode=fscore_mode)
        return result.value, result.to_dict()
    by_dim_gold = {d: [] for d in model.config.dims}
    by_dim_pred = {d: [] for d in model.config.dims}
    for conv in corpus:
        values = predict(model, conv)
        for utt, v in zip(conv.utterances, values):
            target = _target_vector(model, utt)
            if target is None:
                continue
            for i, d in enumerate(model.config.dims):
                by_dim_gold[d].append(float(target[i]))
                by_dim_pred[d].append(v[d])
    detail = {d: pearson_r(by_dim_gold[d], by_dim_pred[d]) for d in model.config.dims}
    value = sum(detail.values()) / len(detail)
    return value, detail


def train_erc(model: ErcModel, train: Corpus, val: Corpus,
              config: TrainErcConfig) -> RunResult:
    """Minibatch training with patience-based early stopping.

    The returned result carries the 1-based best epoch, full loss traces,
    the best parameter snapshot (already restored into the model), and
    test metrics computed with that snapshot when a test corpus is given.
    """
    convs = [c for c in train if scored_turns(model, c) > 0]
    if not convs:
        raise ContractError("training corpus has no scored utterances")
    rng = np.random.default_rng(config.seed)
    state = OptimizerState(config.optimizer, config.lr)
    stopper = EarlyStopper(config.patience)

    best_values = model.params.snapshot()
    best_val = float("inf")
    train_trace: list[float] = []
    val_trace: list[float] = []
    step = 0

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(convs))
        epoch_loss = 0.0
        epoch_turns = 0
        for start in range(0, len(order), config.batch_size):
            batch = [convs[int(i)] for i in order[start:start + config.batch_size]]
            step += 1
            try:
                with Tape():
                    losses = [erc_loss(model, conv, train=True, rng=rng)
                              for conv in batch]
                    loss = mul_scalar(sum_tensors(losses), 1.0 / len(batch))
                grads = backward(loss, model.params)
            except NumericOverflowError as e:
                raise TrainingDiverged(f"non-finite loss at step {step}: {e}") from e
            epoch_loss += loss.item() * len(batch)
            epoch_turns += sum(scored_turns(model, c) for c in batch)
            optimizer_step(state, model.params, grads, config.freeze_mask)
        train_trace.append(epoch_loss / max(1, epoch_turns))
        val_loss = evaluate_loss(model, val)
        val_trace.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_values = model.params.snapshot()
        if stopper.update(val_loss):
            break

    model.params.restore(best_values)
    result = RunResult(seed=config.seed, best_epoch=stopper.best_epoch,
                       best_val_loss=stopper.best, train_trace=train_trace,
                       val_trace=val_trace, snapshot=best_values)
    if config.test is not None:
        value, detail = evaluate_metric(model, config.test,
                                        exclude=config.exclude_labels,
                                        fscore_mode=config.fscore_mode)
        result.metric_value = value
        result.eval_detail = detail
    return result


# ---------------------------------------------------------------------------
# checkpointing


def checkpoint_from_erc(model: ErcModel) -> Checkpoint:
    cfg = {
        "task": model.config.task,
        "labels": list(model.config.labels),
        "dims": list(model.config.dims),
        "hidden": model.config.hidden,
        "dropout": model.config.dropout,
        "latent_dim": model.config.latent_dim,
    }
    if model.plugin.kind == "trainable":
        cfg["encoder"] = {
            "mode": "trainable",
            "vocab": model.plugin.vocab.to_dict(),
            "min_freq": model.plugin.vocab.min_freq,
            "embed": model.plugin.enc.embedding.shape[1],
            "hidden": model.plugin.enc.fwd.hidden_dim,
        }
    else:
        cfg["encoder"] = {"mode": "external", "dim": model.plugin.dim,
                          "path": model.plugin.path}
    return Checkpoint(kind="erc", config=cfg, params=model.params.snapshot())


def erc_from_checkpoint(ckpt: Checkpoint,
                        vectors: ExternalVectorPlugin | None = None) -> ErcModel:
    if ckpt.kind != "erc":
        raise SchemaError(f"expected an erc checkpoint, got kind {ckpt.kind!r}")
    cfg = ckpt.config
    config = ErcConfig(hidden=cfg["hidden"], task=cfg["task"],
                       labels=tuple(cfg["labels"]), dims=tuple(cfg["dims"]),
                       dropout=cfg.get("dropout", 0.0),
                       latent_dim=cfg.get("latent_dim", 0))
    enc = cfg["encoder"]
    if enc["mode"] == "trainable":
        encoder = TrainableEncoderSpec(
            vocab=Vocabulary.from_dict(enc["vocab"], enc.get("min_freq", 1)),
            embed=enc["embed"], hidden=enc["hidden"])
    else:
        if vectors is not None:
            encoder = vectors
        elif enc.get("path") and os.path.exists(enc["path"]):
            encoder = load_vector_file(enc["path"])
        else:
            raise SchemaError(
                "external-vector checkpoint needs the vector file "
                f"(recorded path: {enc.get('path')!r})"
            )
        if encoder.dim != enc["dim"]:
            raise SchemaError(f"vector dim {encoder.dim} != checkpoint dim {enc['dim']}")
    model = build_erc_model(config, encoder, seed=0)
    missing = [n for n in model.params.names() if n not in ckpt.params]
    if missing:
        raise SchemaError(f"checkpoint is missing parameters: {missing}")
    model.params.restore(ckpt.params)
    return model
