"""Source task: hierarchical conversation modeling.

Per turn t the model encodes utterance t, advances the context state and
teacher-forces the decoder on utterance t+1; conversation NLL is the sum
of token cross-entropies over every predicted position. The variational
variant augments the context vector with a latent draw before decoding.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import BOS_ID, EOS_ID, Conversation, Corpus, Vocabulary, truncate_conversation
from .errors import ContractError, NumericOverflowError, SchemaError, TrainingDiverged
from .optim import OptimizerState, optimizer_step
from .params import ParameterSet, glorot_uniform
from .rnn import (ContextParams, DecoderParams, EncoderParams, context_step,
                  decode_teacher_forced, encode_sentence, init_context,
                  init_decoder, init_encoder)
from .tensor import (Tape, Tensor, add, add_scalar, backward, concat, constant,
                     cross_entropy, div, linear, log, mul, mul_scalar, softplus,
                     sub, sum_tensors, vsum, zeros)
from .checkpoint import Checkpoint

log_ = logging.getLogger(__name__)


@dataclass
class VhredExtras:
    """Prior MLPs producing the latent mean and Softplus-floored scale."""
    prior_mu_w: Tensor
    prior_mu_b: Tensor
    prior_sigma_w: Tensor
    prior_sigma_b: Tensor

    @property
    def latent_dim(self) -> int:
        return self.prior_mu_w.shape[0]


@dataclass
class PosteriorParams:
    """Recognition MLPs conditioned on [context ; encoded next utterance]."""
    mu_w: Tensor
    mu_b: Tensor
    sigma_w: Tensor
    sigma_b: Tensor


@dataclass
class HredConfig:
    vocab_size: int
    hidden: int
    embed: int
    latent_dim: int = 0
    max_tokens: int = 30
    max_turns: int = 10

    def to_dict(self):
        return {
            "vocab_size": self.vocab_size,
            "hidden": self.hidden,
            "embed": self.embed,
            "latent_dim": self.latent_dim,
            "max_tokens": self.max_tokens,
            "max_turns": self.max_turns,
        }


@dataclass
class HredModel:
    config: HredConfig
    vocab: Vocabulary
    params: ParameterSet
    encoder: EncoderParams
    context: ContextParams
    decoder: DecoderParams
    extras: VhredExtras | None = None
    posterior: PosteriorParams | None = None

    @property
    def kind(self) -> str:
        return "vhred" if self.extras is not None else "hred"


def build_hred_model(vocab: Vocabulary, hidden: int, embed: int, seed: int,
                     latent_dim: int = 0, max_tokens: int = 30,
                     max_turns: int = 10) -> HredModel:
    config = HredConfig(vocab_size=vocab.size, hidden=hidden, embed=embed,
                        latent_dim=latent_dim, max_tokens=max_tokens, max_turns=max_turns)
    rng = np.random.default_rng(seed)
    params = ParameterSet()
    encoder = init_encoder(params, vocab.size, embed, hidden, rng)
    context = init_context(params, 2 * hidden, hidden, rng)
    extras = None
    posterior = None
    if latent_dim > 0:
        extras = VhredExtras(
            prior_mu_w=params.add("context/prior_mu_W", glorot_uniform(rng, (latent_dim, hidden))),
            prior_mu_b=params.add("context/prior_mu_b", np.zeros(latent_dim)),
            prior_sigma_w=params.add("context/prior_sigma_W", glorot_uniform(rng, (latent_dim, hidden))),
            prior_sigma_b=params.add("context/prior_sigma_b", np.zeros(latent_dim)),
        )
        post_in = hidden + 2 * hidden
        posterior = PosteriorParams(
            mu_w=params.add("posterior/mu_W", glorot_uniform(rng, (latent_dim, post_in))),
            mu_b=params.add("posterior/mu_b", np.zeros(latent_dim)),
            sigma_w=params.add("posterior/sigma_W", glorot_uniform(rng, (latent_dim, post_in))),
            sigma_b=params.add("posterior/sigma_b", np.zeros(latent_dim)),
        )
    decoder = init_decoder(params, vocab.size, embed, hidden,
                           context_dim=hidden + latent_dim, rng=rng)
    return HredModel(config=config, vocab=vocab, params=params, encoder=encoder,
                     context=context, decoder=decoder, extras=extras, posterior=posterior)


SIGMA_FLOOR = 1e-6


def _gaussian_params(x: Tensor, mu_w, mu_b, sigma_w, sigma_b):
    mu = linear(x, mu_w, mu_b)
    sigma = add_scalar(softplus(linear(x, sigma_w, sigma_b)), SIGMA_FLOOR)
    return mu, sigma


def vhred_context(h_cxt: Tensor, extras: VhredExtras,
                  rng: np.random.Generator | None) -> Tensor:
    """[h_cxt ; z] with z = mu + sigma * eps; rng=None pins eps to zero."""
    mu, sigma = _gaussian_params(h_cxt, extras.prior_mu_w, extras.prior_mu_b,
                                 extras.prior_sigma_w, extras.prior_sigma_b)
    if rng is None:
        z = mu
    else:
        eps = constant(rng.standard_normal(extras.latent_dim))
        z = add(mu, mul(sigma, eps))
    return concat(h_cxt, z)


def gaussian_kl(mu_q: Tensor, sigma_q: Tensor, mu_p: Tensor, sigma_p: Tensor) -> Tensor:
    """KL(q || p) for diagonal Gaussians, summed over dimensions."""
    t1 = sub(log(sigma_p), log(sigma_q))
    diff = sub(mu_q, mu_p)
    numer = add(mul(sigma_q, sigma_q), mul(diff, diff))
    t2 = div(numer, mul_scalar(mul(sigma_p, sigma_p), 2.0))
    return vsum(add_scalar(add(t1, t2), -0.5))


def _encode_ids(conv: Conversation, vocab: Vocabulary) -> list[list[int]]:
    return [vocab.encode(u.tokens) for u in conv.utterances]


def _decode_nll(h_dec_in: Tensor, target_ids: list[int], decoder: DecoderParams):
    gold = [BOS_ID] + target_ids + [EOS_ID]
    logits = decode_teacher_forced(h_dec_in, gold, decoder)
    terms = [cross_entropy(step_logits, gold[pos + 1])
             for pos, step_logits in enumerate(logits)]
    return sum_tensors(terms), len(logits)


def hred_nll(model: HredModel, conversation: Conversation) -> Tensor:
    """Summed token NLL over all predicted turns of one conversation."""
    nll, _ = conversation_nll(model, conversation)
    return nll


def conversation_nll(model: HredModel, conversation: Conversation,
                     latent_rng: np.random.Generator | None = None):
    """(total NLL tensor, predicted token count). Latent models use the
    prior mean unless a generator is supplied."""
    if len(conversation) < 2:
        raise ContractError(
            f"conversation {conversation.id!r} needs at least 2 utterances"
        )
    ids = _encode_ids(conversation, model.vocab)
    h_cxt = zeros(model.context.hidden_dim)
    terms = []
    count = 0
    for t in range(len(ids) - 1):
        sent = encode_sentence(ids[t], model.encoder)
        h_cxt = context_step(sent, h_cxt, model.context)
        dec_in = h_cxt
        if model.extras is not None:
            dec_in = vhred_context(h_cxt, model.extras, latent_rng)
        nll, n = _decode_nll(dec_in, ids[t + 1], model.decoder)
        terms.append(nll)
        count += n
    return sum_tensors(terms), count


def vhred_train_loss(model: HredModel, extras: VhredExtras,
                     posterior_params: PosteriorParams,
                     conversation: Conversation, kl_weight: float,
                     rng: np.random.Generator | None = None) -> Tensor:
    """Reconstruction NLL with a posterior latent draw, plus weighted KL."""
    if not 0.0 <= kl_weight <= 1.0:
        raise ContractError(f"kl_weight must lie in [0, 1], got {kl_weight}")
    if len(conversation) < 2:
        raise ContractError(
            f"conversation {conversation.id!r} needs at least 2 utterances"
        )
    ids = _encode_ids(conversation, model.vocab)
    h_cxt = zeros(model.context.hidden_dim)
    terms = []
    for t in range(len(ids) - 1):
        sent = encode_sentence(ids[t], model.encoder)
        h_cxt = context_step(sent, h_cxt, model.context)
        mu_p, sigma_p = _gaussian_params(h_cxt, extras.prior_mu_w, extras.prior_mu_b,
                                         extras.prior_sigma_w, extras.prior_sigma_b)
        next_enc = encode_sentence(ids[t + 1], model.encoder)
        post_in = concat(h_cxt, next_enc)
        mu_q, sigma_q = _gaussian_params(post_in, posterior_params.mu_w,
                                         posterior_params.mu_b,
                                         posterior_params.sigma_w,
                                         posterior_params.sigma_b)
        if rng is None:
            z = mu_q
        else:
            eps = constant(rng.standard_normal(extras.latent_dim))
            z = add(mu_q, mul(sigma_q, eps))
        nll, _ = _decode_nll(concat(h_cxt, z), ids[t + 1], model.decoder)
        term = nll
        if kl_weight > 0.0:
            term = add(term, mul_scalar(gaussian_kl(mu_q, sigma_q, mu_p, sigma_p), kl_weight))
        terms.append(term)
    return sum_tensors(terms)


def _usable(corpus: Corpus, max_tokens: int, max_turns: int) -> list[Conversation]:
    kept = []
    skipped = 0
    for conv in corpus:
        conv = truncate_conversation(conv, max_tokens, max_turns)
        if len(conv) < 2:
            skipped += 1
            continue
        kept.append(conv)
    if skipped:
        log_.warning("skipped %d single-utterance conversations", skipped)
    return kept


def perplexity(model: HredModel, corpus: Corpus) -> float:
    """exp(total NLL / total predicted tokens) over the corpus."""
    if len(corpus) == 0:
        raise ContractError("perplexity needs a non-empty corpus")
    convs = _usable(corpus, model.config.max_tokens, model.config.max_turns)
    if not convs:
        raise ContractError("no conversation has at least 2 utterances")
    total = 0.0
    count = 0
    for conv in convs:
        nll, n = conversation_nll(model, conv)
        total += nll.item()
        count += n
    return float(np.exp(total / count))


@dataclass
class PretrainConfig:
    epochs: int
    lr: float = 1e-3
    optimizer: str = "adam"
    batch_size: int = 8
    seed: int = 0
    kl_anneal_steps: int = 5000

    def to_dict(self):
        return {"epochs": self.epochs, "lr": self.lr, "optimizer": self.optimizer,
                "batch_size": self.batch_size, "seed": self.seed,
                "kl_anneal_steps": self.kl_anneal_steps}


@dataclass
class PretrainResult:
    checkpoint: Checkpoint
    best_epoch: int
    trace: list[dict] = field(default_factory=list)


def checkpoint_from_model(model: HredModel) -> Checkpoint:
    config = model.config.to_dict()
    config["vocab"] = model.vocab.to_dict()
    config["min_freq"] = model.vocab.min_freq
    return Checkpoint(kind=model.kind, config=config, params=model.params.snapshot())


def model_from_checkpoint(ckpt: Checkpoint) -> HredModel:
    if ckpt.kind not in ("hred", "vhred"):
        raise SchemaError(f"expected an hred/vhred checkpoint, got kind {ckpt.kind!r}")
    cfg = ckpt.config
    vocab = Vocabulary.from_dict(cfg["vocab"], cfg.get("min_freq", 1))
    model = build_hred_model(vocab, hidden=cfg["hidden"], embed=cfg["embed"], seed=0,
                             latent_dim=cfg.get("latent_dim", 0),
                             max_tokens=cfg.get("max_tokens", 30),
                             max_turns=cfg.get("max_turns", 10))
    missing = [n for n in model.params.names() if n not in ckpt.params]
    if missing:
        raise SchemaError(f"checkpoint is missing parameters: {missing}")
    model.params.restore(ckpt.params)
    return model


def pretrain(model: HredModel, train_corpus: Corpus, val_corpus: Corpus,
             config: PretrainConfig) -> PretrainResult:
    """Minibatch training; returns the snapshot with the lowest validation
    perplexity, its 1-based epoch index, and the full per-epoch trace."""
    convs = _usable(train_corpus, model.config.max_tokens, model.config.max_turns)
    if not convs and config.epochs > 0:
        raise ContractError("no trainable conversations")
    rng = np.random.default_rng(config.seed)
    state = OptimizerState(config.optimizer, config.lr)

    best_values = model.params.snapshot()
    best_ppl = float("inf")
    best_epoch = 0
    trace: list[dict] = []
    global_step = 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(convs))
        epoch_nll = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [convs[int(i)] for i in order[start:start + config.batch_size]]
            global_step += 1
            try:
                with Tape():
                    losses = []
                    for conv in batch:
                        if model.extras is not None:
                            kl_w = min(1.0, global_step / max(1, config.kl_anneal_steps))
                            losses.append(vhred_train_loss(model, model.extras,
                                                           model.posterior, conv,
                                                           kl_weight=kl_w, rng=rng))
                        else:
                            losses.append(hred_nll(model, conv))
                    loss = mul_scalar(sum_tensors(losses), 1.0 / len(batch))
                grads = backward(loss, model.params)
            except NumericOverflowError as e:
                raise TrainingDiverged(f"non-finite loss at step {global_step}: {e}") from e
            epoch_nll += loss.item() * len(batch)
            optimizer_step(state, model.params, grads)
        val_ppl = perplexity(model, val_corpus)
        trace.append({"epoch": epoch, "train_nll": epoch_nll / len(convs),
                      "val_perplexity": val_ppl})
        if val_ppl < best_ppl:
            best_ppl = val_ppl
            best_epoch = epoch
            best_values = model.params.snapshot()

    model.params.restore(best_values)
    ckpt = checkpoint_from_model(model)
    return PretrainResult(checkpoint=ckpt, best_epoch=best_epoch, trace=trace)


def write_trace(trace: list[dict], path):
    import json
    with open(path, "w", encoding="utf-8") as fh:
        for rec in trace:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")
