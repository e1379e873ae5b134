"""GRU cells, bi-directional sentence encoder, context encoder with a
dense projection, and the auto-regressive decoder with beam search.

The context update is, per step with input s and previous state h:

    z = sigmoid(Vz.s + Wz.h + bz)
    r = sigmoid(Vr.s + Wr.h + br)
    v = tanh(Vh.s + Wh.(h * r) + bh)
    h' = (1 - z) * v + z * h          # z gates the previous state
    out = tanh(Wp.h' + bp)            # projection, context encoder only
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import BOS_ID, EOS_ID, PAD_ID
from .errors import ContractError, DimensionError, FormatError
from .params import ParameterSet, glorot_uniform
from .tensor import (Tensor, add, concat, embed_lookup, gru_gate, linear, mul,
                     one_minus, sigmoid, tanh, zeros)


@dataclass
class GruParams:
    v_z: Tensor
    v_r: Tensor
    v_h: Tensor
    w_z: Tensor
    w_r: Tensor
    w_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    def __post_init__(self):
        shapes_v = {self.v_z.shape, self.v_r.shape, self.v_h.shape}
        shapes_w = {self.w_z.shape, self.w_r.shape, self.w_h.shape}
        shapes_b = {self.b_z.shape, self.b_r.shape, self.b_h.shape}
        if len(shapes_v) != 1 or len(shapes_w) != 1 or len(shapes_b) != 1:
            raise DimensionError("GRU gate groups must share dimensions")

    @property
    def input_dim(self) -> int:
        return self.v_z.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.v_z.shape[0]


@dataclass
class ContextParams:
    gru: GruParams
    w_p: Tensor
    b_p: Tensor

    def __post_init__(self):
        h = self.gru.hidden_dim
        if self.w_p.shape != (h, h) or self.b_p.shape != (h,):
            raise DimensionError(
                f"projection {self.w_p.shape}/{self.b_p.shape} must match hidden size {h}"
            )

    @property
    def hidden_dim(self) -> int:
        return self.gru.hidden_dim


@dataclass
class EncoderParams:
    embedding: Tensor
    fwd: GruParams
    bwd: GruParams

    def __post_init__(self):
        if self.fwd.hidden_dim != self.bwd.hidden_dim:
            raise DimensionError("forward and backward hidden sizes must match")

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def output_dim(self) -> int:
        return 2 * self.fwd.hidden_dim


@dataclass
class DecoderParams:
    gru: GruParams
    embedding: Tensor
    out_w: Tensor
    out_b: Tensor
    bridge_w: Tensor
    bridge_b: Tensor

    def __post_init__(self):
        if self.out_w.shape[0] != self.embedding.shape[0]:
            raise DimensionError("output projection rows must equal vocabulary size")

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]


# ---------------------------------------------------------------------------
# parameter construction


def init_gru(params: ParameterSet, prefix: str, input_dim: int, hidden_dim: int,
             rng: np.random.Generator) -> GruParams:
    def mat(name):
        return params.add(f"{prefix}/{name}", glorot_uniform(rng, (hidden_dim, input_dim)))

    def rec(name):
        return params.add(f"{prefix}/{name}", glorot_uniform(rng, (hidden_dim, hidden_dim)))

    def bias(name):
        return params.add(f"{prefix}/{name}", np.zeros(hidden_dim))

    return GruParams(
        v_z=mat("V_z"), v_r=mat("V_r"), v_h=mat("V_h"),
        w_z=rec("W_z"), w_r=rec("W_r"), w_h=rec("W_h"),
        b_z=bias("b_z"), b_r=bias("b_r"), b_h=bias("b_h"),
    )


def init_context(params: ParameterSet, input_dim: int, hidden_dim: int,
                 rng: np.random.Generator, prefix: str = "context") -> ContextParams:
    gru = init_gru(params, prefix, input_dim, hidden_dim, rng)
    w_p = params.add(f"{prefix}/W_p", glorot_uniform(rng, (hidden_dim, hidden_dim)))
    b_p = params.add(f"{prefix}/b_p", np.zeros(hidden_dim))
    return ContextParams(gru=gru, w_p=w_p, b_p=b_p)


def init_encoder(params: ParameterSet, vocab_size: int, embed_dim: int,
                 hidden_dim: int, rng: np.random.Generator,
                 prefix: str = "encoder") -> EncoderParams:
    embedding = params.add(f"{prefix}/embedding",
                           glorot_uniform(rng, (vocab_size, embed_dim)))
    fwd = init_gru(params, f"{prefix}/fwd", embed_dim, hidden_dim, rng)
    bwd = init_gru(params, f"{prefix}/bwd", embed_dim, hidden_dim, rng)
    return EncoderParams(embedding=embedding, fwd=fwd, bwd=bwd)


def init_decoder(params: ParameterSet, vocab_size: int, embed_dim: int,
                 hidden_dim: int, context_dim: int, rng: np.random.Generator,
                 prefix: str = "decoder", embedding: Tensor | None = None) -> DecoderParams:
    if embedding is None:
        embedding = params.add(f"{prefix}/embedding",
                               glorot_uniform(rng, (vocab_size, embed_dim)))
    gru = init_gru(params, prefix, embed_dim, hidden_dim, rng)
    bridge_w = params.add(f"{prefix}/bridge_W", glorot_uniform(rng, (hidden_dim, context_dim)))
    bridge_b = params.add(f"{prefix}/bridge_b", np.zeros(hidden_dim))
    out_w = params.add(f"{prefix}/out_W", glorot_uniform(rng, (vocab_size, hidden_dim)))
    out_b = params.add(f"{prefix}/out_b", np.zeros(vocab_size))
    return DecoderParams(gru=gru, embedding=embedding, out_w=out_w, out_b=out_b,
                         bridge_w=bridge_w, bridge_b=bridge_b)


# ---------------------------------------------------------------------------
# forward steps


def gru_step(x: Tensor, h_prev: Tensor, p: GruParams) -> Tensor:
    z = sigmoid(gru_gate(x, p.v_z, h_prev, p.w_z, p.b_z))
    r = sigmoid(gru_gate(x, p.v_r, h_prev, p.w_r, p.b_r))
    v = tanh(gru_gate(x, p.v_h, mul(h_prev, r), p.w_h, p.b_h))
    return add(mul(one_minus(z), v), mul(z, h_prev))


def context_step(h_enc: Tensor, h_prev: Tensor, p: ContextParams) -> Tensor:
    h = gru_step(h_enc, h_prev, p.gru)
    return tanh(linear(h, p.w_p, p.b_p))


def encode_sentence(token_ids, p: EncoderParams, mask_padding: bool = True) -> Tensor:
    """Concat of final forward and final backward hidden states.

    With ``mask_padding`` (the default) trailing PAD ids are ignored, so
    padded and unpadded inputs encode identically.
    """
    ids = list(token_ids)
    if mask_padding:
        while ids and ids[-1] == PAD_ID:
            ids.pop()
    if not ids:
        raise ContractError("encode_sentence needs a non-empty token sequence")
    vocab = p.vocab_size
    for i in ids:
        if not 0 <= i < vocab:
            raise IndexError(f"token id {i} out of vocabulary range [0, {vocab})")

    hidden = p.fwd.hidden_dim
    h_f = zeros(hidden)
    for i in ids:
        h_f = gru_step(embed_lookup(p.embedding, i), h_f, p.fwd)
    h_b = zeros(hidden)
    for i in reversed(ids):
        h_b = gru_step(embed_lookup(p.embedding, i), h_b, p.bwd)
    return concat(h_f, h_b)


def decoder_init_state(h_cxt: Tensor, p: DecoderParams) -> Tensor:
    return tanh(linear(h_cxt, p.bridge_w, p.bridge_b))


def decode_teacher_forced(h_cxt: Tensor, gold_ids, p: DecoderParams) -> list[Tensor]:
    """Per-position logits for gold_ids[1:], conditioned on the context
    vector (through the bridge) and the gold prefix."""
    gold = list(gold_ids)
    if len(gold) < 2 or gold[0] != BOS_ID or gold[-1] != EOS_ID:
        raise FormatError("gold sequence must start with BOS and end with EOS")
    h = decoder_init_state(h_cxt, p)
    logits = []
    for token in gold[:-1]:
        h = gru_step(embed_lookup(p.embedding, token), h, p.gru)
        logits.append(linear(h, p.out_w, p.out_b))
    return logits


# ---------------------------------------------------------------------------
# decoding


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    return z - np.log(np.exp(z).sum())


def _decoder_step_np(h: Tensor, token: int, p: DecoderParams):
    h_next = gru_step(embed_lookup(p.embedding, token), h, p.gru)
    logits = linear(h_next, p.out_w, p.out_b)
    return h_next, _log_softmax(logits.data)


def greedy_decode(h_cxt: Tensor, p: DecoderParams, max_len: int):
    """Argmax rollout (lowest index wins ties); returns (ids, log-prob)."""
    h = decoder_init_state(h_cxt, p)
    ids: list[int] = []
    score = 0.0
    token = BOS_ID
    for _ in range(max_len):
        h, lp = _decoder_step_np(h, token, p)
        token = int(np.argmax(lp))
        score += float(lp[token])
        ids.append(token)
        if token == EOS_ID:
            break
    return ids, score


def beam_decode(h_cxt: Tensor, p: DecoderParams, beam_width: int, max_len: int,
                length_normalize: bool = False):
    """Best completed hypothesis under summed token log-probabilities.

    A hypothesis is complete when it emits EOS or reaches ``max_len``.
    The greedy rollout is always kept in the candidate pool, so the
    returned score never falls below the greedy score. Deterministic:
    ties prefer lower token indices, then earlier discovery.
    """
    if beam_width < 1 or max_len < 1:
        raise ContractError("beam_width and max_len must be positive")
    h0 = decoder_init_state(h_cxt, p)
    live = [(0.0, (), h0)]
    completed: list[tuple[float, tuple]] = []
    for _ in range(max_len):
        candidates = []
        for score, ids, h in live:
            h_next, lp = _decoder_step_np(h, ids[-1] if ids else BOS_ID, p)
            for tok in range(lp.shape[0]):
                candidates.append((score + float(lp[tok]), ids + (tok,), h_next))
        candidates.sort(key=lambda c: -c[0])
        live = []
        for score, ids, h in candidates[:beam_width]:
            if ids[-1] == EOS_ID:
                completed.append((score, ids))
            else:
                live.append((score, ids, h))
        if not live:
            break
    completed.extend((score, ids) for score, ids, _ in live)

    if beam_width > 1:
        g_ids, g_score = greedy_decode(h_cxt, p, max_len)
        completed.append((g_score, tuple(g_ids)))

    def rank(entry):
        score, ids = entry
        return score / len(ids) if length_normalize else score

    best_score, best_ids = completed[0][0], completed[0][1]
    best_rank = rank(completed[0])
    for entry in completed[1:]:
        r = rank(entry)
        if r > best_rank:
            best_rank = r
            best_score, best_ids = entry
    return list(best_ids), (best_rank if length_normalize else best_score)
