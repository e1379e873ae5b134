"""Parameter transfer: the exported context subset, target initialization
variants, and freeze/fine-tune adaptation.

The transfer set is the context encoder's recurrent matrices, biases and
dense projection -- W_z, W_r, W_h, b_z, b_r, b_h, W_p, b_p -- plus, for
variational sources, the four prior-MLP tensors. The input matrices
V_{z,r,h} are deliberately excluded: they are re-initialized in the
target, which is what lets a source trained on one sentence-encoder
dimension feed a target using a different one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint  # noqa: F401
from .erc import ErcModel, TrainableEncoderPlugin
from .errors import ContractError, DimensionError, SchemaError
from .params import glorot_uniform

CONTEXT_TRANSFER_NAMES = (
    "context/W_z", "context/W_r", "context/W_h",
    "context/b_z", "context/b_r", "context/b_h",
    "context/W_p", "context/b_p",
)

PRIOR_TRANSFER_NAMES = (
    "context/prior_mu_W", "context/prior_mu_b",
    "context/prior_sigma_W", "context/prior_sigma_b",
)

VARIANTS = ("random", "encoder_only", "encoder_plus_context")
ADAPTATIONS = ("finetune_all", "freeze_encoder", "freeze_encoder_and_context")


@dataclass
class TransferSpec:
    variant: str
    source: Checkpoint | None = None
    adaptation: str = "finetune_all"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}")
        if self.adaptation not in ADAPTATIONS:
            raise ContractError(f"unknown adaptation {self.adaptation!r}")
        if self.variant == "random" and self.source is not None:
            raise ContractError("variant 'random' takes no source checkpoint")


def export_context_params(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    """The exact transferred subset of a source checkpoint.

    Eight tensors for plain sources; variational sources additionally
    carry the four prior-MLP tensors.
    """
    names = list(CONTEXT_TRANSFER_NAMES)
    if ckpt.kind == "vhred" or all(n in ckpt.params for n in PRIOR_TRANSFER_NAMES):
        names += list(PRIOR_TRANSFER_NAMES)
    missing = [n for n in names if n not in ckpt.params]
    if missing:
        raise SchemaError(f"checkpoint lacks expected context parameters: {missing}")
    return {n: ckpt.params[n].copy() for n in names}


def context_subset_checkpoint(ckpt: Checkpoint) -> Checkpoint:
    """Exported subset wrapped as a saveable checkpoint."""
    subset = export_context_params(ckpt)
    config = {"source_kind": ckpt.kind,
              "hidden": int(subset["context/W_z"].shape[0])}
    return Checkpoint(kind="context_subset", config=config, params=subset)


def init_target(model: ErcModel, spec: TransferSpec, seed: int) -> ErcModel:
    """(Re)initialize a target model under an initialization variant.

    Every parameter is first re-drawn deterministically from ``seed``
    (matrices Glorot-uniform, biases zero); transferred tensors are then
    overwritten from the source. Shape mismatches are rejected, never
    resized.
    """
    rng = np.random.default_rng(seed)
    for name, t in model.params.items():
        if t.data.ndim >= 2:
            t.data = glorot_uniform(rng, t.data.shape)
        else:
            t.data = np.zeros(t.data.shape)

    if spec.variant == "random":
        return model

    if spec.variant == "encoder_plus_context" and spec.source is None:
        raise ContractError("variant 'encoder_plus_context' needs a source checkpoint")

    if isinstance(model.plugin, TrainableEncoderPlugin):
        if spec.source is None:
            raise ContractError(
                "a trainable sentence encoder can only be pre-loaded from a source checkpoint"
            )
        enc_names = [n for n in model.params.names() if n.startswith("encoder/")]
        missing = [n for n in enc_names if n not in spec.source.params]
        if missing:
            raise SchemaError(f"source checkpoint lacks encoder parameters: {missing}")
        for n in enc_names:
            src = spec.source.params[n]
            if src.shape != model.params[n].data.shape:
                raise DimensionError(
                    f"encoder parameter {n}: source {src.shape} vs target "
                    f"{model.params[n].data.shape} (no silent resizing)"
                )
            model.params.set_value(n, src)

    if spec.variant == "encoder_plus_context":
        subset = export_context_params(spec.source)
        for n, src in subset.items():
            if n not in model.params:
                raise SchemaError(
                    f"target model has no slot for transferred parameter {n} "
                    "(latent dimensions must match the source)"
                )
            if src.shape != model.params[n].data.shape:
                raise DimensionError(
                    f"context parameter {n}: source {src.shape} vs target "
                    f"{model.params[n].data.shape} (no silent resizing)"
                )
            model.params.set_value(n, src)
    return model


def apply_adaptation(model: ErcModel, strategy: str) -> frozenset:
    """Trainable-parameter mask: names in the returned set stay fixed."""
    if strategy not in ADAPTATIONS:
        raise ContractError(f"unknown adaptation {strategy!r}")
    frozen: set[str] = set()
    if strategy in ("freeze_encoder", "freeze_encoder_and_context"):
        frozen.update(n for n in model.params.names() if n.startswith("encoder/"))
    if strategy == "freeze_encoder_and_context":
        frozen.update(n for n in CONTEXT_TRANSFER_NAMES if n in model.params)
        frozen.update(n for n in PRIOR_TRANSFER_NAMES if n in model.params)
    if len(frozen) >= len(model.params):
        raise ContractError("adaptation would freeze every parameter")
    mask = frozenset(frozen)
    for name in mask:
        model.params[name].requires_grad = False
    return mask
