"""Adam and RMSprop updates over named parameter sets."""
from __future__ import annotations

import numpy as np

from .errors import ContractError
from .params import ParameterSet
from .tensor import GradientMap


class OptimizerState:
    """Per-parameter moment slots; frozen parameters never get slots.

    Adam uses beta1=0.9, beta2=0.999, eps=1e-8 with bias correction.
    RMSprop uses decay=0.9, eps=1e-8.
    """

    def __init__(self, kind: str, lr: float):
        kind = kind.lower()
        if kind not in ("adam", "rmsprop"):
            raise ContractError(f"unknown optimizer kind {kind!r}")
        self.kind = kind
        self.lr = float(lr)
        self.beta1 = 0.9
        self.beta2 = 0.999
        self.decay = 0.9
        self.eps = 1e-8
        self.step_count = 0
        self.slots: dict[str, dict[str, np.ndarray]] = {}

    def _slot(self, name: str, shape) -> dict[str, np.ndarray]:
        s = self.slots.get(name)
        if s is None:
            if self.kind == "adam":
                s = {"m": np.zeros(shape), "v": np.zeros(shape)}
            else:
                s = {"ms": np.zeros(shape)}
            self.slots[name] = s
        return s


def optimizer_step(state: OptimizerState, params: ParameterSet,
                   grads: GradientMap, freeze_mask=frozenset()):
    """Apply one update in place; masked parameters are skipped entirely."""
    state.step_count += 1
    t = state.step_count
    for name, tensor in params.items():
        if name in freeze_mask:
            continue
        g_t = grads.get(name)
        g = g_t.data if g_t is not None else np.zeros_like(tensor.data)
        if not np.isfinite(g).all():
            raise ContractError(f"non-finite gradient for parameter {name!r}")
        if g.shape != tensor.data.shape:
            raise ContractError(
                f"gradient shape {g.shape} does not match parameter {name!r} {tensor.data.shape}"
            )
        slot = state._slot(name, tensor.data.shape)
        if state.kind == "adam":
            slot["m"] = state.beta1 * slot["m"] + (1 - state.beta1) * g
            slot["v"] = state.beta2 * slot["v"] + (1 - state.beta2) * (g * g)
            m_hat = slot["m"] / (1 - state.beta1 ** t)
            v_hat = slot["v"] / (1 - state.beta2 ** t)
            tensor.data = tensor.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        else:
            slot["ms"] = state.decay * slot["ms"] + (1 - state.decay) * (g * g)
            tensor.data = tensor.data - state.lr * g / (np.sqrt(slot["ms"]) + state.eps)
    return params
