"""Named parameter collections and the finite-difference gradient oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tape, Tensor, backward


class ParameterSet:
    """Ordered name -> Tensor map; the unit of transfer, freezing and saving."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def __iter__(self):
        return iter(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return self._params.values()

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copy of every parameter's current values."""
        return {name: t.data.copy() for name, t in self._params.items()}

    def restore(self, values: dict[str, np.ndarray]):
        for name, t in self._params.items():
            v = values[name]
            if v.shape != t.data.shape:
                raise DimensionError(f"restore {name}: shape {v.shape} vs {t.data.shape}")
            t.data = np.array(v, dtype=np.float64)

    def set_value(self, name: str, value: np.ndarray):
        t = self._params[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != t.data.shape:
            raise DimensionError(f"set {name}: shape {value.shape} vs {t.data.shape}")
        t.data = value.copy()


def glorot_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    if len(shape) == 2:
        fan_out, fan_in = shape
    else:
        fan_out = fan_in = shape[0]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class FiniteDifferenceReport:
    max_rel_error: float
    passed: bool
    worst_parameter: str | None = None
    worst_index: int | None = None
    analytic: float = 0.0
    numeric: float = 0.0

    def __bool__(self):
        return self.passed


def finite_difference_check(f, params: ParameterSet, eps: float = 1e-5,
                            rel_tol: float = 1e-4) -> FiniteDifferenceReport:
    """Compare backward() against central differences, coordinate by coordinate.

    ``f`` maps the ParameterSet to a scalar Tensor and must be free of
    side effects; it is evaluated twice per coordinate with the parameter
    nudged by +-eps. Relative error is normalized by
    max(|analytic|, |numeric|, 1e-8), and the report carries the worst
    coordinate seen.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"eps must lie in [1e-7, 1e-3], got {eps}")

    with Tape():
        loss = f(params)
    grads = backward(loss, params)

    worst = FiniteDifferenceReport(max_rel_error=0.0, passed=True)
    for name, t in params.items():
        analytic = grads[name].data
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = f(params).item()
            flat[i] = keep - eps
            down = f(params).item()
            flat[i] = keep
            numeric = (up - down) / (2.0 * eps)
            a = float(analytic.reshape(-1)[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > worst.max_rel_error:
                worst.max_rel_error = rel
                worst.worst_parameter = name
                worst.worst_index = i
                worst.analytic = a
                worst.numeric = numeric
    worst.passed = worst.max_rel_error <= rel_tol
    return worst
