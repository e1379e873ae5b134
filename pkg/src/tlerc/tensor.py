"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive computes eagerly on numpy arrays and, when a Tape is
active and an input is tracked, appends a backward closure to that tape.
Gradients are obtained by walking the tape once in reverse; a tape is
single-use. Shapes are restricted to scalars, vectors and matrices --
exactly what single-layer recurrent models need.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, NumericOverflowError

_STACK: list["Tape"] = []


class Tensor:
    """Immutable-shape dense array; ``requires_grad`` marks trainable leaves."""

    __slots__ = ("data", "requires_grad", "name", "_tape")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise ContractError("tensor data must be finite (got NaN or Inf)")
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data)

    def tolist(self):
        return self.data.tolist()

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


def _result(data) -> Tensor:
    # Internal fast constructor: output finiteness is checked by _guard.
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = False
    t.name = None
    t._tape = None
    return t


def _guard(data, primitive: str):
    if not np.isfinite(data).all():
        raise NumericOverflowError(f"non-finite output in primitive '{primitive}'")


def _tracked(x: Tensor) -> bool:
    return x.requires_grad or x._tape is not None


def _active() -> "Tape | None":
    return _STACK[-1] if _STACK else None


class Tape:
    """Ordered record of primitive applications; one backward pass, then dead."""

    __slots__ = ("_records", "_consumed")

    def __init__(self):
        self._records = []
        self._consumed = False

    def __enter__(self):
        _STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _STACK.pop()
        return False

    def __len__(self):
        return len(self._records)

    def _append(self, out: Tensor, bwd):
        self._records.append((out, bwd))
        out._tape = self


class GradientMap(dict):
    """Mapping from parameter name to gradient Tensor of the same shape."""


def backward(loss: Tensor, params=None) -> GradientMap:
    """Reverse-sweep the tape that recorded ``loss``.

    Returns gradients for every named requires_grad leaf reached from the
    loss. When ``params`` (a ParameterSet) is given, parameters the sweep
    did not reach are filled in with zero gradients. The tape is consumed:
    a second backward over it is a contract error.
    """
    if loss.data.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise ContractError("loss was not recorded on an active tape")
    if tape._consumed:
        raise ContractError("tape already consumed by a previous backward call")
    tape._consumed = True

    pending: dict[int, list] = {id(loss): [loss, np.ones(())]}
    for out, bwd in reversed(tape._records):
        entry = pending.pop(id(out), None)
        if entry is None:
            continue
        for t, contrib in bwd(entry[1]):
            if t.requires_grad or t._tape is not None:
                slot = pending.get(id(t))
                if slot is None:
                    pending[id(t)] = [t, contrib]
                else:
                    slot[1] = slot[1] + contrib

    grads = GradientMap()
    for t, g in pending.values():
        if t.requires_grad and t.name is not None:
            grads[t.name] = Tensor(np.asarray(g, dtype=np.float64))
    if params is not None:
        for name, t in params.items():
            if name not in grads:
                grads[name] = Tensor(np.zeros_like(t.data))
    return grads


# ---------------------------------------------------------------------------
# elementwise primitives


def _sigma(data: np.ndarray) -> np.ndarray:
    # overflow-free logistic; tanh saturates instead of exp blowing up
    return 0.5 * (1.0 + np.tanh(0.5 * data))


def sigmoid(x: Tensor) -> Tensor:
    d = _sigma(x.data)
    out = _result(d)
    tape = _active()
    if tape is not None and _tracked(x):
        def bwd(g, x=x, d=d):
            return ((x, g * d * (1.0 - d)),)
        tape._append(out, bwd)
    return out


def tanh(x: Tensor) -> Tensor:
    d = np.tanh(x.data)
    out = _result(d)
    tape = _active()
    if tape is not None and _tracked(x):
        def bwd(g, x=x, d=d):
            return ((x, g * (1.0 - d * d)),)
        tape._append(out, bwd)
    return out


def softplus(x: Tensor) -> Tensor:
    d = np.logaddexp(0.0, x.data)
    _guard(d, "softplus")
    out = _result(d)
    tape = _active()
    if tape is not None and _tracked(x):
        def bwd(g, x=x):
            return ((x, g * _sigma(x.data)),)
        tape._append(out, bwd)
    return out


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        d = np.exp(x.data)
    _guard(d, "exp")
    out = _result(d)
    tape = _active()
    if tape is not None and _tracked(x):
        def bwd(g, x=x, d=d):
            return ((x, g * d),)
        tape._append(out, bwd)
    return out


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.log(x.data)
    _guard(d, "log")
    out = _result(d)
    tape = _active()
    if tape is not None and _tracked(x):
        def bwd(g, x=x):
            return ((x, g / x.data),)
        tape._append(out, bwd)
    return out


def neg(x: Tensor) -> Tensor:
    out = _result(-x.data)
    tape = _active()
    if tape is not None and _tracked(x):
        def bwd(g, x=x):
            return ((x, -g),)
        tape._append(out, bwd)
    return out


def one_minus(x: Tensor) -> Tensor:
    """1 - x, the update-gate complement."""
    out = _result(1.0 - x.data)
    tape = _active()
    if tape is not None and _tracked(x):
        def bwd(g, x=x):
            return ((x, -g),)
        tape._append(out, bwd)
    return out


def mul_scalar(x: Tensor, c: float) -> Tensor:
    c = float(c)
    d = x.data * c
    _guard(d, "mul_scalar")
    out = _result(d)
    tape = _active()
    if tape is not None and _tracked(x):
        def bwd(g, x=x, c=c):
            return ((x, g * c),)
        tape._append(out, bwd)
    return out


def add_scalar(x: Tensor, c: float) -> Tensor:
    d = x.data + float(c)
    _guard(d, "add_scalar")
    out = _result(d)
    tape = _active()
    if tape is not None and _tracked(x):
        def bwd(g, x=x):
            return ((x, g),)
        tape._append(out, bwd)
    return out


_ELEMENTWISE = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softplus": softplus,
    "exp": exp,
    "log": log,
    "neg": neg,
    "mul_scalar": mul_scalar,
}


def elementwise(kind: str, x: Tensor, scalar: float | None = None) -> Tensor:
    """Dispatch by name; ``mul_scalar`` additionally takes ``scalar``."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ContractError(f"unknown elementwise kind {kind!r}") from None
    if kind == "mul_scalar":
        if scalar is None:
            raise ContractError("mul_scalar needs the scalar argument")
        return fn(x, scalar)
    return fn(x)


# ---------------------------------------------------------------------------
# binary / structural primitives


def _same_shape(a: Tensor, b: Tensor, primitive: str):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{primitive}: shape {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    d = a.data + b.data
    _guard(d, "add")
    out = _result(d)
    tape = _active()
    if tape is not None and (_tracked(a) or _tracked(b)):
        def bwd(g, a=a, b=b):
            return ((a, g), (b, g))
        tape._append(out, bwd)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    d = a.data - b.data
    _guard(d, "sub")
    out = _result(d)
    tape = _active()
    if tape is not None and (_tracked(a) or _tracked(b)):
        def bwd(g, a=a, b=b):
            return ((a, g), (b, -g))
        tape._append(out, bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    d = a.data * b.data
    _guard(d, "mul")
    out = _result(d)
    tape = _active()
    if tape is not None and (_tracked(a) or _tracked(b)):
        def bwd(g, a=a, b=b):
            return ((a, g * b.data), (b, g * a.data))
        tape._append(out, bwd)
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        d = a.data / b.data
    _guard(d, "div")
    out = _result(d)
    tape = _active()
    if tape is not None and (_tracked(a) or _tracked(b)):
        def bwd(g, a=a, b=b, d=d):
            return ((a, g / b.data), (b, -g * d / b.data))
        tape._append(out, bwd)
    return out


def matvec(w: Tensor, x: Tensor) -> Tensor:
    if w.data.ndim != 2 or x.data.ndim != 1 or w.data.shape[1] != x.data.shape[0]:
        raise DimensionError(f"matvec: W {w.shape} incompatible with x {x.shape}")
    d = w.data @ x.data
    _guard(d, "matvec")
    out = _result(d)
    tape = _active()
    if tape is not None and (_tracked(w) or _tracked(x)):
        def bwd(g, w=w, x=x):
            return ((w, g[:, None] * x.data), (x, w.data.T @ g))
        tape._append(out, bwd)
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map W.x + b for W (m,n), x (n,), b (m,)."""
    if (
        w.data.ndim != 2
        or x.data.ndim != 1
        or b.data.ndim != 1
        or w.data.shape[1] != x.data.shape[0]
        or w.data.shape[0] != b.data.shape[0]
    ):
        raise DimensionError(f"linear: W {w.shape}, x {x.shape}, b {b.shape} do not line up")
    d = w.data @ x.data + b.data
    _guard(d, "linear")
    out = _result(d)
    tape = _active()
    if tape is not None and (_tracked(w) or _tracked(x) or _tracked(b)):
        def bwd(g, x=x, w=w, b=b):
            return ((w, g[:, None] * x.data), (x, w.data.T @ g), (b, g))
        tape._append(out, bwd)
    return out


def gru_gate(x: Tensor, v: Tensor, h: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused V.x + W.h + b, the pre-activation shared by all GRU gates."""
    if (
        v.data.ndim != 2 or w.data.ndim != 2
        or v.data.shape[1] != x.data.shape[0]
        or w.data.shape[1] != h.data.shape[0]
        or v.data.shape[0] != w.data.shape[0]
        or b.data.shape != (v.data.shape[0],)
    ):
        raise DimensionError(
            f"gru_gate: V {v.shape}, x {x.shape}, W {w.shape}, h {h.shape}, b {b.shape}"
        )
    d = v.data @ x.data + w.data @ h.data + b.data
    _guard(d, "gru_gate")
    out = _result(d)
    tape = _active()
    if tape is not None and (_tracked(x) or _tracked(v) or _tracked(h)
                             or _tracked(w) or _tracked(b)):
        def bwd(g, x=x, v=v, h=h, w=w, b=b):
            return ((v, g[:, None] * x.data), (x, v.data.T @ g),
                    (w, g[:, None] * h.data), (h, w.data.T @ g), (b, g))
        tape._append(out, bwd)
    return out


def concat(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise DimensionError(f"concat: vectors only, got {a.shape} and {b.shape}")
    d = np.concatenate([a.data, b.data])
    out = _result(d)
    tape = _active()
    if tape is not None and (_tracked(a) or _tracked(b)):
        n = a.data.shape[0]
        def bwd(g, a=a, b=b, n=n):
            return ((a, g[:n]), (b, g[n:]))
        tape._append(out, bwd)
    return out


def sum_tensors(terms) -> Tensor:
    """Pairwise-tree sum of same-shape tensors (kinder rounding than a
    left fold when many loss terms accumulate)."""
    terms = list(terms)
    if not terms:
        raise ContractError("sum_tensors needs at least one term")
    while len(terms) > 1:
        nxt = [add(terms[i], terms[i + 1]) for i in range(0, len(terms) - 1, 2)]
        if len(terms) % 2:
            nxt.append(terms[-1])
        terms = nxt
    return terms[0]


def vsum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    d = np.asarray(x.data.sum())
    _guard(d, "vsum")
    out = _result(d)
    tape = _active()
    if tape is not None and _tracked(x):
        def bwd(g, x=x):
            return ((x, np.full(x.data.shape, float(g))),)
        tape._append(out, bwd)
    return out


def embed_lookup(table: Tensor, index: int) -> Tensor:
    if table.data.ndim != 2:
        raise DimensionError(f"embed_lookup: table must be 2-D, got {table.shape}")
    rows = table.data.shape[0]
    if not 0 <= index < rows:
        raise IndexError(f"embed_lookup: id {index} out of range [0, {rows})")
    out = _result(table.data[index])
    tape = _active()
    if tape is not None and _tracked(table):
        def bwd(g, table=table, index=index):
            full = np.zeros_like(table.data)
            full[index] = g
            return ((table, full),)
        tape._append(out, bwd)
    return out


# ---------------------------------------------------------------------------
# distribution / loss primitives


def softmax(x: Tensor) -> Tensor:
    """Numerically stable softmax over a vector (max-subtracted)."""
    if x.data.ndim != 1 or x.data.shape[0] < 1:
        raise DimensionError(f"softmax: non-empty vector required, got {x.shape}")
    z = x.data - x.data.max()
    e = np.exp(z)
    d = e / e.sum()
    out = _result(d)
    tape = _active()
    if tape is not None and _tracked(x):
        def bwd(g, x=x, d=d):
            return ((x, d * (g - g @ d)),)
        tape._append(out, bwd)
    return out


def cross_entropy(logits: Tensor, gold: int) -> Tensor:
    """Negative log softmax probability of the gold class index."""
    if logits.data.ndim != 1:
        raise DimensionError(f"cross_entropy: logits must be a vector, got {logits.shape}")
    k = logits.data.shape[0]
    gold = int(gold)
    if not 0 <= gold < k:
        raise IndexError(f"cross_entropy: gold index {gold} out of range [0, {k})")
    z = logits.data - logits.data.max()
    lse = np.log(np.exp(z).sum())
    d = np.asarray(lse - z[gold])
    _guard(d, "cross_entropy")
    out = _result(d)
    tape = _active()
    if tape is not None and _tracked(logits):
        def bwd(g, logits=logits, z=z, lse=lse, gold=gold):
            p = np.exp(z - lse)
            p[gold] -= 1.0
            return ((logits, p * float(g)),)
        tape._append(out, bwd)
    return out


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared differences."""
    _same_shape(pred, target, "mse")
    diff = pred.data - target.data
    k = diff.size
    d = np.asarray(float(diff @ diff) / k if diff.ndim == 1 else (diff * diff).mean())
    _guard(d, "mse")
    out = _result(d)
    tape = _active()
    if tape is not None and (_tracked(pred) or _tracked(target)):
        def bwd(g, pred=pred, target=target, diff=diff, k=k):
            scale = 2.0 * float(g) / k
            return ((pred, diff * scale), (target, diff * (-scale)))
        tape._append(out, bwd)
    return out


def zeros(shape, name=None, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad, name=name)


def constant(data) -> Tensor:
    """Untracked tensor for fixed inputs (masks, targets, noise draws)."""
    return Tensor(np.asarray(data, dtype=np.float64))
