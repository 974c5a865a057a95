"""Dense tensors with a reverse-mode tape, losses, Adam and a gradient checker.

Tensors wrap immutable numpy arrays. Operations performed while a
:class:`GradTape` is active, and that touch at least one tensor with
``requires_grad=True``, are recorded on the tape; ``tape.gradient`` then
walks the recording in exact reverse order.

Training runs in float32, gradient verification in float64. Every op output
is checked for NaN/Inf and raises :class:`NonFiniteError` rather than
propagating silently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

PROB_FLOOR = 1e-12

TRAIN_DTYPE = np.float32
CHECK_DTYPE = np.float64


class NumericsError(ValueError):
    """Invalid input to a numerical primitive."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(TRAIN_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self) -> int:
        return len(self.data)

    def __float__(self) -> float:
        return float(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    if arr.dtype.kind != "f":
        arr = arr.astype(dtype or TRAIN_DTYPE)
    return Tensor(arr)


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------

_ACTIVE: list["GradTape"] = []


@dataclass
class _Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class GradTape:
    """Records differentiable operations in execution order.

    Usage::

        with GradTape() as tape:
            loss = f(w)
        (dw,) = tape.gradient(loss, [w])
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.visit_order: list[int] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def record(self, out, inputs, backward) -> None:
        self.nodes.append(_Node(out, inputs, backward))

    def gradient(self, target: Tensor, sources: Sequence[Tensor], seed=None) -> list[np.ndarray]:
        """Adjoints of ``target`` with respect to each of ``sources``.

        Sources that the target does not depend on get zero arrays.
        """
        adj: dict[int, np.ndarray] = {
            id(target): np.ones_like(target.data) if seed is None else np.asarray(seed, target.dtype)
        }
        self.visit_order = []
        for index in range(len(self.nodes) - 1, -1, -1):
            node = self.nodes[index]
            g = adj.get(id(node.out))
            if g is None:
                continue
            self.visit_order.append(index)
            grads = node.backward(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in adj:
                    adj[key] = adj[key] + gi
                else:
                    adj[key] = gi
        return [adj.get(id(s), np.zeros_like(s.data)) for s in sources]


def _tracking(inputs) -> GradTape | None:
    if not _ACTIVE:
        return None
    for t in inputs:
        if t.requires_grad:
            return _ACTIVE[-1]
    return None


def record_op(out_data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    """Wrap ``out_data`` as an op output and register its backward on the tape.

    ``backward(g)`` returns one adjoint (or None) per input.
    """
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError("operation produced a non-finite value")
    tape = _tracking(inputs)
    out = Tensor(out_data, requires_grad=tape is not None)
    if tape is not None:
        tape.record(out, tuple(inputs), backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


# --------------------------------------------------------------------------
# elementwise and linear algebra
# --------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return record_op(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return record_op(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return record_op(
        ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return record_op(
        ad / bd,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)),
    )


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0 or ad.shape[-1] != bd.shape[0]:
        raise NumericsError(f"matmul shape mismatch {ad.shape} @ {bd.shape}")

    def backward(g):
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 1:
            return bd @ g, np.outer(ad, g)
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return record_op(ad @ bd, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for a (out, in) weight, x of shape (in,) or (T, in)."""
    x = as_tensor(x)
    xd, wd = x.data, weight.data
    if xd.shape[-1] != wd.shape[1]:
        raise NumericsError(f"linear: input dim {xd.shape[-1]} != weight in-dim {wd.shape[1]}")
    out = xd @ wd.T
    inputs: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        out = out + bias.data
        inputs = (x, weight, bias)

    def backward(g):
        gx = g @ wd
        gw = np.outer(g, xd) if xd.ndim == 1 else g.T @ xd
        if bias is None:
            return gx, gw
        gb = g if g.ndim == 1 else g.sum(axis=0)
        return gx, gw, gb

    return record_op(out, inputs, backward)


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    # branch-free stable form
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = sigmoid_array(x.data)
    return record_op(s, (x,), lambda g: (g * s * (1 - s),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return record_op(t, (x,), lambda g: (g * (1 - t * t),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return record_op(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}


def exp(x) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data)
    return record_op(e, (x,), lambda g: (g * e,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return record_op(np.log(xd), (x,), lambda g: (g / xd,))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the value was inside."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return record_op(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def absolute(x) -> Tensor:
    """|x| with subgradient 0 at the kink."""
    x = as_tensor(x)
    sign = np.sign(x.data)
    return record_op(np.abs(x.data), (x,), lambda g: (g * sign,))


def minimum(a, b) -> Tensor:
    """Elementwise min; ties route the gradient to ``a``."""
    a, b = _pair(a, b)
    pick_a = a.data <= b.data
    return record_op(
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)),
    )


def total(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return record_op(np.asarray(x.data.sum(), x.dtype), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x) -> Tensor:
    x = as_tensor(x)
    if x.data.size == 0:
        raise NumericsError("mean of empty tensor")
    n = x.data.size
    shape = x.shape
    return record_op(
        np.asarray(x.data.mean(), x.dtype), (x,), lambda g: (np.full(shape, g / n, dtype=x.dtype),)
    )


def take(x: Tensor, index) -> Tensor:
    """Row/element indexing (basic or integer-array) along the leading axis."""
    x = as_tensor(x)
    shape, dtype = x.shape, x.dtype
    out = x.data[index]

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return record_op(np.array(out), (x,), backward)


def stack(items: Sequence[Tensor]) -> Tensor:
    items = [as_tensor(t) for t in items]
    return record_op(
        np.stack([t.data for t in items]), tuple(items), lambda g: tuple(g[i] for i in range(len(items)))
    )


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    orig = x.shape
    return record_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(orig),))


# --------------------------------------------------------------------------
# straight-through primitives
# --------------------------------------------------------------------------

def binarize(v, decision=None, reference=None) -> Tensor:
    """Step function [0,1] -> {0,1} (1 iff v >= 0.5) with a straight-through backward.

    The forward value is ``decision + (v - reference)``; by default
    ``decision = [v >= 0.5]`` and ``reference = v`` so the value is exactly
    binary. Passing frozen ``decision``/``reference`` arrays from an earlier
    run turns the op into a smooth surrogate whose derivative equals the
    straight-through one, which is what finite-difference checks need.
    """
    v = as_tensor(v)
    vd = v.data
    if decision is None:
        if np.any(vd < -1e-6) or np.any(vd > 1 + 1e-6):
            raise NumericsError("binarize input outside [0, 1]")
        out = (vd >= 0.5).astype(v.dtype)
    else:
        out = np.asarray(decision, v.dtype) + (vd - np.asarray(reference, v.dtype))
    return record_op(out, (v,), lambda g: (g,))


def st_gate(p, reference=None) -> Tensor:
    """Multiplicative gate whose forward value is exactly 1 and backward is identity in ``p``."""
    p = as_tensor(p)
    ref = p.data if reference is None else np.asarray(reference, p.dtype)
    return record_op(1 + (p.data - ref), (p,), lambda g: (g,))


# --------------------------------------------------------------------------
# probabilities and losses
# --------------------------------------------------------------------------

def _check_vector(x: np.ndarray, what: str) -> None:
    if x.size == 0:
        raise NumericsError(f"{what}: empty input")
    if not np.all(np.isfinite(x)):
        raise NumericsError(f"{what}: non-finite input")


def softmax(logits) -> Tensor:
    logits = as_tensor(logits)
    _check_vector(logits.data, "softmax")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return record_op(s, (logits,), backward)


def cross_entropy(probs, label: int) -> Tensor:
    """-ln(probs[label]) with the probability floored at 1e-12."""
    probs = as_tensor(probs)
    n = probs.shape[-1]
    if not 0 <= int(label) < n:
        raise NumericsError(f"label {label} out of range for {n} classes")
    p = probs.data[label]
    floored = p < PROB_FLOOR
    value = -np.log(max(p, PROB_FLOOR))

    def backward(g):
        gp = np.zeros_like(probs.data)
        if not floored:
            gp[label] = -g / p
        return (gp,)

    return record_op(np.asarray(max(value, 0.0), probs.dtype), (probs,), backward)


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns fresh parameter arrays."""
    if state.step < 0:
        raise NumericsError("Adam step counter must be >= 0")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    out = {}
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        if g.shape != theta.shape:
            raise NumericsError(f"Adam: grad shape {g.shape} != param shape {theta.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(theta)
            v = np.zeros_like(theta)
        else:
            v = state.v[name]
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        state.m[name], state.v[name] = m.astype(theta.dtype), v.astype(theta.dtype)
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        out[name] = (theta - update).astype(theta.dtype)
    return out, state


# --------------------------------------------------------------------------
# gradient checking
# --------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict[str, float]
    analytic: dict[str, np.ndarray]
    numeric: dict[str, np.ndarray]

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_error < tol


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def grad_check(
    loss_fn: Callable[[dict[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
) -> GradCheckReport:
    """Compare tape gradients against central differences at float64.

    ``loss_fn`` receives a dict of tensors keyed like ``params`` and must
    return a scalar tensor.
    """
    base = {k: np.array(v, dtype=CHECK_DTYPE) for k, v in params.items()}
    tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in base.items()}
    with GradTape() as tape:
        loss = loss_fn(tensors)
    names = list(base)
    analytic = dict(zip(names, tape.gradient(loss, [tensors[k] for k in names])))

    def evaluate(name, flat_index, delta):
        arr = base[name].copy()
        arr.reshape(-1)[flat_index] += delta
        feed = {k: Tensor(arr if k == name else base[k]) for k in names}
        value = float(loss_fn(feed).data)
        if not np.isfinite(value):
            raise NonFiniteError(f"non-finite loss while perturbing {name}[{flat_index}]")
        return value

    numeric, errors = {}, {}
    for name in names:
        est = np.zeros(base[name].size)
        for i in range(base[name].size):
            est[i] = (evaluate(name, i, h) - evaluate(name, i, -h)) / (2 * h)
        numeric[name] = est.reshape(base[name].shape)
        errors[name] = float(relative_error(analytic[name], numeric[name]).max(initial=0.0))
    return GradCheckReport(errors, analytic, numeric)
