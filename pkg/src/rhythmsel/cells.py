"""GRU, IndRNN and Skip IndRNN cells.

Each cell comes in two forms:

* ``*_step`` functions built from tape primitives, one timestep at a time.
* ``*_unroll`` functions that run a whole sequence as a single tape node
  with hand-written backpropagation through time. These are what the models
  use; the test-suite checks them against the step-wise composition and
  against finite differences.

Parameters live outside the cells as flat ``{name: array}`` dicts so the
optimizer and checkpoint code can treat them uniformly. Layer objects
(:class:`IndRNN`, :class:`SkipIndRNN`, :class:`GRU`) own the naming and
initialization and bind a dict of tensors into the typed parameter records.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import _kernels
from . import numerics as nx
from .numerics import Tensor

T_MAX = 1024
U_MAX = 2.0 ** (1.0 / T_MAX)


class CellError(ValueError):
    pass


@dataclass
class IndRnnParams:
    W: Tensor  # (hidden, input)
    u: Tensor  # (hidden,)
    b: Tensor  # (hidden,)
    activation: str = "relu"


@dataclass
class SkipIndRnnParams:
    base: IndRnnParams
    w_p: Tensor  # (hidden,)
    b_p: Tensor  # (hidden,)


@dataclass
class SkipState:
    h: Tensor
    u_tilde: Tensor


@dataclass
class GruParams:
    """Stacked gate weights in update (z), reset (r), candidate (n) order."""

    W: Tensor  # (3*hidden, input)
    U: Tensor  # (3*hidden, hidden)
    b: Tensor  # (3*hidden,)


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int, dtype=nx.TRAIN_DTYPE):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype)


def _check_dims(W: Tensor, x_t: Tensor, h_prev: Tensor, rows: int) -> None:
    if W.shape[1] != x_t.shape[-1] or h_prev.shape[-1] != rows:
        raise CellError(
            f"dimension mismatch: W {W.shape}, x {x_t.shape}, h {h_prev.shape}"
        )


# --------------------------------------------------------------------------
# step functions (tape composition)
# --------------------------------------------------------------------------

def indrnn_step(params: IndRnnParams, x_t, h_prev) -> Tensor:
    x_t, h_prev = nx.as_tensor(x_t), nx.as_tensor(h_prev)
    _check_dims(params.W, x_t, h_prev, params.u.shape[0])
    pre = nx.linear(x_t, params.W, params.b) + params.u * h_prev
    return nx.ACTIVATIONS[params.activation](pre)


def skip_indrnn_step(
    params: SkipIndRnnParams, x_t, state: SkipState, decision=None, reference=None
) -> tuple[Tensor, SkipState]:
    """One Skip IndRNN transition.

    ``decision``/``reference`` freeze the binary gate (see
    :func:`numerics.binarize`); leave them ``None`` for normal operation.
    """
    ut = state.u_tilde.data
    if decision is None and (np.any(ut < -1e-6) or np.any(ut > 1 + 1e-6)):
        raise CellError("skip accumulator outside [0, 1]")
    candidate = indrnn_step(params.base, x_t, state.h)
    gate = nx.binarize(state.u_tilde, decision, reference)
    h = gate * candidate + (1.0 - gate) * state.h
    delta = nx.sigmoid(params.w_p * h + params.b_p)
    copy_branch = state.u_tilde + nx.minimum(delta, 1.0 - state.u_tilde)
    u_next = gate * delta + (1.0 - gate) * copy_branch
    return h, SkipState(h, u_next)


def gru_step(params: GruParams, x_t, h_prev) -> Tensor:
    x_t, h_prev = nx.as_tensor(x_t), nx.as_tensor(h_prev)
    H = h_prev.shape[-1]
    _check_dims(params.W, x_t, h_prev, params.U.shape[1])
    if params.U.shape[0] != 3 * H:
        raise CellError(f"GRU U has shape {params.U.shape}, expected ({3 * H}, {H})")
    gx = nx.linear(x_t, params.W, params.b)
    Uz, Ur, Un = params.U[0:H], params.U[H : 2 * H], params.U[2 * H :]
    z = nx.sigmoid(gx[0:H] + Uz @ h_prev)
    r = nx.sigmoid(gx[H : 2 * H] + Ur @ h_prev)
    n = nx.tanh(gx[2 * H :] + Un @ (r * h_prev))
    return (1.0 - z) * h_prev + z * n


# --------------------------------------------------------------------------
# fused unrollers
# --------------------------------------------------------------------------

def _act_code(name: str) -> int:
    try:
        return _kernels.ACT_CODES[name]
    except KeyError:
        raise CellError(f"unknown activation {name!r}") from None


def _indrnn_recurrence(pre: Tensor, u: Tensor, activation: str) -> Tensor:
    """h_t = act(pre_t + u * h_{t-1}), h_{-1} = 0, for pre of shape (T, H)."""
    code = _act_code(activation)
    ud = u.data.astype(pre.dtype, copy=False)
    A, Y = _kernels.indrnn_forward(np.ascontiguousarray(pre.data), ud, code)

    def backward(G):
        return _kernels.indrnn_backward(np.ascontiguousarray(G, dtype=A.dtype), A, Y, ud, code)

    return nx.record_op(Y, (pre, u), backward)


def indrnn_unroll(params: IndRnnParams, X) -> Tensor:
    """Run an IndRNN layer over X (T, D) from a zero state; returns (T, H)."""
    X = nx.as_tensor(X)
    if X.data.ndim != 2 or X.shape[1] != params.W.shape[1]:
        raise CellError(f"bad input shape {X.shape} for W {params.W.shape}")
    pre = nx.linear(X, params.W, params.b)
    return _indrnn_recurrence(pre, params.u, params.activation)


@dataclass
class SkipTrace:
    """Per-step gate record of a Skip IndRNN unroll (rows = timesteps)."""

    decision: np.ndarray  # binarized gate actually applied
    u_tilde: np.ndarray  # accumulator before the step (the binarize input)
    u_tilde_next: np.ndarray


def _skip_recurrence(pre, u, w_p, b_p, activation, frozen: SkipTrace | None):
    code = _act_code(activation)
    P = np.ascontiguousarray(pre.data)
    dtype = P.dtype
    ud, wp, bp = (t.data.astype(dtype, copy=False) for t in (u, w_p, b_p))
    if frozen is None:
        empty = np.empty((0, 0), dtype)
        out = _kernels.skip_forward(P, ud, wp, bp, code, False, empty, empty)
    else:
        out = _kernels.skip_forward(
            P, ud, wp, bp, code, True,
            np.ascontiguousarray(frozen.decision, dtype), np.ascontiguousarray(frozen.u_tilde, dtype),
        )
    A, C, Hs, G, Dl, Ut, Un, Bin, pick, ok = out
    if not ok:
        raise CellError("skip accumulator left [0, 1]")

    def backward(Gout):
        return _kernels.skip_backward(
            np.ascontiguousarray(Gout, dtype=dtype), A, C, Hs, G, Dl, Ut, pick, ud, wp, code
        )

    return nx.record_op(Hs, (pre, u, w_p, b_p), backward), SkipTrace(Bin, Ut, Un)


def skip_indrnn_unroll(
    params: SkipIndRnnParams, X, frozen: SkipTrace | None = None
) -> tuple[Tensor, SkipTrace]:
    """Run a Skip IndRNN layer over X (T, D); u-tilde starts at 1 every sequence.

    Returns the hidden sequence (T, H) and the gate trace. ``frozen`` replays
    a previous trace's decisions as a smooth surrogate (for gradient checks).
    """
    X = nx.as_tensor(X)
    base = params.base
    if X.data.ndim != 2 or X.shape[1] != base.W.shape[1]:
        raise CellError(f"bad input shape {X.shape} for W {base.W.shape}")
    pre = nx.linear(X, base.W, base.b)
    return _skip_recurrence(pre, base.u, params.w_p, params.b_p, base.activation, frozen)


def _gru_recurrence(gx: Tensor, U: Tensor) -> Tensor:
    GX = np.ascontiguousarray(gx.data)
    Ud = np.ascontiguousarray(U.data, dtype=GX.dtype)
    H = Ud.shape[1]
    Z, R, N, Hs, Hprev = _kernels.gru_forward(GX, Ud)

    def backward(Gout):
        dGX = _kernels.gru_backward(np.ascontiguousarray(Gout, dtype=GX.dtype), Z, R, N, Hprev, Ud)
        dU = np.empty_like(Ud)
        dU[: 2 * H] = dGX[:, : 2 * H].T @ Hprev
        dU[2 * H :] = dGX[:, 2 * H :].T @ (R * Hprev)
        return dGX, dU

    return nx.record_op(Hs, (gx, U), backward)


def gru_unroll(params: GruParams, X) -> Tensor:
    """Run a GRU over X (T, D) from a zero state; returns (T, H)."""
    X = nx.as_tensor(X)
    if X.data.ndim != 2 or X.shape[1] != params.W.shape[1]:
        raise CellError(f"bad input shape {X.shape} for W {params.W.shape}")
    gx = nx.linear(X, params.W, params.b)
    return _gru_recurrence(gx, params.U)


# --------------------------------------------------------------------------
# layers: naming + initialization
# --------------------------------------------------------------------------

class IndRNN:
    def __init__(self, prefix: str, input_dim: int, hidden: int, activation: str = "relu"):
        if activation not in nx.ACTIVATIONS:
            raise CellError(f"unknown activation {activation!r}")
        self.prefix, self.input_dim, self.hidden, self.activation = prefix, input_dim, hidden, activation

    def init(self, rng: np.random.Generator, dtype=nx.TRAIN_DTYPE) -> dict[str, np.ndarray]:
        p = self.prefix
        return {
            f"{p}.W": glorot_uniform(rng, self.hidden, self.input_dim, dtype),
            f"{p}.u": rng.uniform(0.0, 1.0, self.hidden).astype(dtype),
            f"{p}.b": np.zeros(self.hidden, dtype),
        }

    def bind(self, params: Mapping[str, Tensor]) -> IndRnnParams:
        p = self.prefix
        return IndRnnParams(params[f"{p}.W"], params[f"{p}.u"], params[f"{p}.b"], self.activation)

    def recurrent_keys(self) -> list[str]:
        return [f"{self.prefix}.u"]

    def __call__(self, params, X, frozen=None):
        return indrnn_unroll(self.bind(params), X), None


class SkipIndRNN(IndRNN):
    def init(self, rng, dtype=nx.TRAIN_DTYPE):
        params = super().init(rng, dtype)
        p = self.prefix
        params[f"{p}.w_p"] = glorot_uniform(rng, 1, self.hidden, dtype)[0]
        params[f"{p}.b_p"] = np.zeros(self.hidden, dtype)
        return params

    def bind(self, params) -> SkipIndRnnParams:
        p = self.prefix
        return SkipIndRnnParams(super().bind(params), params[f"{p}.w_p"], params[f"{p}.b_p"])

    def __call__(self, params, X, frozen=None):
        return skip_indrnn_unroll(self.bind(params), X, frozen)


def orthogonal(rng: np.random.Generator, n: int, dtype=nx.TRAIN_DTYPE) -> np.ndarray:
    """Random orthogonal (n, n) matrix, sign-corrected QR of a Gaussian draw."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return (q * np.sign(np.diag(r))).astype(dtype)


class GRU:
    """``update_bias`` initializes the update-gate bias; negative values make
    the initial cell hold its state longer (z small keeps h_prev)."""

    def __init__(self, prefix: str, input_dim: int, hidden: int, update_bias: float = 0.0):
        self.prefix, self.input_dim, self.hidden = prefix, input_dim, hidden
        self.update_bias = update_bias

    def init(self, rng, dtype=nx.TRAIN_DTYPE):
        p, H = self.prefix, self.hidden
        W = np.concatenate([glorot_uniform(rng, H, self.input_dim, dtype) for _ in range(3)])
        U = np.concatenate([orthogonal(rng, H, dtype) for _ in range(3)])
        b = np.zeros(3 * H, dtype)
        b[:H] = self.update_bias
        return {f"{p}.W": W, f"{p}.U": U, f"{p}.b": b}

    def bind(self, params) -> GruParams:
        p = self.prefix
        return GruParams(params[f"{p}.W"], params[f"{p}.U"], params[f"{p}.b"])

    def recurrent_keys(self) -> list[str]:
        return []

    def __call__(self, params, X, frozen=None):
        return gru_unroll(self.bind(params), X), None


def clip_recurrent(params: dict[str, np.ndarray], keys, u_max: float = U_MAX) -> dict[str, np.ndarray]:
    """Clamp IndRNN recurrent weights to |u| <= u_max (applied after each optimizer step)."""
    out = dict(params)
    for k in keys:
        out[k] = np.clip(params[k], -u_max, u_max).astype(params[k].dtype)
    return out
