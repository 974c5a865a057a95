"""Frame-importance heads (RNN+ / SRNN+), keep/delete selection and their losses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .cells import IndRNN, SkipIndRNN, SkipTrace, glorot_uniform
from .numerics import Tensor
from .rhythm import FeatureSequence

KEEP_THRESHOLD = 0.5


class SelectionError(ValueError):
    pass


@dataclass
class SelectorConfig:
    variant: str = "srnn_plus"
    hidden: int = 250
    fc1: int = 50
    fc2: int = 1
    m_R: float = 0.25
    lam: float = 4.0
    layers: int = 2
    activation: str = "relu"
    out_scale: float = 1.0

    def __post_init__(self):
        if self.variant not in ("rnn_plus", "srnn_plus"):
            raise SelectionError(f"unknown selector variant {self.variant!r}")
        if not 0.0 < self.m_R < 1.0:
            raise SelectionError(f"m_R must lie in (0, 1), got {self.m_R}")
        if self.lam < 0:
            raise SelectionError(f"lambda must be >= 0, got {self.lam}")
        if self.fc2 != 1:
            raise SelectionError("the last selector layer has exactly one unit")
        if self.layers < 1 or self.layers > 2:
            raise SelectionError("selector stacks have 1 or 2 recurrent layers")


@dataclass
class SelectionTrace:
    p: np.ndarray
    y: np.ndarray
    fallback: bool = False

    @property
    def K(self) -> int:
        return int(self.y.sum())

    @property
    def N(self) -> int:
        return len(self.y)

    @property
    def usage(self) -> float:
        return 100.0 * self.K / self.N

    @property
    def kept(self) -> np.ndarray:
        return np.flatnonzero(self.y)


class Selector:
    """Recurrent stack -> FC(fc1, relu) -> FC(1) -> sigmoid, one probability per frame.

    SRNN+ uses Skip IndRNN for every layer, RNN+ plain IndRNN.
    """

    def __init__(self, config: SelectorConfig, input_dim: int, prefix: str = "sel"):
        self.config = config
        self.input_dim = input_dim
        self.prefix = prefix
        layer_cls = SkipIndRNN if config.variant == "srnn_plus" else IndRNN
        dims = [input_dim] + [config.hidden] * config.layers
        self.layers = [
            layer_cls(f"{prefix}.rnn{i}", dims[i], dims[i + 1], config.activation)
            for i in range(config.layers)
        ]

    def init(self, rng: np.random.Generator, dtype=nx.TRAIN_DTYPE) -> dict[str, np.ndarray]:
        params = {}
        for layer in self.layers:
            params.update(layer.init(rng, dtype))
        c, p = self.config, self.prefix
        params[f"{p}.fc1.W"] = glorot_uniform(rng, c.fc1, c.hidden, dtype)
        params[f"{p}.fc1.b"] = np.zeros(c.fc1, dtype)
        params[f"{p}.fc2.W"] = glorot_uniform(rng, 1, c.fc1, dtype) * c.out_scale
        params[f"{p}.fc2.b"] = np.zeros(1, dtype)
        return params

    def recurrent_keys(self) -> list[str]:
        return [k for layer in self.layers for k in layer.recurrent_keys()]

    def score(self, params, frames, frozen: list[SkipTrace] | None = None) -> tuple[Tensor, list]:
        """Keep probabilities (N,) and the per-layer skip traces (None for RNN+)."""
        x = nx.as_tensor(frames)
        if x.data.ndim != 2 or x.shape[0] == 0:
            raise SelectionError("selector needs a non-empty (N, D) sequence")
        if x.shape[1] != self.input_dim:
            raise SelectionError(f"feature dim {x.shape[1]} != selector input dim {self.input_dim}")
        traces = []
        for i, layer in enumerate(self.layers):
            x, trace = layer(params, x, None if frozen is None else frozen[i])
            traces.append(trace)
        p = self.prefix
        z = nx.relu(nx.linear(x, params[f"{p}.fc1.W"], params[f"{p}.fc1.b"]))
        logit = nx.linear(z, params[f"{p}.fc2.W"], params[f"{p}.fc2.b"])
        return nx.reshape(nx.sigmoid(logit), (-1,)), traces


def score_frames(selector: Selector, params, seq: FeatureSequence) -> np.ndarray:
    tensors = {k: Tensor(v) for k, v in params.items()}
    p, _ = selector.score(tensors, seq.frames)
    return p.data


def decide(p: np.ndarray) -> SelectionTrace:
    """Threshold at 0.5; if nothing survives keep the single most probable frame."""
    p = np.asarray(p)
    if p.size == 0:
        raise SelectionError("no frames to select from")
    y = (p >= KEEP_THRESHOLD).astype(np.int8)
    fallback = not y.any()
    if fallback:
        y[int(np.argmax(p))] = 1
    return SelectionTrace(p, y, fallback)


def select(p, seq: FeatureSequence) -> tuple[SelectionTrace, FeatureSequence]:
    p = np.asarray(p.data if isinstance(p, Tensor) else p)
    if len(p) != seq.n_frames:
        raise SelectionError(f"{len(p)} probabilities for {seq.n_frames} frames")
    trace = decide(p)
    return trace, seq.subset(trace.kept)


def gated_forward(trace: SelectionTrace, p: Tensor, frames, reference=None) -> Tensor:
    """Kept frames, each scaled by a straight-through gate on its probability.

    The gate's forward value is exactly 1, so the output equals the raw kept
    frames; its backward sends ``<dL/dframe_i, frame_i>`` to ``p_i``. Deleted
    frames are not connected at all.
    """
    idx = trace.kept
    rows = nx.take(nx.as_tensor(frames), idx)
    ref = None if reference is None else np.asarray(reference)[idx]
    gate = nx.st_gate(nx.take(p, idx), ref)
    return rows * nx.reshape(gate, (-1, 1))


def reducing_loss(p, m_R: float) -> Tensor:
    """|mean(p) - m_R|."""
    p = nx.as_tensor(p)
    if p.data.size == 0:
        raise SelectionError("reducing loss of an empty selection")
    return nx.absolute(nx.mean(p) - m_R)


def rnn_total_loss(L_C, L_R, lam: float):
    if lam < 0:
        raise SelectionError("lambda must be >= 0")
    for name, value in (("L_C", L_C), ("L_R", L_R)):
        v = float(value.data) if isinstance(value, Tensor) else float(value)
        if v < 0:
            raise SelectionError(f"{name} must be >= 0, got {v}")
    return L_C + lam * L_R


def format_trace_line(seq_id: str, trace: SelectionTrace) -> str:
    """``id  N  K  usage  p-list  y-list``, tab separated, comma lists."""
    p_list = ",".join(f"{v:.6f}" for v in trace.p)
    y_list = ",".join(str(int(v)) for v in trace.y)
    return f"{seq_id}\t{trace.N}\t{trace.K}\t{trace.usage:.4f}\t{p_list}\t{y_list}"


def parse_trace_line(line: str) -> tuple[str, SelectionTrace]:
    ident, n, k, _usage, p_list, y_list = line.rstrip("\n").split("\t")
    p = np.array(p_list.split(","), dtype=np.float64)
    y = np.array(y_list.split(","), dtype=np.int8)
    if len(p) != int(n) or len(y) != int(n) or int(y.sum()) != int(k):
        raise SelectionError(f"inconsistent trace line for {ident!r}")
    return ident, SelectionTrace(p, y, fallback=bool(not (p >= KEEP_THRESHOLD).any()))
