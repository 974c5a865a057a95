"""Finite-difference verification of every differentiable path, at float64.

Discrete choices (skip gates, keep/delete decisions) are recorded on an
unperturbed pass and replayed, so each check sees a smooth function.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .. import numerics as nx
from ..cells import GRU, IndRNN, SkipIndRNN
from ..classifier import Classifier, ClassifierConfig
from ..models import SelectionPipeline
from ..numerics import Tensor
from ..selector import SelectorConfig

TOLERANCE = 1e-4
F64 = nx.CHECK_DTYPE


@dataclass
class CheckResult:
    name: str
    seed: int
    max_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def _readout(rng, shape):
    # fixed random projection so every state coordinate reaches the loss
    return rng.normal(size=shape)


def _jitter_biases(params, rng):
    # Zero biases leave relu units sitting on their kink (or dead, with
    # gradients below finite-difference resolution). Positive offsets keep
    # most units in their smooth, active region.
    for key in params:
        if key.endswith(".b"):
            params[key] = params[key] + 0.1 + np.abs(rng.normal(scale=0.5, size=params[key].shape))
        elif key.endswith(".b_p"):
            params[key] = params[key] + rng.normal(scale=0.5, size=params[key].shape)
    return params


def _cell_check(layer, rng, X, frozen=False):
    params = _jitter_biases(layer.init(rng, F64), rng)
    trace = None
    if frozen:
        _, trace = layer({k: Tensor(v) for k, v in params.items()}, X)
    Wm = _readout(rng, (X.shape[0], layer.hidden))

    def loss(t):
        H, _ = layer(t, X, trace) if frozen else layer(t, X)
        return nx.total(nx.tanh(H) * Wm)

    return nx.grad_check(loss, params).max_error


def check_indrnn(seed, activation="relu", hidden=6, length=6, dim=4):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(length, dim))
    return _cell_check(IndRNN("c", dim, hidden, activation), rng, X)


def check_gru(seed, hidden=6, length=6, dim=4):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(length, dim))
    return _cell_check(GRU("c", dim, hidden), rng, X)


def check_skip(seed, hidden=6, length=6, dim=4):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(length, dim))
    return _cell_check(SkipIndRNN("c", dim, hidden), rng, X, frozen=True)


def check_classifier(seed, cell="gru", hidden=6, length=6, dim=4, n_classes=3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(length, dim))
    head = Classifier(ClassifierConfig(cell, hidden, 5, n_classes), dim)
    params = _jitter_biases(head.init(rng, F64), rng)
    label = int(rng.integers(n_classes))
    return nx.grad_check(lambda t: nx.cross_entropy(head.classify(t, X), label), params).max_error


def check_selection_loss(seed, variant="srnn_plus", hidden=6, length=6, dim=4, n_classes=3):
    """L_C + lambda * L_R through selector, straight-through gate and classifier."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(length, dim))
    sel = SelectorConfig(variant, hidden, 5, 1, m_R=0.25, lam=4.0, layers=2)
    model = SelectionPipeline(sel, ClassifierConfig("gru", hidden, 5, n_classes), dim)
    params = _jitter_biases(model.init(seed, F64), rng)
    label = int(rng.integers(n_classes))
    _, record = model.train_loss({k: Tensor(v) for k, v in params.items()}, X, label)
    return nx.grad_check(lambda t: model.train_loss(t, X, label, frozen=record)[0], params).max_error


SUITE = {
    "indrnn_relu": lambda s: check_indrnn(s, "relu"),
    "indrnn_tanh": lambda s: check_indrnn(s, "tanh"),
    "indrnn_sigmoid": lambda s: check_indrnn(s, "sigmoid"),
    "gru": check_gru,
    "skip_indrnn": check_skip,
    "classifier_gru": lambda s: check_classifier(s, "gru"),
    "classifier_indrnn": lambda s: check_classifier(s, "indrnn"),
    "selection_rnn_plus": lambda s: check_selection_loss(s, "rnn_plus"),
    "selection_srnn_plus": lambda s: check_selection_loss(s, "srnn_plus"),
}


def run_suite(seeds=range(20), names=None, progress=None) -> list[CheckResult]:
    out = []
    for name in names or SUITE:
        for seed in seeds:
            t0 = time.perf_counter()
            err = SUITE[name](seed)
            out.append(CheckResult(name, seed, err, time.perf_counter() - t0))
            if progress is not None:
                progress(out[-1])
    return out
