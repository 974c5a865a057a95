"""Recognition head: recurrent cell over the (selected) frames -> FC -> FC -> softmax."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .cells import GRU, IndRNN, glorot_uniform
from .numerics import Tensor


class ClassifierError(ValueError):
    pass


@dataclass
class ClassifierConfig:
    cell: str = "gru"
    hidden: int = 1024
    fc_hidden: int = 100
    n_classes: int = 6
    update_bias: float = 0.0

    def __post_init__(self):
        if self.cell not in ("gru", "indrnn"):
            raise ClassifierError(f"unknown classifier cell {self.cell!r}")
        if self.n_classes < 2:
            raise ClassifierError("n_classes must be >= 2")
        if self.hidden < 1 or self.fc_hidden < 1:
            raise ClassifierError("layer sizes must be >= 1")


class Classifier:
    def __init__(self, config: ClassifierConfig, input_dim: int, prefix: str = "cls"):
        self.config = config
        self.input_dim = input_dim
        self.prefix = prefix
        if config.cell == "gru":
            self.cell = GRU(f"{prefix}.rnn", input_dim, config.hidden, config.update_bias)
        else:
            self.cell = IndRNN(f"{prefix}.rnn", input_dim, config.hidden, "relu")

    def init(self, rng: np.random.Generator, dtype=nx.TRAIN_DTYPE) -> dict[str, np.ndarray]:
        c, p = self.config, self.prefix
        params = self.cell.init(rng, dtype)
        params[f"{p}.fc1.W"] = glorot_uniform(rng, c.fc_hidden, c.hidden, dtype)
        params[f"{p}.fc1.b"] = np.zeros(c.fc_hidden, dtype)
        params[f"{p}.fc2.W"] = glorot_uniform(rng, c.n_classes, c.fc_hidden, dtype)
        params[f"{p}.fc2.b"] = np.zeros(c.n_classes, dtype)
        return params

    def recurrent_keys(self) -> list[str]:
        return self.cell.recurrent_keys()

    def logits(self, params, frames) -> Tensor:
        x = nx.as_tensor(frames)
        if x.data.ndim != 2 or x.shape[0] == 0:
            raise ClassifierError("classifier needs at least one frame")
        states, _ = self.cell(params, x)
        last = nx.take(states, -1)
        p = self.prefix
        z = nx.relu(nx.linear(last, params[f"{p}.fc1.W"], params[f"{p}.fc1.b"]))
        return nx.linear(z, params[f"{p}.fc2.W"], params[f"{p}.fc2.b"])

    def classify(self, params, frames) -> Tensor:
        """Class distribution read from the final hidden state."""
        return nx.softmax(self.logits(params, frames))


def predict(probs) -> int:
    """Arg-max, first index on ties."""
    probs = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return int(np.argmax(probs))
