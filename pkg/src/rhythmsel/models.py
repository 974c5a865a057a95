"""End-to-end pipelines: no-selection baselines, RNN+/SRNN+ and RL+.

Every pipeline exposes the same surface to the harness:

``init(seed)``           parameter dict (float32 arrays)
``recurrent_keys()``     IndRNN recurrent weights to clip after each step
``train_loss(...)``      scalar loss tensor plus bookkeeping for one sequence
``infer(params, x)``     class probabilities and the selection trace (or None)

Random streams for initialization are derived per component from the seed,
so the classifier starts identically whatever selector sits in front of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .classifier import Classifier, ClassifierConfig, predict
from .numerics import Tensor
from .policy import RewardConfig, curriculum_keep_floor, reinforce_term, reward, sample_actions
from .selector import (
    SelectionTrace,
    Selector,
    SelectorConfig,
    decide,
    gated_forward,
    reducing_loss,
    rnn_total_loss,
)

VARIANTS = ("baseline", "indrnn", "rnn_plus", "srnn_plus", "rl_plus")


@dataclass
class StepRecord:
    """What one training forward pass saw; also the frozen state for gradient checks."""

    L_C: float
    L_R: float | None = None
    reward: float | None = None
    correct: bool = False
    usage: float | None = None
    selection: SelectionTrace | None = None
    p_reference: np.ndarray | None = None
    skip_traces: list = field(default_factory=list)


def _component_rng(seed: int, component: int) -> np.random.Generator:
    return np.random.default_rng([seed, component])


class BaselinePipeline:
    """Classifier over every frame (LRCN-like with a GRU, or plain IndRNN)."""

    has_selector = False

    def __init__(self, cls_config: ClassifierConfig, input_dim: int):
        self.classifier = Classifier(cls_config, input_dim)
        self.input_dim = input_dim

    def init(self, seed: int, dtype=nx.TRAIN_DTYPE) -> dict[str, np.ndarray]:
        return self.classifier.init(_component_rng(seed, 0), dtype)

    def recurrent_keys(self) -> list[str]:
        return self.classifier.recurrent_keys()

    def train_loss(self, params, frames, label, rng=None, epoch=0, frozen=None):
        probs = self.classifier.classify(params, frames)
        L_C = nx.cross_entropy(probs, label)
        return L_C, StepRecord(float(L_C.data), correct=predict(probs) == label)

    def infer(self, params, frames) -> tuple[np.ndarray, SelectionTrace | None]:
        tensors = {k: Tensor(v) for k, v in params.items()}
        return self.classifier.classify(tensors, frames).data, None


class SelectionPipeline:
    """RNN+ / SRNN+: selector -> threshold -> straight-through gated frames -> classifier.

    ``keep_all`` pins every keep probability to 1 (selection disabled).
    During the first ``warmup`` epochs every frame is kept but still gated,
    so the classifier trains on whole sequences while the gate gradients
    already tell the selector which frames help.
    """

    has_selector = True

    def __init__(self, sel_config: SelectorConfig, cls_config: ClassifierConfig, input_dim: int,
                 keep_all: bool = False, warmup: int = 0):
        self.selector = Selector(sel_config, input_dim)
        self.classifier = Classifier(cls_config, input_dim)
        self.config = sel_config
        self.input_dim = input_dim
        self.keep_all = keep_all
        self.warmup = warmup

    def init(self, seed: int, dtype=nx.TRAIN_DTYPE):
        params = self.classifier.init(_component_rng(seed, 0), dtype)
        params.update(self.selector.init(_component_rng(seed, 1), dtype))
        return params

    def recurrent_keys(self):
        return self.classifier.recurrent_keys() + self.selector.recurrent_keys()

    def _probabilities(self, params, frames, frozen: StepRecord | None):
        if self.keep_all:
            n = nx.as_tensor(frames).shape[0]
            return Tensor(np.ones(n, dtype=nx.as_tensor(frames).dtype)), []
        return self.selector.score(params, frames, None if frozen is None else frozen.skip_traces)

    def train_loss(self, params, frames, label, rng=None, epoch=0, frozen: StepRecord | None = None):
        """Combined loss L_C + lambda * L_R.

        With ``frozen`` (a record from an earlier pass) the skip gates,
        keep/delete decisions and gate references are replayed, making the
        loss a smooth function of the parameters.
        """
        p, skip_traces = self._probabilities(params, frames, frozen)
        if frozen is not None:
            trace = frozen.selection
        elif epoch < self.warmup:
            trace = SelectionTrace(p.data, np.ones(len(p.data), dtype=np.int8))
        else:
            trace = decide(p.data)
        reference = None if frozen is None else frozen.p_reference
        x = gated_forward(trace, p, frames, reference)
        probs = self.classifier.classify(params, x)
        L_C = nx.cross_entropy(probs, label)
        L_R = reducing_loss(p, self.config.m_R)
        loss = rnn_total_loss(L_C, L_R, self.config.lam)
        record = StepRecord(
            float(L_C.data), float(L_R.data), correct=predict(probs) == label, usage=trace.usage,
            selection=trace, p_reference=p.data.copy(), skip_traces=skip_traces,
        )
        return loss, record

    def infer(self, params, frames):
        tensors = {k: Tensor(v) for k, v in params.items()}
        p, _ = self._probabilities(tensors, frames, None)
        trace = decide(p.data)
        x = nx.take(nx.as_tensor(frames), trace.kept)
        return self.classifier.classify(tensors, x).data, trace


class PolicyPipeline:
    """RL+: Bernoulli frame policy trained by REINFORCE, classifier by cross-entropy."""

    has_selector = True

    def __init__(self, sel_config: SelectorConfig, cls_config: ClassifierConfig, input_dim: int,
                 reward_config: RewardConfig | None = None, warmup: int = 5, anneal: int = 10):
        self.policy = Selector(sel_config, input_dim, prefix="pol")
        self.classifier = Classifier(cls_config, input_dim)
        self.reward_config = reward_config or RewardConfig()
        self.warmup, self.anneal = warmup, anneal
        self.input_dim = input_dim
        self.baseline_value = 0.0

    def init(self, seed: int, dtype=nx.TRAIN_DTYPE):
        params = self.classifier.init(_component_rng(seed, 0), dtype)
        params.update(self.policy.init(_component_rng(seed, 1), dtype))
        return params

    def recurrent_keys(self):
        return self.classifier.recurrent_keys() + self.policy.recurrent_keys()

    def train_loss(self, params, frames, label, rng=None, epoch=0, frozen=None):
        if rng is None:
            raise ValueError("RL+ training needs a random source for action sampling")
        p, _ = self.policy.score(params, frames)
        eps = curriculum_keep_floor(epoch, self.warmup, self.anneal)
        sample = sample_actions(p, rng, eps)
        if sample.K == 0:
            # nothing to classify: scored as a wrong prediction
            L_C, correct = None, False
        else:
            x = nx.take(nx.as_tensor(frames), np.flatnonzero(sample.Y))
            probs = self.classifier.classify(params, x)
            L_C = nx.cross_entropy(probs, label)
            correct = predict(probs) == label
        sample.reward = reward(correct, sample.K, sample.N, self.reward_config)
        term = reinforce_term(sample, self.baseline_value)
        loss = term if L_C is None else L_C + term
        record = StepRecord(
            0.0 if L_C is None else float(L_C.data), reward=sample.reward, correct=correct,
            usage=100.0 * sample.K / sample.N,
        )
        return loss, record

    def infer(self, params, frames):
        tensors = {k: Tensor(v) for k, v in params.items()}
        p, _ = self.policy.score(tensors, frames)
        trace = decide(p.data)
        x = nx.take(nx.as_tensor(frames), trace.kept)
        return self.classifier.classify(tensors, x).data, trace
