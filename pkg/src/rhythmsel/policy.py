"""RL+ frame policy: Bernoulli actions, usage reward, REINFORCE surrogate, curriculum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor

P_CLAMP = 1e-6


class PolicyError(ValueError):
    pass


@dataclass
class RewardConfig:
    gamma: float = 1.0

    def __post_init__(self):
        if self.gamma < 0:
            raise PolicyError("gamma must be >= 0")


@dataclass
class ActionSample:
    Y: np.ndarray
    log_prob: Tensor
    forced: np.ndarray
    reward: float | None = None

    @property
    def K(self) -> int:
        return int(self.Y.sum())

    @property
    def N(self) -> int:
        return len(self.Y)


def log_likelihood(p, Y: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """sum_i log(p_i Y_i + (1 - p_i)(1 - Y_i)) over unmasked frames, p clamped first."""
    p = nx.clip(nx.as_tensor(p), P_CLAMP, 1.0 - P_CLAMP)
    Y = np.asarray(Y, dtype=p.dtype)
    terms = nx.log(p * Y + (1.0 - p) * (1.0 - Y))
    if mask is not None:
        terms = terms * np.asarray(mask, dtype=p.dtype)
    return nx.total(terms)


def sample_actions(p, rng: np.random.Generator, keep_floor: float = 0.0) -> ActionSample:
    """Draw Y_i ~ Bernoulli(p_i).

    With ``keep_floor`` = eps, each frame is independently forced to "keep"
    with probability eps; forced frames do not enter ``log_prob``. Both random
    draws are always made so the stream consumption does not depend on eps.
    """
    p = nx.as_tensor(p)
    probs = np.clip(p.data, P_CLAMP, 1.0 - P_CLAMP)
    draws = rng.random(len(probs))
    forced = rng.random(len(probs)) < keep_floor
    Y = (draws < probs).astype(np.int8)
    Y[forced] = 1
    return ActionSample(Y, log_likelihood(p, Y, ~forced), forced)


def reward(correct: bool, K: int, N: int, cfg: RewardConfig | None = None) -> float:
    """1 - (K/N)^2 when the prediction is right, -gamma otherwise."""
    cfg = cfg or RewardConfig()
    if N < 1 or K < 0:
        raise PolicyError(f"need N >= 1 and K >= 0, got K={K}, N={N}")
    if K > N:
        raise PolicyError(f"K={K} exceeds N={N}")
    if correct:
        return 1.0 - (K / N) ** 2
    return -cfg.gamma


def reinforce_term(sample: ActionSample, baseline: float = 0.0) -> Tensor:
    """-R * log pi(Y|X); R is a constant so only log pi carries gradient."""
    if sample.reward is None:
        raise PolicyError("sample has no reward yet")
    return sample.log_prob * (-(sample.reward - baseline))


def rl_total_loss(L_C, sample: ActionSample, baseline: float = 0.0):
    return L_C + reinforce_term(sample, baseline)


def curriculum_keep_floor(epoch: int, warmup: int = 5, anneal: int = 10) -> float:
    """1 during warm-up, then a linear ramp down to 0 over ``anneal`` epochs."""
    if warmup < 0 or anneal < 0:
        raise PolicyError("warmup and anneal must be >= 0")
    if epoch < warmup:
        return 1.0
    if anneal == 0:
        return 0.0
    return float(max(0.0, 1.0 - (epoch - warmup) / anneal))


class MovingBaseline:
    """Exponential moving average of rewards; off unless the harness enables it."""

    def __init__(self, momentum: float = 0.9):
        self.momentum = momentum
        self.value = 0.0
        self.initialized = False

    def update(self, r: float) -> float:
        if not self.initialized:
            self.value, self.initialized = r, True
        else:
            self.value = self.momentum * self.value + (1 - self.momentum) * r
        return self.value
