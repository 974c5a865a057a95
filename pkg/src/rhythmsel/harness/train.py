"""Joint training loop for every pipeline variant."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import numerics as nx
from ..cells import U_MAX, clip_recurrent
from ..classifier import predict
from ..numerics import AdamState, GradTape, NonFiniteError, Tensor, adam_step
from ..policy import MovingBaseline
from ..rhythm import Dataset, FeatureSequence, train_subsample
from .checkpoint import save_checkpoint
from .config import ExperimentConfig, build_model

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, dump: Path | None = None):
        super().__init__(message)
        self.dump = dump


@dataclass
class EpochLog:
    epoch: int
    L_C: float
    L_R: float | None
    mean_reward: float | None
    train_acc: float
    usage: float | None
    val_acc: float | None
    val_loss: float | None
    seconds: float

    def as_row(self) -> dict:
        return self.__dict__.copy()


@dataclass
class TrainResult:
    config: ExperimentConfig
    params: dict[str, np.ndarray]
    history: list[EpochLog] = field(default_factory=list)
    best_epoch: int = -1
    n_classes: int = 0
    dim: int = 0

    @property
    def final_losses(self) -> tuple[float, ...]:
        last = self.history[-1] if self.history else None
        if last is None:
            return ()
        return (last.L_C, last.L_R if last.L_R is not None else 0.0)


def split_validation(seqs: list[FeatureSequence], fraction: float, seed: int):
    if fraction <= 0 or len(seqs) < 2:
        return list(seqs), []
    order = np.random.default_rng([seed, 7]).permutation(len(seqs))
    n_val = max(1, int(round(fraction * len(seqs))))
    val = [seqs[i] for i in sorted(order[:n_val])]
    fit = [seqs[i] for i in sorted(order[n_val:])]
    return fit, val


def _val_metrics(model, params, seqs):
    correct, loss = 0, 0.0
    for seq in seqs:
        probs, _ = model.infer(params, seq.frames)
        correct += predict(probs) == seq.label
        loss += -np.log(max(float(probs[seq.label]), nx.PROB_FLOOR))
    return 100.0 * correct / len(seqs), loss / len(seqs)


def train(config: ExperimentConfig, dataset: Dataset, dump_dir=None, progress=None) -> TrainResult:
    """Train ``config.variant`` on ``dataset.train``; keeps the best-validation parameters.

    Deterministic for a given (config, seed): every random draw comes from
    streams derived from ``config.seed``.
    """
    config.validate(require_seed=True)
    seed = int(config.seed)
    model = build_model(config, dataset.dim, dataset.n_classes)
    params = model.init(seed)
    keys = sorted(params)
    clip_keys = model.recurrent_keys()
    state = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)

    pool = [train_subsample(s, config.train_stride, config.train_trim) for s in dataset.train]
    fit, val = split_validation(pool, config.val_fraction, seed)
    shuffle_rng = np.random.default_rng([seed, 2])
    sample_rng = np.random.default_rng([seed, 3])
    mover = MovingBaseline() if config.baseline_enabled else None

    result = TrainResult(config, params, n_classes=dataset.n_classes, dim=dataset.dim)
    best_key = None
    since_best = 0

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(fit))
        sums = {"L_C": 0.0, "L_R": 0.0, "reward": 0.0, "correct": 0, "usage": 0.0}
        has_lr = has_reward = has_usage = False
        acc_grads = None
        in_batch = 0
        for position, index in enumerate(order):
            seq = fit[index]
            tensors = {k: Tensor(params[k], requires_grad=True) for k in keys}
            if mover is not None:
                model.baseline_value = mover.value
            try:
                with GradTape() as tape:
                    loss, rec = model.train_loss(tensors, seq.frames, seq.label, sample_rng, epoch)
                grads = tape.gradient(loss, [tensors[k] for k in keys])
            except NonFiniteError as exc:
                raise TrainingDiverged(
                    f"non-finite value at epoch {epoch}, sequence {seq.id}: {exc}",
                    _dump(dump_dir, config, params, result, dataset),
                ) from exc
            if mover is not None and rec.reward is not None:
                mover.update(rec.reward)
            sums["L_C"] += rec.L_C
            sums["correct"] += int(rec.correct)
            if rec.L_R is not None:
                sums["L_R"] += rec.L_R
                has_lr = True
            if rec.reward is not None:
                sums["reward"] += rec.reward
                has_reward = True
            if rec.usage is not None:
                sums["usage"] += rec.usage
                has_usage = True
            if acc_grads is None:
                acc_grads = grads
            else:
                acc_grads = [a + g for a, g in zip(acc_grads, grads)]
            in_batch += 1
            if in_batch == config.accum or position == len(order) - 1:
                mean_grads = {k: (g / in_batch).astype(params[k].dtype) for k, g in zip(keys, acc_grads)}
                params, state = adam_step(params, mean_grads, state)
                params = clip_recurrent(params, clip_keys, U_MAX)
                if not all(np.all(np.isfinite(v)) for v in params.values()):
                    raise TrainingDiverged(
                        f"non-finite parameters after update at epoch {epoch}",
                        _dump(dump_dir, config, params, result, dataset),
                    )
                acc_grads, in_batch = None, 0

        n = max(len(fit), 1)
        val_acc = val_loss = None
        if val:
            val_acc, val_loss = _val_metrics(model, params, val)
        entry = EpochLog(
            epoch,
            sums["L_C"] / n,
            sums["L_R"] / n if has_lr else None,
            sums["reward"] / n if has_reward else None,
            100.0 * sums["correct"] / n,
            sums["usage"] / n if has_usage else None,
            val_acc,
            val_loss,
            time.perf_counter() - t0,
        )
        result.history.append(entry)
        if progress is not None:
            progress(entry)
        log.info("epoch %d %s", epoch, entry.as_row())

        if val:
            key = (val_acc, -val_loss)
            if best_key is None or key > best_key:
                best_key, since_best = key, 0
                result.params, result.best_epoch = dict(params), epoch
            else:
                since_best += 1
                if since_best >= config.patience:
                    break
        else:
            result.params, result.best_epoch = dict(params), epoch
    if config.epochs == 0:
        result.params = params
    return result


def _dump(dump_dir, config, params, result, dataset) -> Path | None:
    if dump_dir is None:
        return None
    path = Path(dump_dir) / "diverged.npz"
    save_checkpoint(path, config, params, dataset.n_classes, dataset.dim,
                    history=[e.as_row() for e in result.history])
    return path
