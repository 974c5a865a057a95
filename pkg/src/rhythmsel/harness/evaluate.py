"""Scenario evaluation, the m_R sweep, trace export and the segment-map enrichment oracle."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..classifier import predict
from ..rhythm import Dataset, FeatureSequence, ScenarioSpec, resample
from ..selector import format_trace_line
from .checkpoint import Checkpoint
from .config import ExperimentConfig, build_model
from .train import train


class EvaluationError(ValueError):
    pass


@dataclass
class ScenarioResult:
    scenario: str
    accuracy: float
    usage: float | None
    per_class: list[float]
    seconds: float
    repeats: int = 1

    def as_record(self, variant: str = "") -> dict:
        return {
            "variant": variant,
            "scenario": self.scenario,
            "accuracy": self.accuracy,
            "usage": self.usage,
            "per_class": self.per_class,
            "repeats": self.repeats,
            "seconds": self.seconds,
        }


@dataclass
class MetricsTable:
    variant: str
    rows: list[ScenarioResult] = field(default_factory=list)

    def __getitem__(self, scenario: str) -> ScenarioResult:
        for row in self.rows:
            if row.scenario == scenario:
                return row
        raise KeyError(scenario)

    @property
    def scenarios(self) -> list[str]:
        return [r.scenario for r in self.rows]

    @property
    def usage(self) -> float | None:
        """Mean usage on the unperturbed test set (or the first scenario evaluated)."""
        if not self.rows:
            return None
        try:
            return self["original"].usage
        except KeyError:
            return self.rows[0].usage

    def records(self) -> list[dict]:
        return [r.as_record(self.variant) for r in self.rows]


def _check_compatible(ckpt: Checkpoint, dataset: Dataset) -> None:
    if ckpt.dim != dataset.dim or ckpt.n_classes != dataset.n_classes:
        raise EvaluationError(
            f"checkpoint expects dim={ckpt.dim}, classes={ckpt.n_classes}; "
            f"dataset has dim={dataset.dim}, classes={dataset.n_classes}"
        )


def _run(model, params, seqs: list[FeatureSequence], n_classes: int):
    hits = np.zeros(n_classes)
    totals = np.zeros(n_classes)
    kept = frames = 0
    traces = []
    for seq in seqs:
        probs, trace = model.infer(params, seq.frames)
        totals[seq.label] += 1
        hits[seq.label] += predict(probs) == seq.label
        traces.append(trace)
        if trace is not None:
            kept += trace.K
            frames += trace.N
    usage = 100.0 * kept / frames if frames else None
    return hits, totals, usage, traces


def evaluate(ckpt: Checkpoint, dataset: Dataset, scenarios: list[ScenarioSpec] | None = None,
             split: str = "test") -> MetricsTable:
    """Accuracy and usage per scenario; random scenarios are averaged over their repeats.

    Usage is pooled over frames (total kept / total frames) and is None for
    pipelines without a selector.
    """
    _check_compatible(ckpt, dataset)
    scenarios = scenarios if scenarios is not None else ckpt.config.scenario_specs()
    model = build_model(ckpt.config, ckpt.dim, ckpt.n_classes)
    seqs = dataset.test if split == "test" else dataset.train
    if not seqs:
        raise EvaluationError(f"empty {split} split")
    table = MetricsTable(ckpt.config.variant)
    for scenario in scenarios:
        t0 = time.perf_counter()
        repeats = scenario.repeats if scenario.is_random else 1
        hits = np.zeros(ckpt.n_classes)
        totals = np.zeros(ckpt.n_classes)
        usages = []
        for r in range(repeats):
            view = [
                resample(s, scenario, seed=[scenario.seed, r, i] if scenario.is_random else None)
                for i, s in enumerate(seqs)
            ]
            h, t, u, _ = _run(model, ckpt.params, view, ckpt.n_classes)
            hits += h
            totals += t
            if u is not None:
                usages.append(u)
        per_class = [float(100.0 * h / t) if t else float("nan") for h, t in zip(hits, totals)]
        table.rows.append(ScenarioResult(
            scenario.name,
            float(100.0 * hits.sum() / totals.sum()),
            float(np.mean(usages)) if usages else None,
            per_class,
            time.perf_counter() - t0,
            repeats,
        ))
    return table


@dataclass
class SweepRow:
    m_R: float
    metrics: MetricsTable

    def as_record(self) -> dict:
        out = {"m_R": self.m_R, "usage": self.metrics.usage}
        for row in self.metrics.rows:
            out[row.scenario] = row.accuracy
        return out


def sweep_mr(config: ExperimentConfig, dataset: Dataset, values, progress=None) -> list[SweepRow]:
    """One full train + evaluate per m_R value at the config's fixed seed."""
    values = [float(v) for v in values]
    if not values:
        raise EvaluationError("sweep needs at least one m_R value")
    if any(not 0.0 < v < 1.0 for v in values):
        raise EvaluationError(f"m_R values must lie in (0, 1), got {values}")
    rows = []
    for value in values:
        cfg = config.replace(m_R=value)
        result = train(cfg, dataset)
        ckpt = Checkpoint(cfg, result.params, dataset.n_classes, dataset.dim)
        rows.append(SweepRow(value, evaluate(ckpt, dataset)))
        if progress is not None:
            progress(rows[-1])
    return rows


def collect_traces(ckpt: Checkpoint, dataset: Dataset, split: str = "test"):
    _check_compatible(ckpt, dataset)
    model = build_model(ckpt.config, ckpt.dim, ckpt.n_classes)
    if not getattr(model, "has_selector", False):
        raise EvaluationError(f"variant {ckpt.config.variant!r} has no selector to trace")
    seqs = dataset.test if split == "test" else dataset.train
    _, _, _, traces = _run(model, ckpt.params, seqs, ckpt.n_classes)
    return list(zip(seqs, traces))


def export_traces(ckpt: Checkpoint, dataset: Dataset, path, split: str = "test") -> Path:
    """One trace line per sequence: id, N, K, usage, p-list, y-list."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pairs = collect_traces(ckpt, dataset, split)
    with open(path, "w") as fh:
        for seq, trace in pairs:
            fh.write(format_trace_line(seq.id, trace) + "\n")
    return path


@dataclass
class Enrichment:
    kept_in_disc: int
    kept: int
    disc_frames: int
    frames: int

    @property
    def kept_rate(self) -> float:
        return self.kept_in_disc / self.kept if self.kept else 0.0

    @property
    def base_rate(self) -> float:
        return self.disc_frames / self.frames if self.frames else 0.0

    @property
    def ratio(self) -> float:
        return self.kept_rate / self.base_rate if self.base_rate else float("nan")


def enrichment(pairs) -> Enrichment:
    """How over-represented discriminative frames are among the kept ones."""
    out = Enrichment(0, 0, 0, 0)
    for seq, trace in pairs:
        if seq.discriminative is None:
            raise EvaluationError(f"sequence {seq.id!r} carries no segment map")
        disc = seq.discriminative.astype(bool)
        out.kept_in_disc += int(np.sum(disc & (trace.y == 1)))
        out.kept += trace.K
        out.disc_frames += int(disc.sum())
        out.frames += trace.N
    return out
