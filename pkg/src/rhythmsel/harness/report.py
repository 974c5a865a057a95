"""Rendering: plain-text tables, TSV/JSONL records and matplotlib figures."""

from __future__ import annotations

import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DASH = "—"

STYLE = {
    "figure.figsize": (6.4, 3.6),
    "figure.dpi": 110,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _fmt(value, digits: int = 1) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return DASH
    return f"{value:.{digits}f}"


def metrics_text(tables) -> str:
    """Aligned table in the usual ``original | S1 | S2 | S3 | Usage`` layout."""
    scenarios = []
    for t in tables:
        for s in t.scenarios:
            if s not in scenarios:
                scenarios.append(s)
    header = ["variant"] + [s.upper() if s.startswith("s") else s for s in scenarios] + ["usage"]
    body = []
    for t in tables:
        accs = {r.scenario: r.accuracy for r in t.rows}
        body.append([t.variant] + [_fmt(accs.get(s)) for s in scenarios] + [_fmt(t.usage)])
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in body]
    return "\n".join(lines)


def per_class_text(table) -> str:
    lines = [f"per-class accuracy ({table.variant})"]
    for row in table.rows:
        lines.append(f"  {row.scenario:<10} " + " ".join(_fmt(a).rjust(6) for a in row.per_class))
    return "\n".join(lines)


def write_jsonl(path, records) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def write_tsv(path, records, columns=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = list(records)
    if columns is None:
        columns = []
        for rec in records:
            columns += [k for k in rec if k not in columns and not isinstance(rec[k], (list, dict))]
    with open(path, "w") as fh:
        fh.write("\t".join(columns) + "\n")
        for rec in records:
            cells = []
            for c in columns:
                v = rec.get(c)
                cells.append("" if v is None else (f"{v:.6g}" if isinstance(v, float) else str(v)))
            fh.write("\t".join(cells) + "\n")
    return path


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_metrics(tables, path) -> Path:
    """Grouped bars: accuracy per scenario for each variant."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        scenarios = list(dict.fromkeys(s for t in tables for s in t.scenarios))
        x = np.arange(len(scenarios))
        width = 0.8 / max(len(tables), 1)
        for k, t in enumerate(tables):
            accs = {r.scenario: r.accuracy for r in t.rows}
            heights = [accs.get(s, np.nan) for s in scenarios]
            label = t.variant if t.usage is None else f"{t.variant} ({t.usage:.1f}% frames)"
            ax.bar(x + (k - (len(tables) - 1) / 2) * width, heights, width, label=label)
        ax.set_xticks(x, scenarios)
        ax.set_ylim(0, 100)
        ax.set_ylabel("accuracy (%)")
        ax.legend(loc="lower left")
        return _save(fig, path)


def plot_sweep(rows, path) -> Path:
    with plt.rc_context(STYLE):
        fig, (left, right) = plt.subplots(1, 2)
        m = [r.m_R for r in rows]
        right.plot(m, [r.metrics.usage for r in rows], "o-", color="k")
        right.set_xlabel("m_R")
        right.set_ylabel("frame usage (%)")
        for scenario in rows[0].metrics.scenarios:
            left.plot(m, [r.metrics[scenario].accuracy for r in rows], "o-", label=scenario)
        left.set_xlabel("m_R")
        left.set_ylabel("accuracy (%)")
        left.legend()
        return _save(fig, path)


def plot_traces(pairs, path, limit: int = 6) -> Path:
    """Keep probabilities over time, kept frames marked, discriminative spans shaded."""
    pairs = list(pairs)[:limit]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(pairs), 1, figsize=(6.4, 1.1 * len(pairs) + 0.6), sharex=True,
                                 squeeze=False)
        for ax, (seq, trace) in zip(axes[:, 0], pairs):
            t = np.arange(trace.N)
            if seq.discriminative is not None:
                ax.fill_between(t, 0, 1, where=seq.discriminative.astype(bool), color="0.85", step="mid")
            ax.plot(t, trace.p, lw=0.8, color="k")
            ax.plot(trace.kept, trace.p[trace.kept], "|", color="C3", ms=6)
            ax.axhline(0.5, lw=0.5, ls=":", color="0.4")
            ax.set_ylim(-0.05, 1.05)
            ax.set_ylabel(seq.id, rotation=0, ha="right", fontsize=7)
        axes[-1, 0].set_xlabel("frame")
        return _save(fig, path)


def plot_history(history, path) -> Path:
    with plt.rc_context(STYLE):
        fig, (left, right) = plt.subplots(1, 2)
        epochs = [h["epoch"] for h in history]
        left.plot(epochs, [h["L_C"] for h in history], label="L_C")
        if any(h.get("L_R") is not None for h in history):
            left.plot(epochs, [h["L_R"] for h in history], label="L_R")
        left.set_xlabel("epoch")
        left.legend()
        right.plot(epochs, [h["train_acc"] for h in history], label="train")
        if any(h.get("val_acc") is not None for h in history):
            right.plot(epochs, [h["val_acc"] for h in history], label="validation")
        right.set_xlabel("epoch")
        right.set_ylabel("accuracy (%)")
        right.legend()
        return _save(fig, path)
