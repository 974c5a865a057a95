"""Feature sequences, the synthetic rhythm benchmark, and rhythm transforms.

A :class:`FeatureSequence` is one event instance: an ``(N, D)`` float32
matrix of per-frame features and an event label. Synthetic sequences also
carry a segment map (sub-activity id and discriminative flag per frame).

Test-time scenarios:

* ``original`` -- identity
* ``s1`` -- split into three intervals, keep every 2nd / every frame / every 5th
* ``s2`` -- the reverse, strides 5 / 1 / 2
* ``s3`` -- a sorted random half of the frames, without replacement
* ``custom`` -- user-supplied interval strides
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"FSEQ1"
_HEADER = struct.Struct("<IIII")
MAX_ELEMENTS = 1 << 31


class FormatError(ValueError):
    """Malformed feature file or dataset directory."""


class TransformError(ValueError):
    """A rhythm transform cannot be applied to this sequence."""


@dataclass
class FeatureSequence:
    id: str
    frames: np.ndarray
    label: int
    segment_ids: np.ndarray | None = None
    discriminative: np.ndarray | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError(f"sequence {self.id!r}: frames must be (N>=1, D), got {self.frames.shape}")
        n = self.frames.shape[0]
        for name in ("segment_ids", "discriminative"):
            value = getattr(self, name)
            if value is not None and len(value) != n:
                raise ValueError(f"sequence {self.id!r}: {name} covers {len(value)} frames, expected {n}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def subset(self, indices: np.ndarray, suffix: str = "") -> "FeatureSequence":
        """Frames at ``indices`` (kept in the given order), label untouched."""
        indices = np.asarray(indices, dtype=np.int64)
        return FeatureSequence(
            self.id + suffix,
            self.frames[indices],
            self.label,
            None if self.segment_ids is None else self.segment_ids[indices],
            None if self.discriminative is None else self.discriminative[indices],
        )


@dataclass
class Dataset:
    train: list[FeatureSequence]
    test: list[FeatureSequence]
    n_classes: int
    dim: int


# --------------------------------------------------------------------------
# synthetic benchmark
# --------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Knobs of the synthetic rhythm-varying benchmark.

    The ``n_subactivities`` pool is split into ``n_discriminative`` exclusive
    sub-activities per class and a shared remainder. Each sequence is a run
    of ``n_filler`` shared segments plus one segment of its class's own
    sub-activity, inserted at a random position. Segment frames are the
    sub-activity prototype plus Gaussian noise.

    ``tempo_spread`` in [0, 1] gives each class its own pace: filler
    durations for class ``c`` are drawn from a class-specific window that
    covers ``1 - tempo_spread`` of ``duration`` (0 means every class uses the
    full range).

    ``disc_separation`` (optional) places every exclusive sub-activity near a
    common anchor at distance ``disc_separation`` from it: they stand out
    from the shared ones but tell the classes apart only through the
    smaller offset.

    ``offset`` is added to every coordinate of every prototype, giving all
    frames a shared positive component, as in rectified CNN features.
    """

    n_classes: int = 6
    n_subactivities: int = 14
    n_discriminative: int = 1
    n_filler: tuple[int, int] = (3, 4)
    duration: tuple[int, int] = (10, 40)
    disc_duration: tuple[int, int] | None = None
    tempo_spread: float = 0.0
    dim: int = 32
    noise: float = 1.0
    separation: float = 1.0
    disc_separation: float | None = None
    offset: float = 0.0
    n_train: int = 200
    n_test: int = 100

    @property
    def n_shared(self) -> int:
        return self.n_subactivities - self.n_classes * self.n_discriminative

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.n_discriminative < 1:
            raise ValueError("every class needs at least one discriminative sub-activity")
        if self.n_classes * self.n_discriminative > self.n_subactivities:
            raise ValueError(
                f"infeasible: {self.n_classes * self.n_discriminative} discriminative sub-activities "
                f"but only {self.n_subactivities} in the pool"
            )
        if self.n_shared < 1 and self.n_filler[1] > 0:
            raise ValueError("filler segments requested but the shared pool is empty")
        lo, hi = self.duration
        if lo < 1 or hi < lo:
            raise ValueError(f"bad duration range {self.duration}")
        if not 0.0 <= self.tempo_spread < 1.0:
            raise ValueError("tempo_spread must lie in [0, 1)")
        if self.n_filler[0] < 0 or self.n_filler[1] < self.n_filler[0]:
            raise ValueError(f"bad filler count range {self.n_filler}")
        if self.dim < 1 or self.noise < 0:
            raise ValueError("dim must be >= 1 and noise >= 0")


# Tuned so the rhythm-robustness and usage trends show up at desk scale.
PAPER_TREND = SyntheticSpec(
    n_filler=(3, 3), disc_duration=(18, 22), tempo_spread=0.95, noise=1.0,
    separation=10.0, disc_separation=3.0, offset=2.0,
)
PAPER_TREND_SEED = 1234

# Short, low-noise sequences whose class is readable from any exclusive frame.
SEPARABLE_TOY = SyntheticSpec(
    n_classes=3, n_subactivities=6, n_filler=(1, 2), duration=(4, 8), dim=8,
    noise=0.3, separation=3.0, n_train=60, n_test=30,
)


def _prototypes(rng: np.random.Generator, count: int, dim: int, scale: float) -> np.ndarray:
    v = rng.standard_normal((count, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return (scale * v).astype(np.float32)


def _tempo_window(spec: SyntheticSpec, label: int) -> tuple[int, int]:
    lo, hi = spec.duration
    if spec.tempo_spread == 0.0 or spec.n_classes == 1:
        return lo, hi
    width = (hi - lo) * (1.0 - spec.tempo_spread)
    start = lo + (hi - lo - width) * label / (spec.n_classes - 1)
    return int(round(start)), int(round(start + width))


def generate_dataset(spec: SyntheticSpec, seed: int) -> Dataset:
    """Deterministic train/test split of synthetic events for ``seed``."""
    spec.validate()
    rng = np.random.default_rng(seed)
    shared = _prototypes(rng, spec.n_shared, spec.dim, spec.separation)
    n_disc = spec.n_classes * spec.n_discriminative
    if spec.disc_separation is None:
        disc = _prototypes(rng, n_disc, spec.dim, spec.separation)
    else:
        anchor = _prototypes(rng, 1, spec.dim, spec.separation)
        disc = anchor + _prototypes(rng, n_disc, spec.dim, spec.disc_separation)
    protos = np.concatenate([shared, disc]) + np.float32(spec.offset)
    disc_range = spec.disc_duration or spec.duration

    def make(index: int, label: int, split: str) -> FeatureSequence:
        n_fill = int(rng.integers(spec.n_filler[0], spec.n_filler[1] + 1))
        segments = [int(s) for s in rng.integers(0, spec.n_shared, n_fill)]
        own = spec.n_shared + label * spec.n_discriminative + int(rng.integers(spec.n_discriminative))
        segments.insert(int(rng.integers(0, n_fill + 1)), own)
        lo, hi = _tempo_window(spec, label)
        ids, flags, rows = [], [], []
        for seg in segments:
            is_disc = seg >= spec.n_shared
            a, b = disc_range if is_disc else (lo, hi)
            d = int(rng.integers(a, b + 1))
            noise = rng.standard_normal((d, spec.dim)).astype(np.float32) * np.float32(spec.noise)
            rows.append(protos[seg] + noise)
            ids.extend([seg] * d)
            flags.extend([is_disc] * d)
        return FeatureSequence(
            f"{split}{index:05d}",
            np.concatenate(rows),
            label,
            np.asarray(ids, dtype=np.int32),
            np.asarray(flags, dtype=bool),
        )

    def split(count: int, name: str) -> list[FeatureSequence]:
        labels = np.arange(count) % spec.n_classes
        rng.shuffle(labels)
        return [make(i, int(lbl), name) for i, lbl in enumerate(labels)]

    train = split(spec.n_train, "train")
    test = split(spec.n_test, "test")
    return Dataset(train, test, spec.n_classes, spec.dim)


# --------------------------------------------------------------------------
# rhythm transforms
# --------------------------------------------------------------------------

SCENARIO_STRIDES = {"s1": (2, 1, 5), "s2": (5, 1, 2)}


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str = "original"
    strides: tuple[int, ...] = ()
    repeats: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("original", "s1", "s2", "s3", "custom"):
            raise ValueError(f"unknown scenario {self.kind!r}")
        if self.kind == "custom" and not self.strides:
            raise ValueError("custom scenario needs interval strides")
        if any(s < 1 for s in self.strides):
            raise ValueError("strides must be >= 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    @property
    def name(self) -> str:
        if self.kind == "custom":
            return "custom:" + "-".join(map(str, self.strides))
        return self.kind

    @property
    def interval_strides(self) -> tuple[int, ...]:
        return SCENARIO_STRIDES.get(self.kind, self.strides)

    @property
    def is_random(self) -> bool:
        return self.kind == "s3"

    @classmethod
    def parse(cls, text: str, repeats: int = 5, seed: int = 0) -> "ScenarioSpec":
        """``original``, ``s1``, ``s2``, ``s3`` or ``custom:2-1-5``."""
        text = text.strip().lower()
        if text.startswith("custom:"):
            strides = tuple(int(s) for s in text.split(":", 1)[1].split("-"))
            return cls("custom", strides, repeats, seed)
        return cls(text, (), repeats, seed)


def interval_bounds(n: int, parts: int = 3) -> list[tuple[int, int]]:
    """Equal split with the remainder going to the last interval."""
    size = n // parts
    bounds = [(i * size, (i + 1) * size) for i in range(parts - 1)]
    bounds.append(((parts - 1) * size, n))
    return bounds


def scenario_indices(n: int, scenario: ScenarioSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Strictly increasing frame indices kept by ``scenario`` for a length-``n`` sequence."""
    if scenario.kind == "original":
        return np.arange(n)
    if scenario.kind == "s3":
        if n < 2:
            raise TransformError("s3 needs at least 2 frames")
        if rng is None:
            raise TransformError("s3 needs a random source")
        return np.sort(rng.choice(n, size=n // 2, replace=False))
    strides = scenario.interval_strides
    if n < len(strides):
        raise TransformError(f"{scenario.name} needs at least {len(strides)} frames, got {n}")
    pieces = [np.arange(lo, hi, k) for (lo, hi), k in zip(interval_bounds(n, len(strides)), strides)]
    return np.concatenate(pieces)


def resample(seq: FeatureSequence, scenario: ScenarioSpec, seed: int | None = None) -> FeatureSequence:
    rng = None if seed is None else np.random.default_rng(seed)
    if scenario.kind == "s3" and rng is None:
        rng = np.random.default_rng(scenario.seed)
    if scenario.kind == "original":
        return seq
    return seq.subset(scenario_indices(seq.n_frames, scenario, rng))


def train_subsample(seq: FeatureSequence, stride: int = 1, trim: int = 0) -> FeatureSequence:
    """Drop ``trim`` frames at both ends, then keep every ``stride``-th frame."""
    if stride < 1 or trim < 0:
        raise TransformError("stride must be >= 1 and trim >= 0")
    n = seq.n_frames
    if n - 2 * trim < 2:
        # a single surviving frame carries no rhythm and no resampling scenario applies to it
        raise TransformError(f"sequence {seq.id!r} has {n} frames, too few left after trimming {trim} per end")
    if stride == 1 and trim == 0:
        return seq
    return seq.subset(np.arange(trim, n - trim, stride))


# --------------------------------------------------------------------------
# FSEQ1 files and dataset directories
# --------------------------------------------------------------------------

def encode_fseq(seq: FeatureSequence) -> bytes:
    ident = seq.id.encode("utf-8")
    n, d = seq.frames.shape
    payload = np.ascontiguousarray(seq.frames, dtype="<f4").tobytes()
    return MAGIC + _HEADER.pack(n, d, seq.label, len(ident)) + ident + payload


def decode_fseq(blob: bytes) -> FeatureSequence:
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic: not an FSEQ1 file")
    offset = len(MAGIC)
    if len(blob) < offset + _HEADER.size:
        raise FormatError("truncated header")
    n, d, label, id_len = _HEADER.unpack_from(blob, offset)
    offset += _HEADER.size
    if n == 0 or d == 0 or n * d >= MAX_ELEMENTS:
        raise FormatError(f"dimension overflow or empty payload: N={n}, D={d}")
    if len(blob) < offset + id_len:
        raise FormatError("truncated id")
    ident = blob[offset : offset + id_len].decode("utf-8")
    offset += id_len
    expected = n * d * 4
    if len(blob) - offset != expected:
        raise FormatError(f"truncated payload: expected {expected} bytes, found {len(blob) - offset}")
    frames = np.frombuffer(blob, dtype="<f4", count=n * d, offset=offset).reshape(n, d)
    return FeatureSequence(ident, frames.astype(np.float32), int(label))


def write_fseq(path, seq: FeatureSequence) -> None:
    Path(path).write_bytes(encode_fseq(seq))


def read_fseq(path) -> FeatureSequence:
    return decode_fseq(Path(path).read_bytes())


MANIFEST = "manifest.tsv"
SEGMENTS = "segments.tsv"


def write_dataset(directory, dataset: Dataset) -> Path:
    """Flat folder of ``<id>.fseq`` files plus ``manifest.tsv`` (and ``segments.tsv`` when known)."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    lines = [f"# n_classes={dataset.n_classes} dim={dataset.dim}", "id\tlabel\tsplit"]
    seg_lines = []
    for split, items in (("train", dataset.train), ("test", dataset.test)):
        for seq in items:
            write_fseq(root / f"{seq.id}.fseq", seq)
            lines.append(f"{seq.id}\t{seq.label}\t{split}")
            if seq.segment_ids is not None:
                flags = seq.discriminative.astype(int) if seq.discriminative is not None else np.zeros(seq.n_frames, int)
                seg_lines.append(
                    f"{seq.id}\t{','.join(map(str, seq.segment_ids))}\t{','.join(map(str, flags))}"
                )
    (root / MANIFEST).write_text("\n".join(lines) + "\n")
    if seg_lines:
        (root / SEGMENTS).write_text("\n".join(seg_lines) + "\n")
    return root


def read_dataset(directory) -> Dataset:
    root = Path(directory)
    manifest = root / MANIFEST
    if not manifest.is_file():
        raise FormatError(f"{root} has no {MANIFEST}")
    meta: dict[str, str] = {}
    rows = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            for token in line[1:].split():
                key, _, value = token.partition("=")
                meta[key] = value
            continue
        if line.startswith("id\t"):
            continue
        parts = line.split("\t")
        if len(parts) != 3 or parts[2] not in ("train", "test"):
            raise FormatError(f"bad manifest line: {line!r}")
        rows.append(parts)
    segments = {}
    if (root / SEGMENTS).is_file():
        for line in (root / SEGMENTS).read_text().splitlines():
            if line.strip():
                ident, ids, flags = line.split("\t")
                segments[ident] = (
                    np.array(ids.split(","), dtype=np.int32),
                    np.array(flags.split(","), dtype=np.int8).astype(bool),
                )
    train, test = [], []
    for ident, label, split in rows:
        seq = read_fseq(root / f"{ident}.fseq")
        if seq.id != ident or seq.label != int(label):
            raise FormatError(f"manifest disagrees with {ident}.fseq")
        if ident in segments:
            seq = replace(seq, segment_ids=segments[ident][0], discriminative=segments[ident][1])
        (train if split == "train" else test).append(seq)
    every = train + test
    if not every:
        raise FormatError(f"{root} lists no sequences")
    dims = {s.dim for s in every}
    if len(dims) != 1:
        raise FormatError(f"mixed feature dimensions {sorted(dims)}")
    n_classes = int(meta.get("n_classes", max(s.label for s in every) + 1))
    return Dataset(train, test, n_classes, dims.pop())


def label_counts(seqs: Iterable[FeatureSequence], n_classes: int) -> np.ndarray:
    counts = np.zeros(n_classes, dtype=int)
    for s in seqs:
        counts[s.label] += 1
    return counts
