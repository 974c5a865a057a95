"""Command line: generate, train, eval, resample, gradcheck, sweep, trace.

Exit codes by error family:
  0 ok, 2 usage/config, 3 data/format, 4 checkpoint, 5 training diverged,
  6 verification failed, 7 I/O, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

from ..rhythm import (
    Dataset,
    FormatError,
    ScenarioSpec,
    SyntheticSpec,
    TransformError,
    generate_dataset,
    read_dataset,
    resample,
    write_dataset,
)
from . import report
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import FIELD_TYPES, ConfigError, coerce, dump_config, load_config
from .evaluate import EvaluationError, collect_traces, enrichment, evaluate, export_traces, sweep_mr
from .train import TrainingDiverged, train

log = logging.getLogger("rhythmsel")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_DATA, EXIT_CHECKPOINT, EXIT_DIVERGED, EXIT_VERIFY, EXIT_IO = range(8)

PRESET_DIR = Path(__file__).resolve().parent.parent / "presets"


class VerificationFailed(RuntimeError):
    pass


def _config_overrides(args) -> dict:
    out = {}
    for key in FIELD_TYPES:
        value = getattr(args, f"cfg_{key}", None)
        if value is not None:
            out[key] = coerce(key, value)
    return out


def _add_config_flags(parser) -> None:
    group = parser.add_argument_group("config overrides (same names as the config file keys)")
    for key in FIELD_TYPES:
        if key == "data":  # has its own --data flag
            continue
        group.add_argument(f"--{key}", dest=f"cfg_{key}", metavar="V", default=None)


def resolve_config_path(name: str | None) -> Path | None:
    """A file path, or the name of a bundled preset (e.g. ``paper_trend``)."""
    if not name:
        return None
    path = Path(name)
    if path.is_file():
        return path
    preset = PRESET_DIR / f"{name}.cfg"
    if preset.is_file():
        return preset
    raise ConfigError(f"no config file or preset named {name!r}")


def _load(args):
    config = load_config(resolve_config_path(args.config), _config_overrides(args))
    if args.data:
        config = config.replace(data=args.data)
    return config


def _dataset(path) -> Dataset:
    if not path:
        raise ConfigError("no dataset directory given (use --data or the data config key)")
    return read_dataset(path)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args) -> int:
    spec = SyntheticSpec()
    if args.preset:
        spec = _preset_spec(args.preset)
    for item in args.set or []:
        key, _, value = item.partition("=")
        current = getattr(spec, key, None)
        if key not in {f.name for f in fields(SyntheticSpec)}:
            raise ConfigError(f"unknown synthetic spec key {key!r}")
        if isinstance(current, tuple):
            parsed = tuple(int(v) for v in value.split(","))
        elif current is None:
            parsed = json.loads(value)
            parsed = tuple(parsed) if isinstance(parsed, list) else parsed
        else:
            parsed = type(current)(value)
        spec = spec.__class__(**{**asdict(spec), key: parsed})
    seed = args.seed
    if seed is None:
        from ..rhythm import PAPER_TREND_SEED

        seed = PAPER_TREND_SEED if args.preset == "paper_trend" else 0
    dataset = generate_dataset(spec, seed)
    write_dataset(args.out, dataset)
    print(f"wrote {len(dataset.train)} train / {len(dataset.test)} test sequences to {args.out}")
    return EXIT_OK


def _preset_spec(name: str) -> SyntheticSpec:
    from .. import rhythm

    specs = {"default": SyntheticSpec(), "paper_trend": rhythm.PAPER_TREND, "toy": rhythm.SEPARABLE_TOY}
    if name not in specs:
        raise ConfigError(f"unknown synthetic preset {name!r}; choose from {sorted(specs)}")
    return specs[name]


def cmd_train(args) -> int:
    config = _load(args)
    if config.seed is None:
        raise ConfigError("--seed is required for training")
    config.validate(require_seed=True)
    dataset = _dataset(config.data)
    out = _out_dir(args.out)

    def progress(entry):
        if not args.quiet:
            print(
                f"epoch {entry.epoch:3d}  L_C {entry.L_C:.4f}  "
                f"{'L_R ' + format(entry.L_R, '.4f') if entry.L_R is not None else ''}"
                f"{'R ' + format(entry.mean_reward, '.3f') if entry.mean_reward is not None else ''}  "
                f"train {entry.train_acc:5.1f}%  val {report._fmt(entry.val_acc)}%  "
                f"usage {report._fmt(entry.usage)}  ({entry.seconds:.1f}s)",
                flush=True,
            )

    result = train(config, dataset, dump_dir=out, progress=progress)
    history = [e.as_row() for e in result.history]
    ckpt = save_checkpoint(out / "model.npz", config, result.params, dataset.n_classes, dataset.dim, history)
    (out / "config.cfg").write_text(dump_config(config))
    report.write_tsv(out / "train_log.tsv", history)
    if history:
        report.plot_history(history, out / "train_log.png")
    print(f"best epoch {result.best_epoch}; checkpoint {ckpt}")
    return EXIT_OK


def _scenarios(args, config) -> list[ScenarioSpec]:
    if not args.scenarios:
        return config.scenario_specs()
    return config.replace(scenarios=args.scenarios).scenario_specs()


def cmd_eval(args) -> int:
    tables = []
    for path in args.checkpoint:
        ckpt = load_checkpoint(path)
        dataset = _dataset(args.data or ckpt.config.data)
        tables.append(evaluate(ckpt, dataset, _scenarios(args, ckpt.config), split=args.split))
    print(report.metrics_text(tables))
    if args.per_class:
        for t in tables:
            print(report.per_class_text(t))
    if args.out:
        out = _out_dir(args.out)
        records = [r for t in tables for r in t.records()]
        report.write_jsonl(out / "metrics.jsonl", records)
        report.write_tsv(out / "metrics.tsv", records)
        report.plot_metrics(tables, out / "metrics.png")
        (out / "metrics.txt").write_text(report.metrics_text(tables) + "\n")
    return EXIT_OK


def cmd_resample(args) -> int:
    dataset = _dataset(args.data)
    scenario = ScenarioSpec.parse(args.scenario, seed=args.seed)
    view = Dataset(
        [resample(s, scenario, seed=[args.seed, 0, i] if scenario.is_random else None)
         for i, s in enumerate(dataset.train)],
        [resample(s, scenario, seed=[args.seed, 0, i] if scenario.is_random else None)
         for i, s in enumerate(dataset.test)],
        dataset.n_classes,
        dataset.dim,
    )
    write_dataset(args.out, view)
    print(f"{scenario.name}: wrote {len(view.train) + len(view.test)} sequences to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .verify import SUITE, TOLERANCE, run_suite

    unknown = sorted(set(args.only or ()) - set(SUITE))
    if unknown:
        raise ConfigError(f"unknown checks {unknown}; choose from {sorted(SUITE)}")
    failed = []

    def progress(res):
        if not res.passed:
            failed.append(res)
        if args.verbose:
            print(f"{res.name:<22} seed {res.seed:2d}  max rel err {res.max_error:.2e}")

    results = run_suite(range(args.seeds), args.only or None, progress)
    worst = {}
    for res in results:
        worst[res.name] = max(worst.get(res.name, 0.0), res.max_error)
    for name, err in worst.items():
        print(f"{'PASS' if err < TOLERANCE else 'FAIL'}  {name:<22} max rel err {err:.2e}")
    if failed:
        raise VerificationFailed(f"{len(failed)} gradient checks above {TOLERANCE:g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _load(args)
    if config.seed is None:
        raise ConfigError("--seed is required for the sweep")
    dataset = _dataset(config.data)
    values = [float(v) for v in args.values.split(",")]

    def progress(row):
        print(f"m_R {row.m_R:g}: usage {report._fmt(row.metrics.usage)}%  "
              + "  ".join(f"{r.scenario} {r.accuracy:.1f}" for r in row.metrics.rows), flush=True)

    rows = sweep_mr(config, dataset, values, progress)
    if args.out:
        out = _out_dir(args.out)
        records = [r.as_record() for r in rows]
        report.write_tsv(out / "sweep.tsv", records)
        report.write_jsonl(out / "sweep.jsonl", records)
        report.plot_sweep(rows, out / "sweep.png")
    return EXIT_OK


def cmd_trace(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    dataset = _dataset(args.data or ckpt.config.data)
    path = export_traces(ckpt, dataset, args.out, split=args.split)
    pairs = collect_traces(ckpt, dataset, args.split)
    print(f"wrote {len(pairs)} trace lines to {path}")
    if all(seq.discriminative is not None for seq, _ in pairs):
        e = enrichment(pairs)
        print(f"kept frames in discriminative segments: {100 * e.kept_rate:.1f}% "
              f"(base rate {100 * e.base_rate:.1f}%, ratio {e.ratio:.2f})")
    if args.figure:
        report.plot_traces(pairs, args.figure)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rhythmsel", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset directory")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=None, help="default 0, or the tuned seed for paper_trend")
    p.add_argument("--preset", default=None, help="default, paper_trend or toy")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a synthetic spec field")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one variant and write a checkpoint")
    p.add_argument("--config", default=None, help="config file or bundled preset name")
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints under rhythm scenarios")
    p.add_argument("checkpoint", nargs="+")
    p.add_argument("--data", default=None)
    p.add_argument("--scenarios", default=None, help="comma list, e.g. original,s1,s2,s3,custom:3-1-1")
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.add_argument("--per-class", action="store_true")
    p.add_argument("--out", default=None, help="directory for metrics.{jsonl,tsv,txt,png}")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("resample", help="apply a scenario to a dataset, for inspection")
    p.add_argument("--data", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_resample)

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--only", action="append", help="restrict to named checks")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="train + evaluate RNN+ for several m_R values")
    p.add_argument("--config", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--values", default="0.1,0.25,0.5")
    p.add_argument("--out", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("trace", help="export per-sequence selection traces")
    p.add_argument("checkpoint")
    p.add_argument("--data", default=None)
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--figure", default=None, help="optional PNG of the first few traces")
    p.set_defaults(func=cmd_trace)
    return parser


ERROR_CODES = (
    (ConfigError, EXIT_USAGE),
    (CheckpointError, EXIT_CHECKPOINT),
    (TrainingDiverged, EXIT_DIVERGED),
    (VerificationFailed, EXIT_VERIFY),
    ((FormatError, TransformError, EvaluationError), EXIT_DATA),
    (OSError, EXIT_IO),
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001
        for kinds, code in ERROR_CODES:
            if isinstance(exc, kinds):
                print(f"error: {exc}", file=sys.stderr)
                if isinstance(exc, TrainingDiverged) and exc.dump:
                    print(f"state dumped to {exc.dump}", file=sys.stderr)
                return code
        if isinstance(exc, ValueError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        raise


if __name__ == "__main__":
    sys.exit(main())
