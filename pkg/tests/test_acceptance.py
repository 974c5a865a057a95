"""Acceptance suite: one PASS/FAIL line per criterion, printed to the terminal.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are also echoed through the terminal reporter without ``-s``.
"""

import itertools
import math
import time

import numpy as np
import pytest

from rhythmsel.harness.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from rhythmsel.harness.cli import resolve_config_path
from rhythmsel.harness.config import ExperimentConfig, load_config
from rhythmsel.harness.evaluate import collect_traces, enrichment, evaluate
from rhythmsel.harness.train import train
from rhythmsel.harness.verify import TOLERANCE, run_suite
from rhythmsel.policy import log_likelihood, reward
from rhythmsel.rhythm import (
    PAPER_TREND,
    PAPER_TREND_SEED,
    SEPARABLE_TOY,
    FeatureSequence,
    ScenarioSpec,
    TransformError,
    generate_dataset,
    scenario_indices,
    train_subsample,
)
from rhythmsel.selector import decide, reducing_loss

from _oracles import (
    accumulation_is_monotone,
    accumulator_bounds,
    copy_is_bitwise,
    eventual_update_holds,
    exact_policy_gradient,
    monte_carlo_policy_gradient,
)

TREND_SEEDS = (0, 1, 2)
SWEEP = (0.1, 0.25, 0.5)


def _announce(request, number, ok, detail):
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")
    if reporter is not None:
        reporter.write_line("")
        reporter.write_line(line)
    else:
        print(line)
    assert ok, line


# ---------------------------------------------------------------- trained models on the trend preset

@pytest.fixture(scope="module")
def trend_data():
    return generate_dataset(PAPER_TREND, PAPER_TREND_SEED)


@pytest.fixture(scope="module")
def trend_runs(trend_data):
    """Metrics tables and traces per (variant, m_R, seed), trained once per session."""
    base = load_config(resolve_config_path("paper_trend"))
    cache = {}

    def get(variant, seed, m_R=0.25):
        key = (variant, m_R, seed)
        if key not in cache:
            cfg = base.replace(variant=variant, seed=seed, m_R=m_R)
            res = train(cfg, trend_data)
            ck = Checkpoint(cfg, res.params, trend_data.n_classes, trend_data.dim)
            pairs = collect_traces(ck, trend_data) if variant != "baseline" else None
            cache[key] = (evaluate(ck, trend_data), pairs)
        return cache[key]

    return get


def _drop(table):
    return table["original"].accuracy - table["s3"].accuracy


# ---------------------------------------------------------------- 1

def test_criterion_1_gradient_correctness(request):
    t0 = time.perf_counter()
    results = run_suite(range(20))
    elapsed = time.perf_counter() - t0
    worst = max(results, key=lambda r: r.max_error)
    ok = worst.max_error < TOLERANCE and elapsed < 120 and len(results) == 20 * len({r.name for r in results})
    _announce(request, 1, ok, f"{len(results)} checks, worst {worst.name} seed {worst.seed} "
                              f"rel err {worst.max_error:.2e} (< {TOLERANCE:g}), {elapsed:.1f}s (< 120s)")


# ---------------------------------------------------------------- 2

def test_criterion_2_skip_invariants(request):
    t0 = time.perf_counter()
    lo, hi, seen = accumulator_bounds(1_000_000)
    copy = all(copy_is_bitwise(seed) for seed in range(5))
    mono = all(accumulation_is_monotone(seed) for seed in range(5))
    eventual = [eventual_update_holds(seed) for seed in range(5)]
    elapsed = time.perf_counter() - t0
    ok = (0.0 <= lo and hi <= 1.0 and seen >= 1_000_000 and copy and mono
          and all(e[0] for e in eventual) and elapsed < 60)
    longest = max(e[1] for e in eventual)
    _announce(request, 2, ok, f"u~ in [{lo:.3g}, {hi:.3g}] over {seen} steps, copy bitwise {copy}, "
                              f"monotone {mono}, longest copy run {longest} <= {eventual[0][2]}, {elapsed:.1f}s (< 60s)")


# ---------------------------------------------------------------- 3

def _task_reward(Y):
    # frame 0 decides correctness; usage is penalised as in training
    return reward(bool(Y[0]), max(int(Y.sum()), 1), len(Y))


def _table_reward(n, seed):
    rng = np.random.default_rng(seed)
    table = {Y: float(rng.uniform(-1, 1)) for Y in itertools.product((0, 1), repeat=n)}
    return lambda Y: table[tuple(int(v) for v in Y)]


def test_criterion_3_reinforce_oracle(request):
    cases = [
        ("N=1 p=0.6", np.array([math.log(0.6 / 0.4)]), _task_reward, 1),
        ("N=2 random rewards", np.array([0.4, -0.8]), _table_reward(2, 2), 2),
        ("N=3 random rewards", np.array([0.3, -0.5, 1.1]), _table_reward(3, 3), 3),
    ]
    t0 = time.perf_counter()
    worst, parts = 0.0, []
    for name, logits, reward_of, seed in cases:
        p = 1 / (1 + np.exp(-logits))
        exact = exact_policy_gradient(p, reward_of)
        mc = monte_carlo_policy_gradient(logits, reward_of, 50_000, seed=seed)
        rel = np.abs(mc - exact) / np.abs(exact)
        worst = max(worst, float(rel.max()))
        parts.append(f"{name}: {100 * rel.max():.2f}%")
    elapsed = time.perf_counter() - t0
    ok = worst < 0.02 and elapsed < 300
    _announce(request, 3, ok, f"{'; '.join(parts)} (each < 2%), {elapsed:.1f}s (< 300s)")


# ---------------------------------------------------------------- 4

def test_criterion_4_unit_values(request):
    checks = {}
    checks["L_R [0.1,0.2,0.3] m_R 0.25 = 0.05"] = math.isclose(
        float(reducing_loss(np.array([0.1, 0.2, 0.3]), 0.25).data), 0.05, abs_tol=1e-15)
    checks["L_R at p = m_R is 0"] = float(reducing_loss(np.full(5, 0.25), 0.25).data) == 0.0
    checks["L_R [1,1] m_R 0.25 = 0.75"] = float(reducing_loss(np.array([1.0, 1.0]), 0.25).data) == 0.75
    tr = decide(np.array([0.6, 0.4, 0.5]))
    checks["threshold [0.6,0.4,0.5] -> y=[1,0,1], usage 66.7"] = (
        tr.y.tolist() == [1, 0, 1] and tr.K == 2 and round(tr.usage, 1) == 66.7)
    checks["reward correct K=N = 0"] = reward(True, 6, 6) == 0.0
    checks["reward correct K=N/2 = 0.75"] = reward(True, 3, 6) == 0.75
    checks["reward incorrect gamma 1 = -1"] = reward(False, 2, 6) == -1.0
    lp = float(log_likelihood(np.array([0.8, 0.3]), np.array([1, 0])).data)
    checks["likelihood [0.8,0.3] Y=[1,0] = 0.56"] = math.isclose(lp, math.log(0.56), rel_tol=1e-12)
    s1 = scenario_indices(30, ScenarioSpec("s1"))
    checks["S1 N=30 -> 5+10+2 = 17"] = s1.tolist() == [0, 2, 4, 6, 8, *range(10, 20), 20, 25]
    s2 = scenario_indices(30, ScenarioSpec("s2"))
    checks["S2 N=30 -> 2+10+5 = 17"] = s2.tolist() == [0, 5, *range(10, 20), 20, 22, 24, 26, 28]
    checks["S3 N=31 -> 15"] = len(scenario_indices(31, ScenarioSpec("s3"), np.random.default_rng(0))) == 15
    seq = FeatureSequence("x", np.arange(120, dtype=np.float32).reshape(120, 1), 0)
    sub = train_subsample(seq, 5, 10)
    checks["trim 10 stride 5 N=120 -> 20 frames"] = sub.frames[:, 0].tolist() == list(range(10, 106, 5))
    try:
        train_subsample(FeatureSequence("x", np.zeros((21, 1)), 0), 1, 10)
        checks["N=21 trim 10 -> error"] = False
    except TransformError:
        checks["N=21 trim 10 -> error"] = True
    failed = [k for k, v in checks.items() if not v]
    _announce(request, 4, not failed, f"{len(checks) - len(failed)}/{len(checks)} examples exact"
                                      + (f"; failed: {failed}" if failed else ""))


# ---------------------------------------------------------------- 5

def test_criterion_5_usage_trend(request, trend_runs):
    t0 = time.perf_counter()
    usage = {m: float(np.mean([trend_runs("rnn_plus", s, m)[0].usage for s in TREND_SEEDS])) for m in SWEEP}
    elapsed = time.perf_counter() - t0
    values = [usage[m] for m in SWEEP]
    ok = all(a <= b for a, b in zip(values, values[1:])) and 15.0 <= usage[0.25] <= 40.0
    _announce(request, 5, ok, "RNN+ usage over 3 seeds " + ", ".join(f"m_R {m}: {usage[m]:.1f}%" for m in SWEEP)
              + f" (non-decreasing, m_R 0.25 in [15, 40]), {elapsed / 60:.1f} min")


# ---------------------------------------------------------------- 6

def test_criterion_6_rhythm_robustness(request, trend_runs):
    t0 = time.perf_counter()
    orig, drop = {}, {}
    for variant in ("baseline", "rnn_plus", "srnn_plus", "rl_plus"):
        tables = [trend_runs(variant, s)[0] for s in TREND_SEEDS]
        orig[variant] = float(np.mean([t["original"].accuracy for t in tables]))
        drop[variant] = float(np.mean([_drop(t) for t in tables]))
    elapsed = time.perf_counter() - t0
    checks = {
        "baseline original >= 90": orig["baseline"] >= 90.0,
        "baseline drop >= 10": drop["baseline"] >= 10.0,
        "SRNN+ drop <= baseline/2": drop["srnn_plus"] <= drop["baseline"] / 2,
        "SRNN+ drop <= 5": drop["srnn_plus"] <= 5.0,
        "RNN+ drop < baseline": drop["rnn_plus"] < drop["baseline"],
        "RL+ drop < baseline": drop["rl_plus"] < drop["baseline"],
    }
    failed = [k for k, v in checks.items() if not v]
    detail = "; ".join(f"{v} original {orig[v]:.1f} drop {drop[v]:.1f}" for v in orig)
    _announce(request, 6, not failed, detail + (f"; failed: {failed}" if failed else "")
              + f", {elapsed / 60:.1f} min (3 seeds)")


# ---------------------------------------------------------------- 7

def test_criterion_7_pipeline_equivalences(request, tmp_path):
    toy = generate_dataset(SEPARABLE_TOY, 0)
    cfg = ExperimentConfig(variant="baseline", seed=0, epochs=3, lr=1e-2, cls_hidden=8, cls_fc=8,
                           sel_hidden=6, sel_fc1=4, accum=4, val_fraction=0.0, s3_repeats=2)
    base = train(cfg, toy)
    keep_cfg = cfg.replace(variant="rnn_plus", keep_all=True)
    keep = train(keep_cfg, toy)
    a = evaluate(Checkpoint(cfg, base.params, toy.n_classes, toy.dim), toy)
    b = evaluate(Checkpoint(keep_cfg, keep.params, toy.n_classes, toy.dim), toy)
    keep_all = (all(keep.params[k].tobytes() == v.tobytes() for k, v in base.params.items())
                and [(r.accuracy, r.per_class) for r in a.rows] == [(r.accuracy, r.per_class) for r in b.rows])

    sel_cfg = cfg.replace(variant="srnn_plus")
    sel = train(sel_cfg, toy)
    path = save_checkpoint(tmp_path / "m.npz", sel_cfg, sel.params, toy.n_classes, toy.dim)
    back = load_checkpoint(path)
    m1 = evaluate(Checkpoint(sel_cfg, sel.params, toy.n_classes, toy.dim), toy)
    m2 = evaluate(back, toy)
    round_trip = (back.config == sel_cfg
                  and all(back.params[k].tobytes() == v.tobytes() for k, v in sel.params.items())
                  and [(r.accuracy, r.usage) for r in m1.rows] == [(r.accuracy, r.usage) for r in m2.rows])

    again = train(sel_cfg, toy)
    determinism = (again.final_losses == sel.final_losses
                   and all(again.params[k].tobytes() == v.tobytes() for k, v in sel.params.items()))
    ok = keep_all and round_trip and determinism
    _announce(request, 7, ok, f"keep-all == baseline {keep_all}, checkpoint round trip {round_trip}, "
                              f"determinism {determinism}")


# ---------------------------------------------------------------- 8

def test_criterion_8_selection_quality(request, trend_runs):
    ratios = [enrichment(trend_runs("srnn_plus", s)[1]).ratio for s in TREND_SEEDS]
    ok = all(r > 1.5 for r in ratios)
    _announce(request, 8, ok, "SRNN+ enrichment ratio per seed " + ", ".join(f"{r:.2f}" for r in ratios) + " (> 1.5)")
