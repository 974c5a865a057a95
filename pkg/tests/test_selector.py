import numpy as np
import pytest

from rhythmsel import numerics as nx
from rhythmsel.classifier import ClassifierConfig
from rhythmsel.harness import verify
from rhythmsel.models import SelectionPipeline
from rhythmsel.numerics import AdamState, GradTape, Tensor, adam_step
from rhythmsel.rhythm import FeatureSequence
from rhythmsel.selector import (
    SelectionError,
    SelectionTrace,
    Selector,
    SelectorConfig,
    decide,
    format_trace_line,
    gated_forward,
    parse_trace_line,
    reducing_loss,
    rnn_total_loss,
    score_frames,
    select,
)


def _seq(n=3, d=2):
    return FeatureSequence("s", np.arange(n * d, dtype=np.float32).reshape(n, d), 0)


# ---------------------------------------------------------------- scoring

@pytest.mark.parametrize("variant", ["rnn_plus", "srnn_plus"])
def test_zero_weights_give_half(variant):
    sel = Selector(SelectorConfig(variant, 5, 4), 3)
    params = {k: np.zeros_like(v) for k, v in sel.init(np.random.default_rng(0)).items()}
    p = score_frames(sel, params, FeatureSequence("x", np.random.default_rng(1).normal(size=(7, 3)), 0))
    np.testing.assert_array_equal(p, np.full(7, 0.5, np.float32))


def test_zero_output_scale_starts_at_half():
    sel = Selector(SelectorConfig("srnn_plus", 5, 4, out_scale=0.0), 3)
    params = sel.init(np.random.default_rng(0))
    p = score_frames(sel, params, FeatureSequence("x", np.random.default_rng(1).normal(size=(4, 3)), 0))
    np.testing.assert_array_equal(p, np.full(4, 0.5, np.float32))


def test_selector_stack_layout():
    sel = Selector(SelectorConfig("srnn_plus", 6, 4), 3)
    params = sel.init(np.random.default_rng(0))
    assert params["sel.rnn0.W"].shape == (6, 3)
    assert params["sel.rnn1.W"].shape == (6, 6)
    assert params["sel.rnn1.w_p"].shape == (6,)
    assert params["sel.fc1.W"].shape == (4, 6)
    assert params["sel.fc2.W"].shape == (1, 4)
    assert sel.recurrent_keys() == ["sel.rnn0.u", "sel.rnn1.u"]
    plain = Selector(SelectorConfig("rnn_plus", 6, 4), 3).init(np.random.default_rng(0))
    assert "sel.rnn0.w_p" not in plain


def test_selector_rejects_bad_input():
    sel = Selector(SelectorConfig("rnn_plus", 4, 3), 2)
    params = {k: Tensor(v) for k, v in sel.init(np.random.default_rng(0)).items()}
    with pytest.raises(SelectionError):
        sel.score(params, np.zeros((0, 2)))
    with pytest.raises(SelectionError):
        sel.score(params, np.zeros((3, 5)))


@pytest.mark.parametrize("kwargs", [{"variant": "lstm"}, {"m_R": 0.0}, {"m_R": 1.0}, {"lam": -1.0},
                                    {"fc2": 2}, {"layers": 3}])
def test_selector_config_validation(kwargs):
    with pytest.raises(SelectionError):
        SelectorConfig(**kwargs)


# ---------------------------------------------------------------- keep / delete

def test_select_threshold():
    trace, out = select(np.array([0.6, 0.4, 0.5]), _seq())
    np.testing.assert_array_equal(trace.y, [1, 0, 1])
    assert trace.K == 2
    assert trace.usage == pytest.approx(66.7, abs=0.05)
    assert not trace.fallback
    np.testing.assert_array_equal(out.frames, _seq().frames[[0, 2]])


def test_select_fallback_keeps_argmax():
    trace, out = select(np.array([0.4, 0.3, 0.45]), _seq())
    np.testing.assert_array_equal(trace.y, [0, 0, 1])
    assert trace.K == 1 and trace.fallback
    assert out.n_frames == 1


def test_select_all_ones_is_identity():
    seq = _seq(5)
    trace, out = select(np.ones(5), seq)
    np.testing.assert_array_equal(out.frames, seq.frames)
    assert out.label == seq.label


def test_select_length_mismatch():
    with pytest.raises(SelectionError):
        select(np.ones(4), _seq(3))


def test_decide_empty():
    with pytest.raises(SelectionError):
        decide(np.array([]))


# ---------------------------------------------------------------- losses

def test_reducing_loss_examples():
    assert float(reducing_loss(np.array([0.1, 0.2, 0.3]), 0.25).data) == pytest.approx(0.05)
    assert float(reducing_loss(np.full(4, 0.25), 0.25).data) == 0.0
    assert float(reducing_loss(np.array([1.0, 1.0]), 0.25).data) == pytest.approx(0.75)


def test_reducing_loss_zero_subgradient_at_kink():
    p = Tensor(np.full(4, 0.25), requires_grad=True)
    with GradTape() as tape:
        loss = reducing_loss(p, 0.25)
    (g,) = tape.gradient(loss, [p])
    np.testing.assert_array_equal(g, np.zeros(4))


def test_rnn_total_loss_examples():
    assert float(rnn_total_loss(1.2, 0.05, 4)) == pytest.approx(1.4)
    assert float(rnn_total_loss(0.37, 0.0, 9.0)) == 0.37
    assert float(rnn_total_loss(0.0, 0.25, 4)) == pytest.approx(1.0)
    with pytest.raises(SelectionError):
        rnn_total_loss(1.0, 0.1, -1.0)


def test_usage_pressure_drives_mean_to_target():
    # gradient descent on L_R alone through a fixed random selector input
    rng = np.random.default_rng(0)
    sel = Selector(SelectorConfig("rnn_plus", 6, 4, m_R=0.25), 3)
    params = sel.init(rng, np.float64)
    X = rng.normal(size=(20, 3))
    state = AdamState(lr=1e-2)
    for step in range(5000):
        tensors = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
        with GradTape() as tape:
            p, _ = sel.score(tensors, X)
            loss = reducing_loss(p, 0.25)
        if float(loss.data) < 1e-3:
            break
        grads = dict(zip(params, tape.gradient(loss, list(tensors.values()))))
        params, state = adam_step(params, grads, state)
    assert float(loss.data) < 1e-3, (step, float(loss.data))


def test_total_loss_decomposes():
    rng = np.random.default_rng(3)
    model = SelectionPipeline(SelectorConfig("srnn_plus", 5, 4, lam=4.0), ClassifierConfig("gru", 5, 4, 3), 3)
    params = model.init(0, np.float64)
    X = rng.normal(size=(6, 3))
    tensors = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    with GradTape() as tape:
        loss, rec = model.train_loss(tensors, X, 1)
    assert float(loss.data) == pytest.approx(rec.L_C + 4.0 * rec.L_R, rel=1e-12)
    total = tape.gradient(loss, list(tensors.values()))

    def part(which):
        ts = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
        with GradTape() as tp:
            p, traces = model.selector.score(ts, X)
            x = gated_forward(rec.selection, p, X)
            L_C = nx.cross_entropy(model.classifier.classify(ts, x), 1)
            L_R = reducing_loss(p, 0.25)
            out = L_C if which == "C" else L_R * 4.0
        return tp.gradient(out, list(ts.values()))

    for g, a, b in zip(total, part("C"), part("R")):
        np.testing.assert_allclose(g, a + b, rtol=1e-10, atol=1e-14)


# ---------------------------------------------------------------- gated forward

def test_gated_forward_is_raw_kept_frames():
    frames = np.random.default_rng(0).normal(size=(5, 3)).astype(np.float32)
    p = np.array([0.9, 0.1, 0.7, 0.2, 0.5], np.float32)
    trace = decide(p)
    out = gated_forward(trace, Tensor(p), frames)
    np.testing.assert_array_equal(out.data, frames[[0, 2, 4]])


def test_gated_forward_routes_gradient_only_to_kept():
    rng = np.random.default_rng(1)
    frames = rng.normal(size=(5, 3))
    p = Tensor(np.array([0.9, 0.1, 0.7, 0.2, 0.5]), requires_grad=True)
    trace = decide(p.data)
    w = rng.normal(size=(3, 3))
    with GradTape() as tape:
        x = gated_forward(trace, p, frames)
        loss = nx.total(x * w)
    (g,) = tape.gradient(loss, [p])
    assert g[1] == 0.0 and g[3] == 0.0
    # straight-through: dL/dp_i = <dL/dx_i, x_i>
    np.testing.assert_allclose(g[[0, 2, 4]], (w * frames[[0, 2, 4]]).sum(axis=1))


def test_gated_selector_gradients_with_frozen_decisions():
    # 5-frame toy: d(L_C)/d(selector FC weights) against finite differences
    rng = np.random.default_rng(2)
    model = SelectionPipeline(SelectorConfig("rnn_plus", 5, 4), ClassifierConfig("gru", 5, 4, 3), 3)
    params = verify._jitter_biases(model.init(2, np.float64), rng)
    X = rng.normal(size=(5, 3))
    _, rec = model.train_loss({k: Tensor(v) for k, v in params.items()}, X, 0)
    fc = [k for k in params if k.startswith("sel.fc")]

    def loss(t):
        merged = {k: t.get(k, Tensor(params[k])) for k in params}
        p, _ = model.selector.score(merged, X)
        x = gated_forward(rec.selection, p, X, rec.p_reference)
        return nx.cross_entropy(model.classifier.classify(merged, x), 0)

    rep = nx.grad_check(loss, {k: params[k] for k in fc})
    assert rep.max_error < 1e-4, rep.errors


@pytest.mark.parametrize("variant", ["rnn_plus", "srnn_plus"])
def test_full_selection_loss_gradients(variant):
    for seed in range(3):
        assert verify.check_selection_loss(seed, variant) < verify.TOLERANCE


def test_srnn_plus_five_frame_gradcheck():
    assert verify.check_selection_loss(11, "srnn_plus", hidden=6, length=5, dim=8) < 1e-4


# ---------------------------------------------------------------- trace lines

def test_trace_line_round_trip():
    trace = decide(np.array([0.2, 0.8, 0.55, 0.1]))
    line = format_trace_line("vid_7", trace)
    fields = line.split("\t")
    assert fields[:4] == ["vid_7", "4", "2", "50.0000"]
    ident, back = parse_trace_line(line)
    assert ident == "vid_7"
    np.testing.assert_array_equal(back.y, trace.y)
    np.testing.assert_allclose(back.p, trace.p, atol=1e-6)


def test_trace_line_inconsistent():
    with pytest.raises(SelectionError):
        parse_trace_line("a\t3\t2\t66\t0.1,0.9,0.9\t0,1,0")


def test_trace_fields_consistent():
    t = SelectionTrace(np.array([0.7, 0.2]), np.array([1, 0], np.int8))
    assert (t.K, t.N, t.usage) == (1, 2, 50.0)
    np.testing.assert_array_equal(t.kept, [0])
