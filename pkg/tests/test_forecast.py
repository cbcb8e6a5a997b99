"""Forecaster tests: feature encoding, forward recurrence against closed
forms, exact backprop gradients against central finite differences, training
behaviour on small problems, prediction hygiene, and checkpoint round-trips.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vecsim.fleet import (
    DEFAULT_START_EPOCH,
    HOUR_S,
    AvailabilityTrace,
    ConfigurationError,
)
from vecsim.forecast import (
    ArrayDataset,
    FeatureEncoder,
    RnnModel,
    TrainConfig,
    bce_with_logits,
    build_window_dataset,
    calendar_features,
    evaluate_accuracy,
    init_model,
    load_checkpoint,
    loss_and_grads,
    predict_availability,
    predict_batch,
    predict_window_min,
    rnn_forward,
    save_checkpoint,
    sigmoid,
    train,
    write_loss_curve_csv,
)

SEED = 7  # matches the session fixtures


def _zero_model(input_size: int, hidden_size: int = 4) -> RnnModel:
    return RnnModel(
        W_ih=np.zeros((hidden_size, input_size)),
        W_hh=np.zeros((hidden_size, hidden_size)),
        b_ih=np.zeros(hidden_size),
        b_hh=np.zeros(hidden_size),
        W_ho=np.zeros((1, hidden_size)),
        b_o=np.zeros(1),
    )


# ---------------------------------------------------------------------------
# Feature encoding.
# ---------------------------------------------------------------------------


def test_encoder_width_and_one_hot_positions():
    enc = FeatureEncoder.fit(50, np.arange(24.0))
    assert enc.width == 50 + 7 + 1 == 58
    x = enc.encode(3, 1, 12)
    assert x.shape == (58,)
    assert x[3] == 1.0  # node one-hot
    assert x[51] == 1.0  # weekday one-hot sits after the 50 node slots
    assert x[57] == pytest.approx((12 - enc.hour_mean) / enc.hour_std)
    # nothing else is set
    x[3] = x[51] = x[57] = 0.0
    assert not x.any()


def test_encoder_hour_block_standardized():
    hours = np.tile(np.arange(24.0), 30)
    enc = FeatureEncoder.fit(5, hours)
    std = enc.standardize_hour(hours)
    assert abs(std.mean()) < 1e-9
    assert std.std() == pytest.approx(1.0, abs=1e-9)


def test_encoder_constant_hours_keep_unit_scale():
    enc = FeatureEncoder.fit(5, np.full(100, 13.0))
    assert enc.hour_std == 1.0
    assert enc.encode(0, 0, 13)[-1] == 0.0


def test_encoder_rejects_out_of_range():
    enc = FeatureEncoder.fit(50, np.arange(24.0))
    with pytest.raises(ValueError):
        enc.encode(50, 0, 0)
    with pytest.raises(ValueError):
        enc.encode(-1, 0, 0)
    with pytest.raises(ValueError):
        enc.encode(0, 7, 0)
    with pytest.raises(ValueError):
        enc.encode(0, 0, 24)
    with pytest.raises(ConfigurationError):
        FeatureEncoder.fit(0, np.arange(24.0))


def test_calendar_features_match_datetime():
    # DEFAULT_START_EPOCH is a Monday midnight UTC
    wd, hr = calendar_features(DEFAULT_START_EPOCH, np.array([0, 1, 25, 167, 168]))
    assert wd.tolist() == [0, 0, 1, 6, 0]
    assert hr.tolist() == [0, 1, 1, 23, 0]
    # a start offset inside the day shifts both counters
    wd2, hr2 = calendar_features(DEFAULT_START_EPOCH + 5 * HOUR_S, np.array([0, 20]))
    assert (wd2.tolist(), hr2.tolist()) == ([0, 1], [5, 1])


# ---------------------------------------------------------------------------
# Activation and loss primitives.
# ---------------------------------------------------------------------------


def test_sigmoid_reference_points():
    assert sigmoid(np.array([0.0]))[0] == 0.5
    assert sigmoid(np.array([30.0]))[0] > 0.999
    out = sigmoid(np.array([-1e4, 1e4]))
    assert np.isfinite(out).all()
    assert 0.0 <= out[0] < out[1] <= 1.0


@settings(max_examples=60, deadline=None)
@given(
    st.floats(min_value=-8, max_value=8, allow_nan=False),
    st.floats(min_value=-8, max_value=8, allow_nan=False),
)
def test_sigmoid_strictly_increasing_and_symmetric(a, b):
    lo, hi = min(a, b), max(a, b)
    if hi - lo > 1e-6:
        assert sigmoid(np.array([lo]))[0] < sigmoid(np.array([hi]))[0]
    assert sigmoid(np.array([a]))[0] + sigmoid(np.array([-a]))[0] == pytest.approx(1.0, abs=1e-12)


def test_bce_known_values():
    assert bce_with_logits(np.array([0.0]), np.array([1.0]))[0] == pytest.approx(np.log(2.0))
    assert bce_with_logits(np.array([0.0]), np.array([0.0]))[0] == pytest.approx(np.log(2.0))
    # a confident correct prediction costs almost nothing
    assert bce_with_logits(np.array([10.0]), np.array([1.0]))[0] == pytest.approx(4.54e-5, rel=1e-3)


def test_bce_extreme_logits_stay_finite():
    big = np.array([1e4, -1e4, 1e4, -1e4])
    y = np.array([0.0, 1.0, 1.0, 0.0])
    out = bce_with_logits(big, y)
    assert np.isfinite(out).all()
    assert out[0] == pytest.approx(1e4)  # confidently wrong: linear cost
    assert out[1] == pytest.approx(1e4)
    assert out[2] == pytest.approx(0.0, abs=1e-12)
    assert out[3] == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# Forward recurrence.
# ---------------------------------------------------------------------------


def test_single_step_closed_form():
    model = RnnModel(
        W_ih=np.array([[0.1, -0.2, 0.3], [0.0, 0.4, -0.5]]),
        W_hh=np.array([[0.2, 0.1], [0.0, -0.3]]),
        b_ih=np.array([0.01, -0.02]),
        b_hh=np.array([0.03, 0.04]),
        W_ho=np.array([[0.7, -0.8]]),
        b_o=np.array([0.05]),
    )
    x = np.array([1.0, 2.0, -1.0])
    h1 = np.tanh(model.W_ih @ x + model.b_ih + model.b_hh)  # h0 = 0
    logits, h_last = rnn_forward(model, [x])
    assert logits.shape == (1,)
    assert logits[0] == pytest.approx(float(model.W_ho[0] @ h1 + model.b_o[0]))
    assert h_last == pytest.approx(h1)


def test_two_step_recurrence_feeds_hidden_state():
    model = RnnModel(
        W_ih=np.array([[0.1, -0.2, 0.3], [0.0, 0.4, -0.5]]),
        W_hh=np.array([[0.2, 0.1], [0.0, -0.3]]),
        b_ih=np.array([0.01, -0.02]),
        b_hh=np.array([0.03, 0.04]),
        W_ho=np.array([[0.7, -0.8]]),
        b_o=np.array([0.05]),
    )
    xs = np.array([[1.0, 2.0, -1.0], [0.5, -0.5, 0.0]])
    h1 = np.tanh(model.W_ih @ xs[0] + model.b_ih + model.b_hh)
    h2 = np.tanh(model.W_ih @ xs[1] + model.W_hh @ h1 + model.b_ih + model.b_hh)
    logits, h_last = rnn_forward(model, xs)
    assert logits[1] == pytest.approx(float(model.W_ho[0] @ h2 + model.b_o[0]))
    assert h_last == pytest.approx(h2)
    # order matters: reversing the inputs changes the final state
    rev_logits, _ = rnn_forward(model, xs[::-1])
    assert rev_logits[1] != pytest.approx(logits[1])


def test_zero_weight_model_is_silent():
    model = _zero_model(6)
    logits, h = rnn_forward(model, np.ones((5, 6)))
    assert not logits.any()
    assert not h.any()


def test_forward_saturates_gracefully_on_huge_inputs():
    model = init_model(6, hidden_size=4, seed=SEED)
    logits, h = rnn_forward(model, np.full((8, 6), 1e4))
    assert np.isfinite(logits).all()
    assert (np.abs(h) <= 1.0).all()  # tanh output


def test_forward_rejects_bad_shapes():
    model = init_model(6, hidden_size=4, seed=SEED)
    with pytest.raises(ValueError):
        rnn_forward(model, np.ones(6))
    with pytest.raises(ValueError):
        rnn_forward(model, np.empty((0, 6)))
    with pytest.raises(ValueError):
        rnn_forward(model, np.ones((3, 5)))


def test_init_model_is_seeded_and_bounded():
    a = init_model(10, hidden_size=8, seed=3)
    b = init_model(10, hidden_size=8, seed=3)
    c = init_model(10, hidden_size=8, seed=4)
    for name, p in a.params().items():
        assert np.array_equal(p, b.params()[name])
        assert (np.abs(p) <= 1.0 / np.sqrt(8)).all()
    assert not np.array_equal(a.W_ih, c.W_ih)
    with pytest.raises(ConfigurationError):
        init_model(0, hidden_size=8)


# ---------------------------------------------------------------------------
# Gradients against central finite differences.
# ---------------------------------------------------------------------------


def _finite_difference_grads(model, X, y, eps=1e-6):
    out = {}
    for name, p in model.params().items():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up, _ = loss_and_grads(model, X, y)
            flat[i] = orig - eps
            down, _ = loss_and_grads(model, X, y)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * eps)
        out[name] = g
    return out


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(SEED)
    for _ in range(5):
        model = init_model(6, hidden_size=4, seed=int(rng.integers(1 << 30)))
        X = rng.normal(size=(5, 3, 6))
        y = rng.integers(0, 2, size=3).astype(float)
        _, grads = loss_and_grads(model, X, y)
        fd = _finite_difference_grads(model, X, y)
        for name in grads:
            err = np.abs(grads[name] - fd[name])
            tol = 1e-5 * np.maximum(1.0, np.abs(fd[name]))
            assert (err <= tol).all(), f"{name}: max err {err.max():.3e}"


def test_gradient_of_confident_correct_prediction_vanishes():
    model = _zero_model(4, hidden_size=2)
    model.b_o[0] = 30.0  # always predicts ~1
    X = np.zeros((3, 2, 4))
    _, grads = loss_and_grads(model, X, np.array([1.0, 1.0]))
    assert abs(grads["b_o"][0]) < 1e-10


# ---------------------------------------------------------------------------
# Training on small problems.
# ---------------------------------------------------------------------------


def _toy_dataset(n=128, L=3, D=4, seed=0):
    """Label = sign of feature 0 at the final step; linearly separable."""
    rng = np.random.default_rng(seed)
    seqs = rng.choice([-1.0, 1.0], size=(n, L, D))
    labels = (seqs[:, -1, 0] > 0).astype(float)
    return ArrayDataset(sequences=seqs, labels=labels)


def test_training_reduces_loss_and_fits_toy_problem():
    ds = _toy_dataset()
    model = init_model(4, hidden_size=8, seed=SEED)
    cfg = TrainConfig(epochs=40, learning_rate=0.01, sequence_length=3, batch_size=32, seed=SEED)
    result = train(model, ds, cfg, holdout=ds)
    first_loss = result.loss_curve[0][1]
    last_epoch, last_loss, last_acc = result.loss_curve[-1]
    assert last_epoch == 40
    assert last_loss < first_loss
    assert last_acc == 1.0


def test_training_is_deterministic():
    ds = _toy_dataset()
    runs = []
    for _ in range(2):
        model = init_model(4, hidden_size=8, seed=SEED)
        cfg = TrainConfig(epochs=5, learning_rate=0.01, sequence_length=3, seed=SEED)
        runs.append(train(model, ds, cfg, holdout=ds))
    assert runs[0].loss_curve == runs[1].loss_curve
    for name, p in runs[0].model.params().items():
        assert np.array_equal(p, runs[1].model.params()[name])


def test_training_rejects_bad_inputs():
    ds = _toy_dataset(n=8)
    model = init_model(4, hidden_size=4, seed=SEED)
    with pytest.raises(ConfigurationError):
        train(model, ArrayDataset(np.empty((0, 3, 4)), np.empty(0)), TrainConfig(epochs=1))
    bad = ArrayDataset(ds.sequences, ds.labels + 0.5)
    with pytest.raises(ConfigurationError):
        train(model, bad, TrainConfig(epochs=1))
    with pytest.raises(ConfigurationError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(learning_rate=0.0)


def test_evaluate_accuracy_of_silent_model_is_positive_rate():
    ds = _toy_dataset(n=64)
    model = _zero_model(4)
    # zero logits threshold to "online", so accuracy equals the label rate
    assert evaluate_accuracy(model, ds) == pytest.approx(ds.labels.mean())
    with pytest.raises(ConfigurationError):
        evaluate_accuracy(model, ArrayDataset(np.empty((0, 3, 4)), np.empty(0)))


# ---------------------------------------------------------------------------
# Window datasets over availability traces.
# ---------------------------------------------------------------------------


def _constant_traces(horizon=840):
    on = AvailabilityTrace(0, DEFAULT_START_EPOCH, np.ones(horizon, dtype=np.int8))
    off = AvailabilityTrace(1, DEFAULT_START_EPOCH, np.zeros(horizon, dtype=np.int8))
    return [on, off]


def test_window_dataset_split_counts_and_labels():
    traces = _constant_traces()
    L, stride = 24, 3
    tr, ho, enc = build_window_dataset(traces, sequence_length=L, stride=stride)
    split = 840 - 4 * 168
    assert len(tr) == 2 * len(range(L, split, stride))
    assert len(ho) == 2 * len(range(split, 840, stride))
    # training labels stop strictly before the holdout split
    assert (tr.starts + L < split).all()
    assert (ho.starts + L >= split).all()
    # node 0 is always on, node 1 always off
    assert (tr.labels[tr.node_ids == 0] == 1.0).all()
    assert (tr.labels[tr.node_ids == 1] == 0.0).all()


def test_window_features_match_encoder():
    traces = _constant_traces()
    tr, _, enc = build_window_dataset(traces, sequence_length=24, stride=3)
    i = 5
    X = tr.features(np.array([i]))[:, 0, :]
    wd, hr = calendar_features(DEFAULT_START_EPOCH, tr.starts[i] + np.arange(24))
    expected = np.stack([enc.encode(int(tr.node_ids[i]), int(w), int(h)) for w, h in zip(wd, hr)])
    assert np.allclose(X, expected)


def test_window_dataset_validation():
    with pytest.raises(ConfigurationError):
        build_window_dataset([])
    short = AvailabilityTrace(0, DEFAULT_START_EPOCH, np.ones(690, dtype=np.int8))
    with pytest.raises(ConfigurationError):
        build_window_dataset([short])  # 4-week holdout leaves < 24h of history
    a, b = _constant_traces()
    mismatched = AvailabilityTrace(1, DEFAULT_START_EPOCH, np.zeros(900, dtype=np.int8))
    with pytest.raises(ConfigurationError):
        build_window_dataset([a, mismatched])
    with pytest.raises(ConfigurationError):
        build_window_dataset([b])  # ids not dense from 0


def test_constant_nodes_are_learned_and_separated():
    traces = _constant_traces()
    tr, ho, enc = build_window_dataset(traces, sequence_length=24, stride=3)
    model = init_model(enc.width, hidden_size=8, seed=SEED)
    cfg = TrainConfig(epochs=30, learning_rate=0.01, batch_size=32, seed=SEED)
    train(model, tr, cfg)
    assert evaluate_accuracy(model, ho) == 1.0
    t = DEFAULT_START_EPOCH + 800 * HOUR_S  # inside the holdout weeks
    p_on, p_off = predict_batch(model, enc, [0, 1], t)
    assert p_on >= 0.9
    assert p_off <= 0.1


def test_fleet_holdout_accuracy(artifacts50, traces50):
    _, holdout, _ = build_window_dataset(traces50, stride=41)
    assert evaluate_accuracy(artifacts50.rnn, holdout) >= 0.8


# ---------------------------------------------------------------------------
# Prediction interface.
# ---------------------------------------------------------------------------


def test_predictions_stay_inside_open_interval():
    enc = FeatureEncoder.fit(2, np.arange(24.0))
    saturated = _zero_model(enc.width)
    saturated.b_o[0] = 1e4
    t = DEFAULT_START_EPOCH + 30 * HOUR_S
    p = predict_batch(saturated, enc, [0, 1], t)
    assert (p < 1.0).all() and (p == 1.0 - 1e-12).all()
    saturated.b_o[0] = -1e4
    p = predict_batch(saturated, enc, [0, 1], t)
    assert (p > 0.0).all() and (p == 1e-12).all()


def test_predict_batch_validates_inputs():
    enc = FeatureEncoder.fit(2, np.arange(24.0))
    model = _zero_model(enc.width)
    with pytest.raises(ValueError):
        predict_batch(model, enc, [0], float(DEFAULT_START_EPOCH))  # no history yet
    with pytest.raises(ValueError):
        predict_batch(model, enc, [2], DEFAULT_START_EPOCH + 10 * HOUR_S)
    assert predict_batch(model, enc, [], DEFAULT_START_EPOCH + 10 * HOUR_S).size == 0


def test_predict_availability_wraps_single_node():
    enc = FeatureEncoder.fit(2, np.arange(24.0))
    model = init_model(enc.width, hidden_size=4, seed=SEED)
    t = DEFAULT_START_EPOCH + 100 * HOUR_S
    fc = predict_availability(model, enc, 1, t)
    assert fc.node_id == 1 and fc.t == t
    assert fc.predicted_availability == pytest.approx(float(predict_batch(model, enc, [1], t)[0]))
    # explicit history bypasses the calendar reconstruction
    hist = np.zeros((24, enc.width))
    fc2 = predict_availability(model, enc, 1, t, history=hist)
    logits, _ = rnn_forward(model, hist)
    assert fc2.predicted_availability == pytest.approx(float(sigmoid(logits[-1:])[0]))


def test_predict_window_min_spans_occupied_hours():
    enc = FeatureEncoder.fit(2, np.arange(24.0))
    model = init_model(enc.width, hidden_size=4, seed=SEED)
    t = DEFAULT_START_EPOCH + 100 * HOUR_S
    single = predict_window_min(model, enc, 0, t, duration_s=10.0)
    assert single == float(predict_batch(model, enc, [0], t)[0])
    two_hour = predict_window_min(model, enc, 0, t, duration_s=2 * HOUR_S)
    p0 = float(predict_batch(model, enc, [0], t)[0])
    p1 = float(predict_batch(model, enc, [0], t + HOUR_S)[0])
    assert two_hour == min(p0, p1)


def test_early_history_pads_with_first_hour():
    enc = FeatureEncoder.fit(1, np.arange(24.0))
    model = init_model(enc.width, hidden_size=4, seed=SEED)
    # hour index 1: only one hour of history exists, repeated to fill the window
    p = predict_batch(model, enc, [0], DEFAULT_START_EPOCH + HOUR_S + 30.0)
    assert p.shape == (1,) and 0.0 < p[0] < 1.0


# ---------------------------------------------------------------------------
# Serialization.
# ---------------------------------------------------------------------------


def test_checkpoint_roundtrip_is_exact(tmp_path):
    enc = FeatureEncoder.fit(3, np.arange(24.0))
    model = init_model(enc.width, hidden_size=4, seed=SEED)
    path = str(tmp_path / "model.ckpt")
    save_checkpoint(path, model, enc, header_comment="# fitted for tests")
    back, enc_back = load_checkpoint(path)
    for name, p in model.params().items():
        assert np.array_equal(p, back.params()[name])
    assert enc_back == enc
    t = DEFAULT_START_EPOCH + 50 * HOUR_S
    assert np.array_equal(
        predict_batch(model, enc, [0, 1, 2], t), predict_batch(back, enc_back, [0, 1, 2], t)
    )


def test_checkpoint_rejects_foreign_or_inconsistent_files(tmp_path):
    bad = tmp_path / "other.txt"
    bad.write_text("just some text\n")
    with pytest.raises(ConfigurationError):
        load_checkpoint(str(bad))
    # encoder width recorded in the file must match the weight shapes
    enc = FeatureEncoder.fit(3, np.arange(24.0))  # width 11
    model = init_model(6, hidden_size=4, seed=SEED)
    path = str(tmp_path / "mismatch.ckpt")
    save_checkpoint(path, model, enc)
    with pytest.raises(ConfigurationError):
        load_checkpoint(path)


def test_loss_curve_csv_layout(tmp_path):
    path = str(tmp_path / "curve.csv")
    write_loss_curve_csv(path, [(1, 0.5, float("nan")), (2, 0.25, 0.9)], header_comment="# hdr")
    lines = open(path).read().splitlines()
    assert lines[0] == "# hdr"
    assert lines[1] == "epoch,mean_loss,holdout_accuracy"
    assert lines[2] == "1,0.5,"
    assert lines[3] == "2,0.25,0.900000"
