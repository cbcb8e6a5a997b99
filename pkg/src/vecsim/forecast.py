"""Per-node availability forecasting with a from-scratch Elman recurrent net.

The model consumes sliding windows of hourly calendar features
(one-hot node id ++ one-hot weekday ++ standardized hour-of-day) and emits
the probability that the node is online in the next hour:

    h_t = tanh(W_ih x_t + b_ih + W_hh h_{t-1} + b_hh)
    o_t = W_ho h_t + b_o
    p_t = sigmoid(o_t)

Training minimizes binary cross-entropy on the final step of each window
with Adam; gradients are exact backpropagation-through-time and are verified
against central finite differences in the test suite. Everything is plain
numpy so the arithmetic is fully observable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Protocol, Sequence

import numpy as np

from .fleet import DEFAULT_START_EPOCH, HOUR_S, AvailabilityTrace, ConfigurationError

WEEKDAY_WIDTH = 7
_TRAIN_STREAM = 3
_INIT_STREAM = 4

# Keep predicted probabilities inside the open interval (0, 1) even when the
# logit saturates the float64 sigmoid.
_P_FLOOR = 1e-12
_P_CEIL = 1.0 - 1e-12


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bce_with_logits(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Elementwise binary cross-entropy on raw logits.

    Uses the overflow-free identity
    max(o, 0) - o*y + log(1 + exp(-|o|)), finite for any float64 logit.
    """
    o = np.asarray(logits, dtype=float)
    y = np.asarray(labels, dtype=float)
    return np.maximum(o, 0.0) - o * y + np.log1p(np.exp(-np.abs(o)))


def calendar_features(start_epoch: int, hour_indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(weekday, hour-of-day) for hour indices relative to start_epoch (UTC)."""
    start = datetime.fromtimestamp(start_epoch, tz=timezone.utc)
    total = start.hour + np.asarray(hour_indices, dtype=np.int64)
    hours = total % 24
    weekdays = (start.weekday() + total // 24) % 7
    return weekdays, hours


@dataclass(frozen=True)
class FeatureEncoder:
    """Fixed-width input encoding: one-hot node ++ one-hot weekday ++ hour.

    The hour scalar is standardized with the mean/std fitted on the training
    period, so that block has mean 0 / variance 1 over the training set.
    """

    num_nodes: int
    hour_mean: float
    hour_std: float

    @property
    def width(self) -> int:
        return self.num_nodes + WEEKDAY_WIDTH + 1

    @classmethod
    def fit(cls, num_nodes: int, hour_values: np.ndarray) -> "FeatureEncoder":
        if num_nodes < 1:
            raise ConfigurationError("num_nodes must be positive")
        hours = np.asarray(hour_values, dtype=float)
        std = float(hours.std())
        return cls(num_nodes=num_nodes, hour_mean=float(hours.mean()), hour_std=std if std > 0 else 1.0)

    def encode(self, node_id: int, weekday: int, hour: int) -> np.ndarray:
        if not (0 <= node_id < self.num_nodes):
            raise ValueError(f"unknown node id {node_id} (fleet width {self.num_nodes})")
        if not (0 <= weekday < WEEKDAY_WIDTH):
            raise ValueError(f"weekday must be in [0, 7), got {weekday}")
        if not (0 <= hour < 24):
            raise ValueError(f"hour must be in [0, 24), got {hour}")
        x = np.zeros(self.width)
        x[node_id] = 1.0
        x[self.num_nodes + weekday] = 1.0
        x[-1] = (hour - self.hour_mean) / self.hour_std
        return x

    def standardize_hour(self, hours: np.ndarray) -> np.ndarray:
        return (np.asarray(hours, dtype=float) - self.hour_mean) / self.hour_std


@dataclass
class RnnModel:
    """Elman network weights. All arrays are float64 and mutated in place
    by training."""

    W_ih: np.ndarray  # (hidden, input)
    W_hh: np.ndarray  # (hidden, hidden)
    b_ih: np.ndarray  # (hidden,)
    b_hh: np.ndarray  # (hidden,)
    W_ho: np.ndarray  # (1, hidden)
    b_o: np.ndarray  # (1,)

    @property
    def hidden_size(self) -> int:
        return self.W_hh.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_ih.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {
            "W_ih": self.W_ih,
            "W_hh": self.W_hh,
            "b_ih": self.b_ih,
            "b_hh": self.b_hh,
            "W_ho": self.W_ho,
            "b_o": self.b_o,
        }


def init_model(input_size: int, hidden_size: int = 128, seed: int = 0) -> RnnModel:
    """Uniform(-1/sqrt(hidden), +1/sqrt(hidden)) initialization, seeded."""
    if input_size < 1 or hidden_size < 1:
        raise ConfigurationError("input_size and hidden_size must be positive")
    rng = np.random.default_rng([seed, _INIT_STREAM])
    s = 1.0 / np.sqrt(hidden_size)
    u = lambda *shape: rng.uniform(-s, s, size=shape)
    return RnnModel(
        W_ih=u(hidden_size, input_size),
        W_hh=u(hidden_size, hidden_size),
        b_ih=u(hidden_size),
        b_hh=u(hidden_size),
        W_ho=u(1, hidden_size),
        b_o=u(1),
    )


def _forward_batch(
    model: RnnModel, X: np.ndarray, h0: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Run the recurrence over X of shape (L, B, D).

    Returns (logits (L, B), hidden states (L+1, B, H)) with row 0 = h0.
    """
    L, B, D = X.shape
    H = model.hidden_size
    if D != model.input_size:
        raise ValueError(f"input width {D} does not match model ({model.input_size})")
    hs = np.zeros((L + 1, B, H))
    if h0 is not None:
        hs[0] = h0
    logits = np.empty((L, B))
    for t in range(L):
        pre = X[t] @ model.W_ih.T + hs[t] @ model.W_hh.T + model.b_ih + model.b_hh
        hs[t + 1] = np.tanh(pre)
        logits[t] = hs[t + 1] @ model.W_ho[0] + model.b_o[0]
    return logits, hs


def rnn_forward(
    model: RnnModel, sequence: Sequence[np.ndarray] | np.ndarray, h0: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Single-sequence forward pass.

    Args:
        sequence: (L, D) array or list of D-vectors.
        h0: optional initial hidden state (defaults to zeros).

    Returns:
        (per-step logits (L,), final hidden state (H,)).
    """
    X = np.asarray(sequence, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("sequence must be a non-empty (L, D) array")
    h0b = None if h0 is None else np.asarray(h0, dtype=float)[None, :]
    logits, hs = _forward_batch(model, X[:, None, :], h0b)
    return logits[:, 0], hs[-1, 0]


def loss_and_grads(
    model: RnnModel, X: np.ndarray, labels: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean final-step BCE over the batch, plus exact BPTT gradients.

    X has shape (L, B, D); labels (B,) in {0, 1}.
    """
    y = np.asarray(labels, dtype=float)
    logits, hs = _forward_batch(model, X)
    o = logits[-1]
    loss = float(bce_with_logits(o, y).mean())

    B = X.shape[1]
    d_o = (sigmoid(o) - y) / B  # (B,)
    grads = {
        "W_ho": (d_o[:, None] * hs[-1]).sum(axis=0, keepdims=True),
        "b_o": np.array([d_o.sum()]),
        "W_ih": np.zeros_like(model.W_ih),
        "W_hh": np.zeros_like(model.W_hh),
        "b_ih": np.zeros_like(model.b_ih),
        "b_hh": np.zeros_like(model.b_hh),
    }
    dh = d_o[:, None] * model.W_ho[0][None, :]  # (B, H)
    for t in range(X.shape[0] - 1, -1, -1):
        h_t = hs[t + 1]
        dpre = dh * (1.0 - h_t * h_t)
        grads["W_ih"] += dpre.T @ X[t]
        grads["W_hh"] += dpre.T @ hs[t]
        dsum = dpre.sum(axis=0)
        grads["b_ih"] += dsum
        grads["b_hh"] += dsum
        dh = dpre @ model.W_hh
    return loss, grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_model(cls, model: RnnModel) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in model.params().items()},
            v={k: np.zeros_like(p) for k, p in model.params().items()},
        )


def adam_step(
    model: RnnModel,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> None:
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, p in model.params().items():
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        p -= lr * (state.m[name] / bc1) / (np.sqrt(state.v[name] / bc2) + epsilon)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    sequence_length: int = 24
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.sequence_length < 1:
            raise ConfigurationError("epochs, batch_size, sequence_length must be positive")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")


class SequenceDataset(Protocol):
    """(sequence, label) pairs; features may be materialized lazily."""

    labels: np.ndarray

    def __len__(self) -> int: ...

    def features(self, indices: np.ndarray) -> np.ndarray:  # (L, B, D)
        ...


@dataclass
class ArrayDataset:
    sequences: np.ndarray  # (N, L, D)
    labels: np.ndarray  # (N,)

    def __len__(self) -> int:
        return self.sequences.shape[0]

    def features(self, indices: np.ndarray) -> np.ndarray:
        return np.transpose(self.sequences[indices], (1, 0, 2)).astype(float)


@dataclass
class WindowDataset:
    """Sliding windows over hourly traces, materialized per batch.

    Window i spans feature hours [starts[i], starts[i] + L) for node
    node_ids[i]; its label is the trace state at hour starts[i] + L.
    """

    node_ids: np.ndarray  # (N,)
    starts: np.ndarray  # (N,) hour indices
    labels: np.ndarray  # (N,) float 0/1
    weekdays: np.ndarray  # (H,) calendar weekday per hour index
    hours_std: np.ndarray  # (H,) standardized hour-of-day per hour index
    encoder: FeatureEncoder
    sequence_length: int

    def __len__(self) -> int:
        return self.node_ids.shape[0]

    def features(self, indices: np.ndarray) -> np.ndarray:
        idx = np.asarray(indices)
        B = idx.shape[0]
        L = self.sequence_length
        D = self.encoder.width
        X = np.zeros((L, B, D))
        rows = np.arange(B)
        nid = self.node_ids[idx]
        base = self.starts[idx]
        for l in range(L):
            h = base + l
            X[l, rows, nid] = 1.0
            X[l, rows, self.encoder.num_nodes + self.weekdays[h]] = 1.0
            X[l, rows, D - 1] = self.hours_std[h]
        return X


def build_window_dataset(
    traces: Sequence[AvailabilityTrace],
    sequence_length: int = 24,
    stride: int = 5,
    holdout_weeks: int = 4,
    encoder: FeatureEncoder | None = None,
) -> tuple[WindowDataset, WindowDataset, FeatureEncoder]:
    """Split traces into train/holdout window datasets.

    The last `holdout_weeks` weeks of labels are held out; training labels
    come strictly before the split. A stride coprime with 24 and 168 (the
    default 5 is) covers every hour-of-day and weekday over a long horizon
    while keeping the window count tractable.

    Returns (train, holdout, encoder).
    """
    if not traces:
        raise ConfigurationError("no traces supplied")
    horizon = traces[0].horizon_hours
    start_epoch = traces[0].start_epoch
    num_nodes = max(tr.node_id for tr in traces) + 1
    states = np.zeros((num_nodes, horizon), dtype=np.int8)
    seen = set()
    for tr in traces:
        if tr.horizon_hours != horizon or tr.start_epoch != start_epoch:
            raise ConfigurationError("traces must share horizon and start epoch")
        states[tr.node_id] = tr.hours
        seen.add(tr.node_id)
    if len(seen) != num_nodes:
        raise ConfigurationError("trace node ids must be dense 0..n-1")
    bad = np.setdiff1d(np.unique(states), [0, 1])
    if bad.size:
        raise ConfigurationError(f"trace labels outside {{0,1}}: {bad.tolist()}")

    split = horizon - holdout_weeks * 168
    if split <= sequence_length:
        raise ConfigurationError(
            f"horizon {horizon}h too short for sequence_length {sequence_length} "
            f"plus {holdout_weeks}-week holdout"
        )

    weekdays, hour_of_day = calendar_features(start_epoch, np.arange(horizon))
    if encoder is None:
        encoder = FeatureEncoder.fit(num_nodes, hour_of_day[:split])
    hours_std = encoder.standardize_hour(hour_of_day)

    def windows(lo: int, hi: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        label_hours = np.arange(lo, hi, stride)
        nids = np.repeat(np.arange(num_nodes), label_hours.size)
        lhs = np.tile(label_hours, num_nodes)
        return nids, lhs - sequence_length, states[nids, lhs].astype(float)

    tr_n, tr_s, tr_y = windows(sequence_length, split)
    ho_n, ho_s, ho_y = windows(split, horizon)
    make = lambda n, s, y: WindowDataset(
        node_ids=n,
        starts=s,
        labels=y,
        weekdays=weekdays,
        hours_std=hours_std,
        encoder=encoder,
        sequence_length=sequence_length,
    )
    return make(tr_n, tr_s, tr_y), make(ho_n, ho_s, ho_y), encoder


def evaluate_accuracy(model: RnnModel, dataset: SequenceDataset, batch_size: int = 512) -> float:
    """Fraction of windows where thresholding the prediction at 0.5 matches
    the label (logit >= 0 <=> p >= 0.5)."""
    n = len(dataset)
    if n == 0:
        raise ConfigurationError("empty dataset")
    hits = 0
    for lo in range(0, n, batch_size):
        idx = np.arange(lo, min(lo + batch_size, n))
        logits, _ = _forward_batch(model, dataset.features(idx))
        hits += int(((logits[-1] >= 0.0) == (dataset.labels[idx] >= 0.5)).sum())
    return hits / n


@dataclass
class TrainResult:
    model: RnnModel
    # (epoch, mean training loss, holdout accuracy or nan)
    loss_curve: list[tuple[int, float, float]]


def train(
    model: RnnModel,
    dataset: SequenceDataset,
    config: TrainConfig,
    holdout: SequenceDataset | None = None,
) -> TrainResult:
    """Mini-batch Adam training; deterministic for a fixed config seed."""
    n = len(dataset)
    if n == 0:
        raise ConfigurationError("empty training dataset")
    labels = np.asarray(dataset.labels, dtype=float)
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ConfigurationError("training labels must be 0 or 1")

    rng = np.random.default_rng([config.seed, _TRAIN_STREAM])
    state = AdamState.for_model(model)
    curve = []
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo : lo + config.batch_size]
            X = dataset.features(idx)
            loss, grads = loss_and_grads(model, X, labels[idx])
            adam_step(
                model,
                grads,
                state,
                lr=config.learning_rate,
                beta1=config.beta1,
                beta2=config.beta2,
                epsilon=config.epsilon,
            )
            total += loss * idx.size
        acc = evaluate_accuracy(model, holdout) if holdout is not None else float("nan")
        curve.append((epoch, total / n, acc))
    return TrainResult(model=model, loss_curve=curve)


@dataclass(frozen=True)
class AvailabilityForecast:
    node_id: int
    t: float
    predicted_availability: float


def _history_features(
    encoder: FeatureEncoder,
    node_ids: np.ndarray,
    t: float,
    sequence_length: int,
    start_epoch: int,
) -> np.ndarray:
    """Feature block (L, B, D) for the L hours preceding the hour of t.

    If t is earlier than L hours after the trace start, the earliest step is
    repeated to pad the window to full length.
    """
    hour_index = int((t - start_epoch) // HOUR_S)
    if hour_index < 1:
        raise ValueError(f"cannot forecast at {t}: no history before hour index {hour_index}")
    idx = np.arange(hour_index - sequence_length, hour_index)
    idx = np.maximum(idx, 0)  # left-pad by repeating the earliest hour
    weekdays, hours = calendar_features(start_epoch, idx)
    hours_std = encoder.standardize_hour(hours)
    B = node_ids.size
    X = np.zeros((sequence_length, B, encoder.width))
    rows = np.arange(B)
    for l in range(sequence_length):
        X[l, rows, node_ids] = 1.0
        X[l, rows, encoder.num_nodes + weekdays[l]] = 1.0
        X[l, :, -1] = hours_std[l]
    return X


def predict_batch(
    model: RnnModel,
    encoder: FeatureEncoder,
    node_ids: Sequence[int],
    t: float,
    sequence_length: int = 24,
    start_epoch: int = DEFAULT_START_EPOCH,
) -> np.ndarray:
    """Predicted availability at time t for several nodes in one pass."""
    ids = np.asarray(list(node_ids), dtype=np.int64)
    if ids.size == 0:
        return np.empty(0)
    if ids.min() < 0 or ids.max() >= encoder.num_nodes:
        raise ValueError(f"node ids out of range for fleet width {encoder.num_nodes}")
    X = _history_features(encoder, ids, t, sequence_length, start_epoch)
    logits, _ = _forward_batch(model, X)
    return np.clip(sigmoid(logits[-1]), _P_FLOOR, _P_CEIL)


def predict_availability(
    model: RnnModel,
    encoder: FeatureEncoder,
    node_id: int,
    t: float,
    history: Sequence[np.ndarray] | np.ndarray | None = None,
    sequence_length: int = 24,
    start_epoch: int = DEFAULT_START_EPOCH,
) -> AvailabilityForecast:
    """Probability that node_id is online during the hour containing t.

    `history` may supply the feature window explicitly; otherwise it is
    reconstructed from the calendar (the features are calendar-derived, so
    no trace access is needed at prediction time).
    """
    if history is not None:
        logits, _ = rnn_forward(model, history)
        p = float(np.clip(sigmoid(logits[-1:]), _P_FLOOR, _P_CEIL)[0])
    else:
        p = float(predict_batch(model, encoder, [node_id], t, sequence_length, start_epoch)[0])
    return AvailabilityForecast(node_id=node_id, t=t, predicted_availability=p)


def predict_window_min(
    model: RnnModel,
    encoder: FeatureEncoder,
    node_id: int,
    t: float,
    duration_s: float,
    sequence_length: int = 24,
    start_epoch: int = DEFAULT_START_EPOCH,
) -> float:
    """Optional duration-weighted score: the minimum hourly prediction over
    the hours the workflow would occupy. Off by default in scheduling."""
    n_hours = max(1, int(np.ceil(duration_s / HOUR_S)))
    preds = [
        float(predict_batch(model, encoder, [node_id], t + i * HOUR_S, sequence_length, start_epoch)[0])
        for i in range(n_hours)
    ]
    return min(preds)


# ---------------------------------------------------------------------------
# Checkpoint and loss-curve serialization.
# ---------------------------------------------------------------------------

_CKPT_FORMAT = "vecsim-rnn-checkpoint"
_CKPT_VERSION = 1


def save_checkpoint(
    path: str, model: RnnModel, encoder: FeatureEncoder, header_comment: str | None = None
) -> None:
    lines = []
    if header_comment:
        lines.append(header_comment.rstrip("\n"))
    lines.append(f"# {_CKPT_FORMAT} v{_CKPT_VERSION}")
    lines.append(f"hidden_size={model.hidden_size}")
    lines.append(f"input_size={model.input_size}")
    lines.append(f"num_nodes={encoder.num_nodes}")
    lines.append(f"hour_mean={encoder.hour_mean:.17g}")
    lines.append(f"hour_std={encoder.hour_std:.17g}")
    for name, p in model.params().items():
        arr = np.atleast_2d(p)
        lines.append(f"param={name} shape={','.join(str(s) for s in p.shape)}")
        for row in arr:
            lines.append(" ".join(f"{v:.17g}" for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path: str) -> tuple[RnnModel, FeatureEncoder]:
    meta: dict[str, str] = {}
    arrays: dict[str, np.ndarray] = {}
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    version = None
    i = 0
    while i < len(lines):
        line = lines[i]
        if line.startswith("#"):
            if _CKPT_FORMAT in line:
                version = int(line.rsplit("v", 1)[1])
            i += 1
            continue
        if line.startswith("param="):
            head, shape_part = line.split(" shape=")
            name = head.split("=", 1)[1]
            shape = tuple(int(s) for s in shape_part.split(","))
            rows = 1 if len(shape) == 1 else shape[0]
            data = [[float(v) for v in lines[i + 1 + r].split()] for r in range(rows)]
            arrays[name] = np.array(data).reshape(shape)
            i += 1 + rows
            continue
        key, _, value = line.partition("=")
        meta[key] = value
        i += 1
    if version != _CKPT_VERSION:
        raise ConfigurationError(f"{path}: unsupported or missing checkpoint version {version}")
    model = RnnModel(
        W_ih=arrays["W_ih"],
        W_hh=arrays["W_hh"],
        b_ih=arrays["b_ih"],
        b_hh=arrays["b_hh"],
        W_ho=arrays["W_ho"],
        b_o=arrays["b_o"],
    )
    encoder = FeatureEncoder(
        num_nodes=int(meta["num_nodes"]),
        hour_mean=float(meta["hour_mean"]),
        hour_std=float(meta["hour_std"]),
    )
    if encoder.width != model.input_size:
        raise ConfigurationError(f"{path}: encoder width does not match model input size")
    return model, encoder


def write_loss_curve_csv(
    path: str, curve: Sequence[tuple[int, float, float]], header_comment: str | None = None
) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(header_comment.rstrip("\n") + "\n")
        fh.write("epoch,mean_loss,holdout_accuracy\n")
        for epoch, loss, acc in curve:
            acc_s = "" if np.isnan(acc) else f"{acc:.6f}"
            fh.write(f"{epoch},{loss:.10g},{acc_s}\n")
