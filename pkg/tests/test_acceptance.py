"""Acceptance suite: every shipped guarantee checked end to end.

One test per criterion, each with its stated tolerance and runtime budget and
a printed pass line (visible with ``pytest -s``) recording the measured
values.  The forecast-quality criterion trains at a reduced profile by
default; set ``VECSIM_FULL_ACCEPTANCE=1`` to run the full 60-epoch,
128-hidden-unit profile (budget: 15 minutes).
"""

import os
import time

import numpy as np
import pytest

from vecsim.cli import main
from vecsim.clustering import elbow_select_k, fit_standardizer, kmeans_fit
from vecsim.enclave import (
    AttestationDocument,
    AttestationError,
    Certifier,
    Enclave,
    EnclaveState,
    IllegalTransitionError,
    build_enclave,
)
from vecsim.fleet import (
    DEFAULT_START_EPOCH,
    CapacityVector,
    FleetConfig,
    GeoPoint,
    Workflow,
    WorkloadConfig,
    generate_fleet,
    generate_traces,
    generate_workloads,
)
from vecsim.forecast import (
    TrainConfig,
    build_window_dataset,
    evaluate_accuracy,
    init_model,
    loss_and_grads,
    train,
)
from vecsim.scheduler import LatencyCostModel
from vecsim.sim import (
    SCHEDULERS,
    Artifacts,
    SimConfig,
    cluster_fleet,
    compare_schedulers,
    run_simulation,
)

SEED = 7  # matches the session fixtures

SCALES = (10, 50, 150, 500)

CONFIG_TEXT = """\
[experiment]
seed = 7
scales = 4, 6
instance_scale = 6

[fleet]
node_count = 12
horizon_hours = 840

[workload]
arrival_start_hour = 700
arrival_window_hours = 100
duration_min_s = 300
duration_max_s = 900

[clustering]
k_max = 6

[train]
epochs = 2
hidden_size = 16
stride = 11
"""


@pytest.fixture(scope="module")
def small_world():
    """Ten-node fleet with a full synthetic year of traces."""
    fleet = generate_fleet(FleetConfig(node_count=10), seed=SEED)
    traces = generate_traces(fleet, seed=SEED)
    return fleet, traces


@pytest.fixture(scope="module")
def comparison(fleet50, traces50, artifacts50):
    """One timed scheduler comparison shared by the latency and productivity
    criteria: workflow scales {10, 50, 150, 500} on the 50-node fleet, with
    the 50-workflow scale re-run under forced failures."""
    by_scale = {n: generate_workloads(WorkloadConfig(count=n), seed=SEED) for n in SCALES}
    t0 = time.perf_counter()
    result = compare_schedulers(
        fleet50, traces50, by_scale, artifacts50,
        SimConfig(), LatencyCostModel(), SEED, instance_scale=50,
    )
    return result, time.perf_counter() - t0


def test_criterion_1_elbow_selects_four_clusters(fleet50):
    t0 = time.perf_counter()
    caps = np.array([n.capacity.as_array() for n in fleet50])
    z = fit_standardizer(caps).transform(caps)
    result = elbow_select_k(z, k_range=range(1, 9), seed=SEED)
    elapsed = time.perf_counter() - t0

    assert [k for k, _ in result.curve] == list(range(1, 9))
    assert result.k_optimal == 4
    ssds = [ssd for _, ssd in result.curve]
    assert all(b <= a for a, b in zip(ssds, ssds[1:]))
    assert elapsed < 5.0
    print(f"criterion 1 PASS: elbow picks k=4 over k=1..8, curve non-increasing ({elapsed:.2f}s)")


def test_criterion_2_kmeans_matches_brute_force_oracle():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    for trial in range(200):
        n = int(rng.integers(4, 31))
        k = int(rng.integers(1, min(n, 4) + 1))
        mat = rng.uniform(-5, 5, size=(n, 3))
        model = kmeans_fit(mat, k=k, seed=trial)
        # brute-force distance scan: every point sits with its nearest centroid
        d2 = ((mat[:, None, :] - model.centroids[None]) ** 2).sum(axis=2)
        for i in range(n):
            assert d2[i, model.assignments[i]] <= d2[i].min() + 1e-12
        hist = model.iteration_ssd
        assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    print(f"criterion 2 PASS: 200 instances nearest-centroid within 1e-12 ({elapsed:.2f}s)")


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


def test_criterion_3_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        input_size = int(rng.integers(3, 7))
        hidden = int(rng.integers(2, 6))
        length = int(rng.integers(2, 7))
        batch = int(rng.integers(1, 5))
        model = init_model(input_size, hidden_size=hidden, seed=int(rng.integers(1 << 30)))
        X = rng.normal(size=(length, batch, input_size))
        y = rng.integers(0, 2, size=batch).astype(float)
        _, grads = loss_and_grads(model, X, y)
        fd = _finite_difference_grads(model, X, y)
        for name in grads:
            err = np.abs(grads[name] - fd[name])
            tol = 1e-5 * np.maximum(1.0, np.abs(fd[name]))
            assert (err <= tol).all(), f"{name}: max err {err.max():.3e}"
            scale = np.maximum(1.0, np.abs(fd[name]))
            worst = max(worst, float((err / scale).max()))
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    print(f"criterion 3 PASS: 50 models within 1e-5 relative (worst {worst:.2e}, {elapsed:.2f}s)")


def test_criterion_4_forecast_quality_reduced_profile(small_world):
    fleet, traces = small_world
    t0 = time.perf_counter()
    train_ds, holdout, encoder = build_window_dataset(traces, stride=5)
    model = init_model(encoder.width, hidden_size=32, seed=SEED)
    result = train(
        model, train_ds, TrainConfig(epochs=10, learning_rate=0.001, seed=SEED), holdout=holdout
    )
    accuracy = evaluate_accuracy(result.model, holdout)
    elapsed = time.perf_counter() - t0
    assert accuracy >= 0.8
    assert elapsed <= 60.0
    print(f"criterion 4 PASS (reduced): holdout accuracy {accuracy:.4f} >= 0.8 ({elapsed:.1f}s)")


@pytest.mark.skipif(
    not os.environ.get("VECSIM_FULL_ACCEPTANCE"),
    reason="full training profile is slow; set VECSIM_FULL_ACCEPTANCE=1 to run it",
)
def test_criterion_4_forecast_quality_full_profile(traces50):
    t0 = time.perf_counter()
    train_ds, holdout, encoder = build_window_dataset(traces50, stride=17)
    model = init_model(encoder.width, hidden_size=128, seed=SEED)
    result = train(
        model, train_ds, TrainConfig(epochs=60, learning_rate=0.001, seed=SEED), holdout=holdout
    )
    accuracy = evaluate_accuracy(result.model, holdout)
    elapsed = time.perf_counter() - t0
    assert accuracy >= 0.85
    assert elapsed <= 900.0
    print(f"criterion 4 PASS (full): holdout accuracy {accuracy:.4f} >= 0.85 ({elapsed:.1f}s)")


def test_criterion_5_latency_ordering_and_ratio(comparison):
    result, elapsed = comparison
    lines = []
    for scale in SCALES:
        veca = result.mean_latency_ms(scale, "veca")
        vela = result.mean_latency_ms(scale, "vela")
        vecflex = result.mean_latency_ms(scale, "vecflex")
        assert veca < vela < vecflex, (scale, veca, vela, vecflex)
        # half of VELA's latency, with the factor relaxed by +0.1
        assert veca <= 0.6 * vela, (scale, veca / vela)
        lines.append(f"{scale}:{veca / vela:.3f}")
    assert elapsed < 120.0
    print(f"criterion 5 PASS: veca < vela < vecflex, veca/vela {' '.join(lines)} ({elapsed:.1f}s)")


def test_criterion_6_productivity_gap(comparison):
    result, elapsed = comparison
    veca = result.mean_productivity("veca")
    vela = result.mean_productivity("vela")
    vecflex = result.mean_productivity("vecflex")
    gap = veca - max(vela, vecflex)
    assert gap >= 15.0, (veca, vela, vecflex)
    assert elapsed < 120.0
    print(
        f"criterion 6 PASS: productivity veca {veca:.1f}% vs vela {vela:.1f}% / "
        f"vecflex {vecflex:.1f}% (gap {gap:.1f} points, {elapsed:.1f}s)"
    )


def test_criterion_7_failover_never_reforecasts(small_world):
    fleet, traces = small_world
    model, standardizer, _ = cluster_fleet(fleet, seed=SEED)
    _, _, encoder = build_window_dataset(traces, stride=487)
    artifacts = Artifacts(
        cluster_model=model,
        standardizer=standardizer,
        rnn=init_model(encoder.width, hidden_size=16, seed=SEED),
        encoder=encoder,
    )
    config = SimConfig(failure_injection=True, forced_failure_prob=1.0)
    costs = LatencyCostModel()

    t0 = time.perf_counter()
    scenarios = 0
    for s in range(30):
        workloads = generate_workloads(
            WorkloadConfig(count=40, cc_required_prob=0.0), seed=1000 + s
        )
        report = run_simulation(
            fleet, traces, workloads, "veca", artifacts, config, costs, seed=1000 + s
        )
        for rec in report.records:
            assert len(rec.pass_candidate_sizes) <= 1
            if rec.pass_candidate_sizes:
                assert rec.predictions_used == rec.pass_candidate_sizes[0]
                scenarios += 1
    elapsed = time.perf_counter() - t0
    assert scenarios >= 1000
    assert elapsed < 60.0
    print(
        f"criterion 7 PASS: forecasts == initial candidate set in {scenarios} "
        f"failure scenarios ({elapsed:.1f}s)"
    )


def _cc_workflow():
    return Workflow(
        workflow_id=1,
        required=CapacityVector(4, 8.0, 100.0),
        duration_s=300,
        cc_required=True,
        user_location=GeoPoint(40.0, -100.0),
        submit_time=DEFAULT_START_EPOCH,
    )


# independent reference rules for the enclave lifecycle
_LEGAL = {
    "start": {EnclaveState.BUILT},
    "attest": {EnclaveState.RUNNING},
    "terminate": set(EnclaveState),
}
_APPLY = {"start": Enclave.start, "attest": Enclave.mark_attested, "terminate": Enclave.terminate}
_NEXT = {
    "start": EnclaveState.RUNNING,
    "attest": EnclaveState.ATTESTED,
    "terminate": EnclaveState.TERMINATED,
}


def test_criterion_8_enclave_safety(fleet50, traces50, artifacts50):
    rng = np.random.default_rng(8)
    image = build_enclave(_cc_workflow())
    names = ("start", "attest", "terminate")

    transitions = 0
    for i in range(10_000):
        enclave = Enclave(f"enc-{i}", 0, image)
        state = EnclaveState.BUILT
        for j in rng.integers(0, 3, size=int(rng.integers(1, 9))):
            op = names[j]
            if state in _LEGAL[op]:
                _APPLY[op](enclave)
                state = _NEXT[op]
            else:
                try:
                    _APPLY[op](enclave)
                except IllegalTransitionError:
                    pass
                else:
                    raise AssertionError(f"illegal {op} accepted in state {state}")
            assert enclave.state is state
            transitions += 1

    certifier = Certifier(seed=SEED)
    certifier.register_node(0)
    nonce = certifier.issue_nonce()
    blob = rng.bytes(32 * 100_000)
    verified = 0
    for i in range(100_000):
        doc = AttestationDocument(
            "enc-forged", 0, image.measurement, nonce, blob[32 * i : 32 * (i + 1)].hex()
        )
        try:
            certifier.verify(doc, expected_measurement=image.measurement)
            verified += 1
        except AttestationError:
            pass
    assert verified == 0

    # CC-required workflows only ever run on cc-capable, attested nodes
    cc_ids = {n.node_id for n in fleet50 if n.cc_capable}
    workloads = generate_workloads(WorkloadConfig(count=30, cc_required_prob=1.0), seed=SEED)
    config = SimConfig(failure_injection=True, forced_failure_prob=0.3)
    executions = 0
    for scheduler in SCHEDULERS:
        report = run_simulation(
            fleet50, traces50, workloads, scheduler, artifacts50, config, LatencyCostModel(), SEED
        )
        for wid, node_id, capable, attested in report.counters["cc_execution_checks"]:
            assert capable and attested and node_id in cc_ids, (scheduler, wid, node_id)
        for rec in report.records:
            for attempt in rec.attempts:
                assert attempt.node_id in cc_ids
                assert attempt.node_id in rec.attested_nodes
        executions += len(report.counters["cc_execution_checks"])
    assert executions > 0
    print(
        f"criterion 8 PASS: {transitions} transitions checked, 100000 forged tags "
        f"rejected, {executions} CC executions attested"
    )


def test_criterion_9_repeated_commands_are_byte_identical(tmp_path):
    cfg = tmp_path / "exp.ini"
    cfg.write_text(CONFIG_TEXT)
    dirs = [str(tmp_path / "a"), str(tmp_path / "b")]
    for out in dirs:
        assert main(["gen", "--config", str(cfg), "--out", out]) == 0
        assert main(["train", "--config", str(cfg), "--out", out]) == 0
        assert main(["simulate", "--config", str(cfg), "--out", out]) == 0

    names = sorted(n for n in os.listdir(dirs[0]) if n.endswith(".csv"))
    assert len(names) >= 7  # fleet, traces, elbow, two workload scales, loss curve, records, log
    for name in names:
        with open(os.path.join(dirs[0], name), "rb") as fh:
            first = fh.read()
        with open(os.path.join(dirs[1], name), "rb") as fh:
            second = fh.read()
        assert first == second, name

    # repeating a command in place reproduces the same bytes as well
    before = {}
    for name in ("records.csv", "decision_log.csv"):
        with open(os.path.join(dirs[0], name), "rb") as fh:
            before[name] = fh.read()
    assert main(["simulate", "--config", str(cfg), "--out", dirs[0], "--force"]) == 0
    for name, data in before.items():
        with open(os.path.join(dirs[0], name), "rb") as fh:
            assert fh.read() == data, name
    print(f"criterion 9 PASS: {len(names)} CSV outputs byte-identical across repeated runs")
