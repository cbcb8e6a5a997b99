"""Shared fixtures: one seeded 50-node fleet with year-long traces, plus the
fitted cluster model and a small trained forecaster reused across test files.

The forecaster here is deliberately modest (hidden 32, 6 epochs, wide window
stride) so the whole suite stays fast; the full-size training profile is
exercised in the acceptance tests.
"""

import pytest

from vecsim.fleet import (
    FleetConfig,
    WorkloadConfig,
    generate_fleet,
    generate_traces,
    generate_workloads,
)
from vecsim.forecast import TrainConfig, build_window_dataset, init_model, train
from vecsim.sim import Artifacts, cluster_fleet

SEED = 7


@pytest.fixture(scope="session")
def fleet50():
    return generate_fleet(FleetConfig(), seed=SEED)


@pytest.fixture(scope="session")
def traces50(fleet50):
    return generate_traces(fleet50, seed=SEED)


@pytest.fixture(scope="session")
def workloads50():
    return generate_workloads(WorkloadConfig(count=50), seed=SEED)


@pytest.fixture(scope="session")
def artifacts50(fleet50, traces50):
    model, standardizer, elbow = cluster_fleet(fleet50, seed=SEED)
    # stride 41 is coprime with 24 and 168, so the sampled windows still cover
    # every hour-of-day and weekday combination over the year
    train_ds, _holdout, encoder = build_window_dataset(traces50, stride=41)
    rnn = init_model(encoder.width, hidden_size=32, seed=SEED)
    train(rnn, train_ds, TrainConfig(epochs=6, seed=SEED))
    return Artifacts(
        cluster_model=model,
        standardizer=standardizer,
        rnn=rnn,
        encoder=encoder,
        elbow=elbow,
    )
