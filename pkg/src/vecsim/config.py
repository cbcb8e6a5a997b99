"""Experiment configuration: INI loading, validation, canonical digests.

Every run is described by a small INI file. All keys are optional except
``seed`` in ``[experiment]`` (which may instead come from the command line).
Unknown sections or keys are rejected, and error messages point at the
offending file, line, and key so typos surface immediately.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, replace

from . import __version__
from .fleet import (
    DEFAULT_HORIZON_HOURS,
    DEFAULT_START_EPOCH,
    ConfigurationError,
    FleetConfig,
    WorkloadConfig,
)
from .scheduler import LatencyCostModel
from .sim import SCHEDULERS, SimConfig


class ConfigFileError(ConfigurationError):
    """Invalid or unreadable experiment configuration file."""


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 60
    learning_rate: float = 0.001
    hidden_size: int = 128
    sequence_length: int = 24
    batch_size: int = 64
    stride: int = 5
    holdout_weeks: int = 4

    def __post_init__(self) -> None:
        for name in ("epochs", "hidden_size", "sequence_length", "batch_size", "stride"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.holdout_weeks < 1:
            raise ConfigurationError("holdout_weeks must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    scheduler: str = "veca"
    scales: tuple[int, ...] = (10, 50, 150, 500)
    instance_scale: int = 50
    fleet: FleetConfig = FleetConfig()
    horizon_hours: int = DEFAULT_HORIZON_HOURS
    start_epoch: int = DEFAULT_START_EPOCH
    workload: WorkloadConfig = WorkloadConfig()
    k: int | None = None  # None selects k by the elbow rule
    k_max: int = 8
    train: TrainSettings = TrainSettings()
    costs: LatencyCostModel = LatencyCostModel()
    sim: SimConfig = SimConfig()

    def __post_init__(self) -> None:
        if self.scheduler not in SCHEDULERS:
            raise ConfigurationError(
                f"scheduler must be one of {', '.join(SCHEDULERS)}; got {self.scheduler!r}"
            )
        if not self.scales:
            raise ConfigurationError("scales must be non-empty")
        if any(s < 1 for s in self.scales):
            raise ConfigurationError("scales must be positive")
        if self.instance_scale not in self.scales:
            raise ConfigurationError("instance_scale must appear in scales")
        if self.k is not None and self.k < 1:
            raise ConfigurationError("k must be positive")
        if self.k_max < 1:
            raise ConfigurationError("k_max must be positive")
        if self.horizon_hours < 1:
            raise ConfigurationError("horizon_hours must be positive")


# section -> key -> (type tag, target path)
_SCHEMA: dict[str, dict[str, str]] = {
    "experiment": {
        "seed": "int",
        "scheduler": "str",
        "scales": "int_list",
        "instance_scale": "int",
    },
    "fleet": {
        "node_count": "int",
        "cc_fraction": "float",
        "horizon_hours": "int",
        "start_epoch": "int",
    },
    "workload": {
        "count": "int",
        "arrival_start_hour": "int",
        "arrival_window_hours": "int",
        "duration_min_s": "float",
        "duration_max_s": "float",
        "cc_required_prob": "float",
    },
    "clustering": {
        "k": "k",
        "k_max": "int",
    },
    "train": {
        "epochs": "int",
        "learning_rate": "float",
        "hidden_size": "int",
        "sequence_length": "int",
        "batch_size": "int",
        "stride": "int",
        "holdout_weeks": "int",
    },
    "costs": {
        "cluster_select_cost_ms": "float",
        "per_node_sample_cost_ms": "float",
        "vela_clusters_sampled": "int",
    },
    "sim": {
        "availability_threshold": "float",
        "failure_injection": "bool",
        "forced_failure_prob": "float",
        "cache_failover_delay_s": "float",
        "hub_resubmit_delay_s": "float",
        "attempt_budget_s": "float",
        "requeue_backoff_s": "float",
        "enclave_build_delay_s": "float",
        "enclave_attest_delay_s": "float",
        "max_attempts": "int",
    },
}

_TRUE = {"1", "yes", "true", "on"}
_FALSE = {"0", "no", "false", "off"}


def _line_of(text: str, section: str, key: str | None) -> int | None:
    """Best-effort line lookup so errors can point into the file."""
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
            if key is None and current == section:
                return lineno
        elif key is not None and current == section:
            if re.match(rf"{re.escape(key)}\s*[=:]", stripped):
                return lineno
    return None


def _fail(path: str, text: str, section: str, key: str | None, message: str):
    lineno = _line_of(text, section, key)
    where = f"{path}:{lineno}" if lineno else path
    target = f"[{section}] {key}" if key else f"[{section}]"
    raise ConfigFileError(f"{where}: {target}: {message}")


def _parse_value(raw: str, kind: str, path: str, text: str, section: str, key: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "int_list":
            values = tuple(int(part.strip()) for part in raw.split(",") if part.strip())
            if not values:
                raise ValueError("empty list")
            return values
        if kind == "k":
            if raw.lower() == "auto":
                return None
            return int(raw)
        return raw
    except ValueError as exc:
        _fail(path, text, section, key, f"cannot parse {raw!r} as {kind}: {exc}")


def load_config(path: str, seed_override: int | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigFileError(f"{path}: cannot read config: {exc}") from exc
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigFileError(f"{path}: invalid INI syntax: {exc}") from exc

    values: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            _fail(path, text, section, None, f"unknown section (expected one of {sorted(_SCHEMA)})")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                _fail(
                    path, text, section, key,
                    f"unknown key (expected one of {sorted(_SCHEMA[section])})",
                )
            values[section][key] = _parse_value(raw, _SCHEMA[section][key], path, text, section, key)

    exp = values.get("experiment", {})
    seed = seed_override if seed_override is not None else exp.get("seed")
    if seed is None:
        raise ConfigFileError(
            f"{path}: [experiment] seed: required (set it in the file or pass --seed)"
        )

    fleet_sec = values.get("fleet", {})
    workload_sec = values.get("workload", {})
    clustering = values.get("clustering", {})
    train_sec = values.get("train", {})
    costs_sec = values.get("costs", {})
    sim_sec = values.get("sim", {})

    def pick(section: dict, fields: tuple[str, ...]) -> dict:
        return {name: section[name] for name in fields if name in section}

    try:
        fleet = replace(
            FleetConfig(), **pick(fleet_sec, ("node_count", "cc_fraction"))
        )
        workload = replace(
            WorkloadConfig(),
            **pick(
                workload_sec,
                (
                    "count",
                    "arrival_start_hour",
                    "arrival_window_hours",
                    "duration_min_s",
                    "duration_max_s",
                    "cc_required_prob",
                ),
            ),
        )
        train = TrainSettings(**pick(
            train_sec,
            ("epochs", "learning_rate", "hidden_size", "sequence_length", "batch_size", "stride", "holdout_weeks"),
        ))
        costs = LatencyCostModel(
            cluster_select_cost_s=costs_sec.get("cluster_select_cost_ms", 5.0) / 1000.0,
            per_node_sample_cost_s=costs_sec.get("per_node_sample_cost_ms", 1.0) / 1000.0,
            vela_clusters_sampled=costs_sec.get("vela_clusters_sampled", 2),
        )
        sim = replace(SimConfig(sequence_length=train.sequence_length), **sim_sec)
        config = ExperimentConfig(
            seed=int(seed),
            scheduler=exp.get("scheduler", "veca"),
            scales=exp.get("scales", (10, 50, 150, 500)),
            instance_scale=exp.get("instance_scale", 50),
            fleet=fleet,
            horizon_hours=fleet_sec.get("horizon_hours", DEFAULT_HORIZON_HOURS),
            start_epoch=fleet_sec.get("start_epoch", DEFAULT_START_EPOCH),
            workload=workload,
            k=clustering.get("k"),
            k_max=clustering.get("k_max", 8),
            train=train,
            costs=costs,
            sim=sim,
        )
    except ConfigFileError:
        raise
    except (ConfigurationError, TypeError, ValueError) as exc:
        raise ConfigFileError(f"{path}: invalid configuration: {exc}") from exc
    return config


def canonical_text(config: ExperimentConfig) -> str:
    """Stable key=value rendering of the effective config (digest input)."""
    lines = [
        f"experiment.seed={config.seed}",
        f"experiment.scheduler={config.scheduler}",
        f"experiment.scales={','.join(str(s) for s in config.scales)}",
        f"experiment.instance_scale={config.instance_scale}",
        f"fleet.node_count={config.fleet.node_count}",
        f"fleet.cc_fraction={config.fleet.cc_fraction!r}",
        f"fleet.horizon_hours={config.horizon_hours}",
        f"fleet.start_epoch={config.start_epoch}",
        f"workload.count={config.workload.count}",
        f"workload.arrival_start_hour={config.workload.arrival_start_hour}",
        f"workload.arrival_window_hours={config.workload.arrival_window_hours}",
        f"workload.duration_min_s={config.workload.duration_min_s!r}",
        f"workload.duration_max_s={config.workload.duration_max_s!r}",
        f"workload.cc_required_prob={config.workload.cc_required_prob!r}",
        f"clustering.k={'auto' if config.k is None else config.k}",
        f"clustering.k_max={config.k_max}",
        f"train.epochs={config.train.epochs}",
        f"train.learning_rate={config.train.learning_rate!r}",
        f"train.hidden_size={config.train.hidden_size}",
        f"train.sequence_length={config.train.sequence_length}",
        f"train.batch_size={config.train.batch_size}",
        f"train.stride={config.train.stride}",
        f"train.holdout_weeks={config.train.holdout_weeks}",
        f"costs.cluster_select_cost_s={config.costs.cluster_select_cost_s!r}",
        f"costs.per_node_sample_cost_s={config.costs.per_node_sample_cost_s!r}",
        f"costs.vela_clusters_sampled={config.costs.vela_clusters_sampled}",
        f"sim.availability_threshold={config.sim.availability_threshold!r}",
        f"sim.failure_injection={config.sim.failure_injection}",
        f"sim.forced_failure_prob={config.sim.forced_failure_prob!r}",
        f"sim.cache_failover_delay_s={config.sim.cache_failover_delay_s!r}",
        f"sim.hub_resubmit_delay_s={config.sim.hub_resubmit_delay_s!r}",
        f"sim.attempt_budget_s={config.sim.attempt_budget_s!r}",
        f"sim.requeue_backoff_s={config.sim.requeue_backoff_s!r}",
        f"sim.enclave_build_delay_s={config.sim.enclave_build_delay_s!r}",
        f"sim.enclave_attest_delay_s={config.sim.enclave_attest_delay_s!r}",
        f"sim.max_attempts={config.sim.max_attempts}",
    ]
    return "\n".join(lines) + "\n"


def config_digest(config: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_text(config).encode()).hexdigest()[:12]


def file_header(config: ExperimentConfig, **extra: object) -> str:
    """Comment header stamped on every output file."""
    parts = [f"vecsim v{__version__}", f"digest={config_digest(config)}", f"seed={config.seed}"]
    parts.extend(f"{key}={value}" for key, value in sorted(extra.items()))
    return " ".join(parts)
