"""Synthetic volunteer fleet: nodes, hourly availability traces, and workloads.

Every generator here is a pure function of (config, seed); calling one twice
with the same arguments yields identical objects, and the CSV writers use
fixed formatting so repeated runs are byte-identical.

Capacity values are drawn around configurable tier centers with +/-10%
uniform jitter per component, which keeps the tier structure recoverable by
clustering. Availability follows one of four weekly templates (office-hours
gaps, always-on, night-only, erratic) perturbed by per-hour Bernoulli noise.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

# Monday 2024-01-01 00:00:00 UTC; keeping the default trace origin on a
# midnight Monday makes weekday/hour arithmetic easy to eyeball in tests.
DEFAULT_START_EPOCH = 1704067200

DEFAULT_HORIZON_HOURS = 8760
HOUR_S = 3600

# Distinct substreams per generator so fleet/trace/workload draws never alias.
_FLEET_STREAM = 0
_TRACE_STREAM = 1
_WORKLOAD_STREAM = 2

CAPACITY_JITTER = 0.10


class ConfigurationError(ValueError):
    """Raised when a config value is structurally or semantically invalid."""


class ProfileKind(Enum):
    OFFICE_HOURS_LIMITED = "office_hours_limited"
    ALWAYS_ON = "always_on"
    NIGHT_ONLY = "night_only"
    ERRATIC = "erratic"


@dataclass(frozen=True)
class CapacityVector:
    """Compute capacity of a node or requirement of a workflow."""

    cpu_count: int
    ram_gb: float
    storage_gb: float

    def __post_init__(self) -> None:
        if self.cpu_count < 1 or int(self.cpu_count) != self.cpu_count:
            raise ConfigurationError(f"cpu_count must be a positive integer, got {self.cpu_count!r}")
        if self.ram_gb <= 0 or self.storage_gb <= 0:
            raise ConfigurationError("ram_gb and storage_gb must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([float(self.cpu_count), self.ram_gb, self.storage_gb])


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (-90.0 <= self.lat <= 90.0):
            raise ConfigurationError(f"latitude out of range: {self.lat}")
        if not (-180.0 <= self.lon <= 180.0):
            raise ConfigurationError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class AvailabilityProfile:
    """Weekly availability template plus noise.

    base_online_prob applies wherever the template marks the node online;
    noise_prob independently flips each hour's state afterwards.
    """

    kind: ProfileKind
    base_online_prob: float
    noise_prob: float

    def __post_init__(self) -> None:
        for name in ("base_online_prob", "noise_prob"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigurationError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class VecNode:
    """A volunteer node."""

    node_id: int
    capacity: CapacityVector
    location: GeoPoint
    cc_capable: bool
    profile: AvailabilityProfile


@dataclass(frozen=True)
class AvailabilityTrace:
    """Hourly 0/1 availability for one node over the horizon.

    Hour bucket h covers the closed-open interval
    [start_epoch + h*3600, start_epoch + (h+1)*3600).
    """

    node_id: int
    start_epoch: int
    hours: np.ndarray  # int8, values in {0, 1}

    def __post_init__(self) -> None:
        arr = np.asarray(self.hours, dtype=np.int8)
        if arr.ndim != 1 or arr.size == 0:
            raise ConfigurationError("trace must be a non-empty 1-d array")
        if not np.isin(arr, (0, 1)).all():
            raise ConfigurationError("trace states must be 0 or 1")
        object.__setattr__(self, "hours", arr)

    @property
    def horizon_hours(self) -> int:
        return int(self.hours.size)


@dataclass(frozen=True)
class Workflow:
    workflow_id: int
    required: CapacityVector
    duration_s: int
    cc_required: bool
    user_location: GeoPoint
    submit_time: int  # epoch seconds

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ConfigurationError("duration_s must be positive")

    def descriptor(self) -> str:
        """Canonical one-line description; hashed for enclave measurements."""
        r = self.required
        u = self.user_location
        return "|".join(
            [
                str(self.workflow_id),
                str(r.cpu_count),
                f"{r.ram_gb:.2f}",
                f"{r.storage_gb:.2f}",
                str(self.duration_s),
                "1" if self.cc_required else "0",
                f"{u.lat:.6f}",
                f"{u.lon:.6f}",
                str(self.submit_time),
            ]
        )


@dataclass(frozen=True)
class CapacityTier:
    """Center of one capacity class; nodes jitter around it."""

    cpu_count: int
    ram_gb: float
    storage_gb: float

    def center(self) -> np.ndarray:
        return np.array([float(self.cpu_count), self.ram_gb, self.storage_gb])


# Four volunteer-hardware classes: compute-heavy, memory-heavy,
# storage-heavy, and all-round workstations. Each pair of centers differs in
# exactly two components, so after standardization they sit at the corners of
# a regular simplex: well separated, with no two tiers nearly collinear.
DEFAULT_TIERS = (
    CapacityTier(16, 8.0, 250.0),
    CapacityTier(4, 32.0, 250.0),
    CapacityTier(4, 8.0, 1000.0),
    CapacityTier(16, 32.0, 1000.0),
)

DEFAULT_PROFILES = (
    AvailabilityProfile(ProfileKind.OFFICE_HOURS_LIMITED, 1.0, 0.02),
    AvailabilityProfile(ProfileKind.ALWAYS_ON, 0.98, 0.01),
    AvailabilityProfile(ProfileKind.NIGHT_ONLY, 1.0, 0.02),
    AvailabilityProfile(ProfileKind.ERRATIC, 0.6, 0.05),
)


@dataclass(frozen=True)
class BoundingBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self) -> None:
        if self.lat_min >= self.lat_max or self.lon_min >= self.lon_max:
            raise ConfigurationError("bounding box must have positive extent")
        GeoPoint(self.lat_min, self.lon_min)
        GeoPoint(self.lat_max, self.lon_max)


# Roughly the continental-US span; any non-degenerate box works.
DEFAULT_BBOX = BoundingBox(25.0, 49.0, -124.0, -67.0)


@dataclass(frozen=True)
class FleetConfig:
    node_count: int = 50
    tiers: tuple[CapacityTier, ...] = DEFAULT_TIERS
    tier_weights: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    profiles: tuple[AvailabilityProfile, ...] = DEFAULT_PROFILES
    profile_weights: tuple[float, ...] = (0.35, 0.35, 0.20, 0.10)
    cc_fraction: float = 0.4
    bbox: BoundingBox = DEFAULT_BBOX

    def __post_init__(self) -> None:
        if self.node_count < 1:
            raise ConfigurationError("node_count must be positive")
        if not self.tiers:
            raise ConfigurationError("at least one capacity tier is required")
        if len(self.tier_weights) != len(self.tiers):
            raise ConfigurationError("tier_weights length must match tiers")
        if not self.profiles:
            raise ConfigurationError("at least one availability profile is required")
        if len(self.profile_weights) != len(self.profiles):
            raise ConfigurationError("profile_weights length must match profiles")
        for w in self.tier_weights + self.profile_weights:
            if w < 0:
                raise ConfigurationError("weights must be nonnegative")
        if sum(self.tier_weights) <= 0 or sum(self.profile_weights) <= 0:
            raise ConfigurationError("weights must not all be zero")
        if not (0.0 <= self.cc_fraction <= 1.0):
            raise ConfigurationError("cc_fraction must be in [0, 1]")


@dataclass(frozen=True)
class WorkloadConfig:
    count: int = 50
    arrival_start_hour: int = 4800
    arrival_window_hours: int = 48
    duration_min_s: int = 60
    duration_max_s: int = 1800
    cc_required_prob: float = 0.3
    tiers: tuple[CapacityTier, ...] = DEFAULT_TIERS
    tier_weights: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    bbox: BoundingBox = DEFAULT_BBOX

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ConfigurationError("workload count must be positive")
        if self.arrival_start_hour < 0 or self.arrival_window_hours < 1:
            raise ConfigurationError("arrival window must be nonnegative and non-empty")
        if not (0 < self.duration_min_s <= self.duration_max_s):
            raise ConfigurationError("duration bounds must satisfy 0 < min <= max")
        if not (0.0 <= self.cc_required_prob <= 1.0):
            raise ConfigurationError("cc_required_prob must be in [0, 1]")
        if len(self.tier_weights) != len(self.tiers):
            raise ConfigurationError("tier_weights length must match tiers")


def _allocate_counts(weights: Sequence[float], total: int) -> list[int]:
    """Deterministic largest-remainder apportionment of `total` over weights."""
    s = float(sum(weights))
    raw = [w / s * total for w in weights]
    counts = [int(math.floor(r)) for r in raw]
    leftover = total - sum(counts)
    # Highest fractional part first; ties broken by lower index.
    order = sorted(range(len(weights)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def generate_fleet(config: FleetConfig, seed: int) -> list[VecNode]:
    """Generate the volunteer fleet.

    Tier and profile memberships are apportioned deterministically from the
    weights (largest remainder), then shuffled over node ids with the run
    seed; capacities jitter +/-10% around the tier centers. CC capability is
    granted to exactly round(cc_fraction * n) nodes.
    """
    rng = np.random.default_rng([seed, _FLEET_STREAM])
    n = config.node_count

    tier_of = np.repeat(
        np.arange(len(config.tiers)), _allocate_counts(config.tier_weights, n)
    )
    rng.shuffle(tier_of)
    profile_of = np.repeat(
        np.arange(len(config.profiles)), _allocate_counts(config.profile_weights, n)
    )
    rng.shuffle(profile_of)

    jitter = rng.uniform(-CAPACITY_JITTER, CAPACITY_JITTER, size=(n, 3))
    lats = rng.uniform(config.bbox.lat_min, config.bbox.lat_max, size=n)
    lons = rng.uniform(config.bbox.lon_min, config.bbox.lon_max, size=n)

    cc_count = int(round(config.cc_fraction * n))
    cc_ids = set(rng.permutation(n)[:cc_count].tolist())

    nodes = []
    for i in range(n):
        center = config.tiers[int(tier_of[i])].center()
        scaled = center * (1.0 + jitter[i])
        cap = CapacityVector(
            cpu_count=max(1, int(round(scaled[0]))),
            ram_gb=round(float(scaled[1]), 2),
            storage_gb=round(float(scaled[2]), 2),
        )
        nodes.append(
            VecNode(
                node_id=i,
                capacity=cap,
                location=GeoPoint(round(float(lats[i]), 6), round(float(lons[i]), 6)),
                cc_capable=i in cc_ids,
                profile=config.profiles[int(profile_of[i])],
            )
        )
    return nodes


def _calendar_arrays(start_epoch: int, horizon_hours: int) -> tuple[np.ndarray, np.ndarray]:
    """(weekday, hour-of-day) for each hour index; weekday 0 = Monday (UTC)."""
    start = datetime.fromtimestamp(start_epoch, tz=timezone.utc)
    if start.minute or start.second or start.microsecond:
        raise ConfigurationError("start_epoch must be aligned to a whole hour")
    weekdays = np.empty(horizon_hours, dtype=np.int64)
    hours = np.empty(horizon_hours, dtype=np.int64)
    # Hour-of-day repeats every 24 steps and weekday every 168; iterate once.
    first_hour = start.hour
    first_weekday = start.weekday()
    for i in range(horizon_hours):
        total = first_hour + i
        hours[i] = total % 24
        weekdays[i] = (first_weekday + total // 24) % 7
    return weekdays, hours


def _profile_template(kind: ProfileKind, weekdays: np.ndarray, hours: np.ndarray) -> np.ndarray:
    if kind is ProfileKind.OFFICE_HOURS_LIMITED:
        # Volunteer machines are in use on weekdays 9:00-17:00 -> offline then.
        office = (weekdays < 5) & (hours >= 9) & (hours < 17)
        return (~office).astype(np.int8)
    if kind is ProfileKind.ALWAYS_ON:
        return np.ones(hours.size, dtype=np.int8)
    if kind is ProfileKind.NIGHT_ONLY:
        night = (hours >= 20) | (hours < 8)
        return night.astype(np.int8)
    if kind is ProfileKind.ERRATIC:
        return np.ones(hours.size, dtype=np.int8)
    raise ConfigurationError(f"unknown profile kind {kind!r}")


def generate_traces(
    fleet: Sequence[VecNode],
    horizon_hours: int = DEFAULT_HORIZON_HOURS,
    seed: int = 0,
    start_epoch: int = DEFAULT_START_EPOCH,
) -> list[AvailabilityTrace]:
    """Generate one hourly availability trace per node.

    Each node draws from its own seeded substream, so a node's trace does not
    depend on fleet ordering. State = template AND Bernoulli(base_online_prob),
    then each hour flips independently with probability noise_prob.
    """
    if horizon_hours < 1:
        raise ConfigurationError("horizon_hours must be positive")
    weekdays, hours = _calendar_arrays(start_epoch, horizon_hours)
    traces = []
    for node in fleet:
        rng = np.random.default_rng([seed, _TRACE_STREAM, node.node_id])
        template = _profile_template(node.profile.kind, weekdays, hours)
        up = rng.random(horizon_hours) < node.profile.base_online_prob
        state = (template.astype(bool)) & up
        flips = rng.random(horizon_hours) < node.profile.noise_prob
        state = np.where(flips, ~state, state)
        traces.append(
            AvailabilityTrace(
                node_id=node.node_id,
                start_epoch=start_epoch,
                hours=state.astype(np.int8),
            )
        )
    return traces


def availability_at(trace: AvailabilityTrace, t: float) -> int:
    """Trace state for the hour bucket containing epoch time t."""
    idx = int((t - trace.start_epoch) // HOUR_S)
    if idx < 0 or idx >= trace.horizon_hours:
        raise ValueError(
            f"time {t} outside trace horizon for node {trace.node_id} "
            f"([{trace.start_epoch}, {trace.start_epoch + trace.horizon_hours * HOUR_S}))"
        )
    return int(trace.hours[idx])


def generate_workloads(
    config: WorkloadConfig,
    seed: int,
    start_epoch: int = DEFAULT_START_EPOCH,
) -> list[Workflow]:
    """Generate workflows with uniform arrivals over the configured window.

    Requirements are sampled near the capacity tier centers (a uniform 0.85-1.0
    fraction of each component) so cluster routing has a recoverable target.
    Returned workflows are sorted by submit_time with sequential ids.
    """
    rng = np.random.default_rng([seed, _WORKLOAD_STREAM])
    n = config.count
    window_s = config.arrival_window_hours * HOUR_S
    base = start_epoch + config.arrival_start_hour * HOUR_S

    offsets = rng.integers(0, window_s, size=n)
    tier_idx = rng.choice(
        len(config.tiers),
        size=n,
        p=np.asarray(config.tier_weights, dtype=float) / sum(config.tier_weights),
    )
    req_frac = rng.uniform(0.85, 1.0, size=(n, 3))
    durations = rng.integers(config.duration_min_s, config.duration_max_s + 1, size=n)
    cc = rng.random(n) < config.cc_required_prob
    lats = rng.uniform(config.bbox.lat_min, config.bbox.lat_max, size=n)
    lons = rng.uniform(config.bbox.lon_min, config.bbox.lon_max, size=n)

    order = np.argsort(offsets, kind="stable")
    workflows = []
    for new_id, i in enumerate(order):
        center = config.tiers[int(tier_idx[i])].center()
        scaled = center * req_frac[i]
        req = CapacityVector(
            cpu_count=max(1, int(round(scaled[0]))),
            ram_gb=round(float(scaled[1]), 2),
            storage_gb=round(float(scaled[2]), 2),
        )
        workflows.append(
            Workflow(
                workflow_id=new_id,
                required=req,
                duration_s=int(durations[i]),
                cc_required=bool(cc[i]),
                user_location=GeoPoint(round(float(lats[i]), 6), round(float(lons[i]), 6)),
                submit_time=int(base + offsets[i]),
            )
        )
    return workflows


# ---------------------------------------------------------------------------
# CSV round-trips. Writers accept an optional '# ...' header comment line
# (provenance: config digest, seed, artifact version); readers skip comments.
# ---------------------------------------------------------------------------

def _open_writer(path: str, header_comment: str | None):
    fh = open(path, "w", newline="")
    if header_comment:
        fh.write(header_comment.rstrip("\n") + "\n")
    return fh


def write_fleet_csv(path: str, fleet: Sequence[VecNode], header_comment: str | None = None) -> None:
    with _open_writer(path, header_comment) as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "cpu", "ram_gb", "storage_gb", "lat", "lon", "cc_capable", "profile"])
        for n in fleet:
            w.writerow(
                [
                    n.node_id,
                    n.capacity.cpu_count,
                    f"{n.capacity.ram_gb:.2f}",
                    f"{n.capacity.storage_gb:.2f}",
                    f"{n.location.lat:.6f}",
                    f"{n.location.lon:.6f}",
                    int(n.cc_capable),
                    n.profile.kind.value,
                ]
            )


def read_fleet_csv(path: str, profiles: Mapping[str, AvailabilityProfile]) -> list[VecNode]:
    """Read a fleet CSV; profile parameters are resolved from `profiles`
    (kind value -> profile), since the CSV stores only the kind."""
    nodes = []
    with open(path, newline="") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(rows)
        if header[:2] != ["node_id", "cpu"]:
            raise ConfigurationError(f"unexpected fleet CSV header in {path}: {header}")
        for row in rows:
            kind = row[7]
            if kind not in profiles:
                raise ConfigurationError(f"no profile parameters known for kind {kind!r}")
            nodes.append(
                VecNode(
                    node_id=int(row[0]),
                    capacity=CapacityVector(int(row[1]), float(row[2]), float(row[3])),
                    location=GeoPoint(float(row[4]), float(row[5])),
                    cc_capable=bool(int(row[6])),
                    profile=profiles[kind],
                )
            )
    return nodes


def profile_map(config: FleetConfig) -> dict[str, AvailabilityProfile]:
    return {p.kind.value: p for p in config.profiles}


def write_traces_csv(
    path: str, traces: Sequence[AvailabilityTrace], header_comment: str | None = None
) -> None:
    if not traces:
        raise ConfigurationError("no traces to write")
    start = traces[0].start_epoch
    comment = (header_comment.rstrip("\n") + " " if header_comment else "# ") + f"start_epoch={start}"
    with _open_writer(path, comment) as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "hour_index", "state"])
        for tr in traces:
            if tr.start_epoch != start:
                raise ConfigurationError("all traces in one file must share start_epoch")
            for h, s in enumerate(tr.hours):
                w.writerow([tr.node_id, h, int(s)])


def read_traces_csv(path: str) -> list[AvailabilityTrace]:
    start_epoch = None
    per_node: dict[int, list[tuple[int, int]]] = {}
    with open(path, newline="") as fh:
        first = fh.readline()
        if first.startswith("#"):
            for token in first.split():
                if token.startswith("start_epoch="):
                    start_epoch = int(token.split("=", 1)[1])
            header_line = fh.readline()
        else:
            header_line = first
        if not header_line.startswith("node_id,hour_index,state"):
            raise ConfigurationError(f"unexpected trace CSV header in {path}")
        if start_epoch is None:
            raise ConfigurationError(f"trace CSV {path} is missing its start_epoch annotation")
        for row in csv.reader(fh):
            per_node.setdefault(int(row[0]), []).append((int(row[1]), int(row[2])))
    traces = []
    for node_id in sorted(per_node):
        entries = sorted(per_node[node_id])
        hours = np.array([s for _, s in entries], dtype=np.int8)
        if [h for h, _ in entries] != list(range(len(entries))):
            raise ConfigurationError(f"trace for node {node_id} has missing hour indices")
        traces.append(AvailabilityTrace(node_id=node_id, start_epoch=start_epoch, hours=hours))
    return traces


def write_workloads_csv(
    path: str, workloads: Sequence[Workflow], header_comment: str | None = None
) -> None:
    with _open_writer(path, header_comment) as fh:
        w = csv.writer(fh)
        w.writerow(
            ["workflow_id", "cpu", "ram_gb", "storage_gb", "duration_s", "cc_required", "lat", "lon", "submit_epoch"]
        )
        for wf in workloads:
            w.writerow(
                [
                    wf.workflow_id,
                    wf.required.cpu_count,
                    f"{wf.required.ram_gb:.2f}",
                    f"{wf.required.storage_gb:.2f}",
                    wf.duration_s,
                    int(wf.cc_required),
                    f"{wf.user_location.lat:.6f}",
                    f"{wf.user_location.lon:.6f}",
                    wf.submit_time,
                ]
            )


def read_workloads_csv(path: str) -> list[Workflow]:
    out = []
    with open(path, newline="") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(rows)
        if header[:2] != ["workflow_id", "cpu"]:
            raise ConfigurationError(f"unexpected workload CSV header in {path}")
        for row in rows:
            out.append(
                Workflow(
                    workflow_id=int(row[0]),
                    required=CapacityVector(int(row[1]), float(row[2]), float(row[3])),
                    duration_s=int(row[4]),
                    cc_required=bool(int(row[5])),
                    user_location=GeoPoint(float(row[6]), float(row[7])),
                    submit_time=int(row[8]),
                )
            )
    return out
