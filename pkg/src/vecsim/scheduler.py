"""Two-phase workflow scheduling with cache-backed fail-over, plus baselines.

Phase 1 routes a workflow to the cluster whose capacity centroid is nearest
its requirement. Phase 2 scores the cluster's eligible nodes with the
availability forecaster, caches the ranked list, and picks the
geographically nearest node among those above the availability threshold.

On a mid-execution node failure the cached ranking is narrowed and re-used;
the forecaster is never consulted again for that workflow (fail-over
frugality), which is the property the instrumentation counters track.

Two reference schedulers are provided for comparison: a flat scheduler that
scores every online node in the fleet (vecflex) and a random-cluster
scheduler that probes a fixed number of uniformly drawn clusters (vela).
Search latency is an accounted cost model, not wall-clock.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .clustering import ClusterModel, Standardizer, assign_cluster
from .fleet import DEFAULT_START_EPOCH, GeoPoint, VecNode, Workflow
from .forecast import FeatureEncoder, RnnModel, predict_batch, predict_window_min

EARTH_RADIUS_KM = 6371.0
DEFAULT_AVAILABILITY_THRESHOLD = 0.8


class NoEligibleNodeError(Exception):
    """No online (and, if required, CC-capable) node can take the workflow."""


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in kilometers on a 6371 km sphere."""
    lat1, lon1, lat2, lon2 = map(math.radians, (a.lat, a.lon, b.lat, b.lon))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class OrderedCandidates:
    """Scored candidates, descending availability, ties by ascending node id."""

    workflow_id: int
    entries: tuple[tuple[int, float], ...]
    created_at: float

    def __post_init__(self) -> None:
        ids = [nid for nid, _ in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("candidate node ids must be unique")
        key = [(-p, nid) for nid, p in self.entries]
        if key != sorted(key):
            raise ValueError("entries must be ordered by descending availability, then node id")


def rank_candidates(
    workflow_id: int, scores: Iterable[tuple[int, float]], created_at: float
) -> OrderedCandidates:
    ordered = tuple(sorted(scores, key=lambda e: (-e[1], e[0])))
    return OrderedCandidates(workflow_id=workflow_id, entries=ordered, created_at=created_at)


@dataclass(frozen=True)
class CacheEntry:
    workflow: Workflow
    candidates: OrderedCandidates


class ClusterCache:
    """Per-cluster store of (workflow, ranked candidates).

    Unbounded by default; an optional max_entries enables LRU eviction
    (lookup refreshes recency).
    """

    def __init__(self, max_entries: int | None = None):
        if max_entries is not None and max_entries < 1:
            raise ValueError("max_entries must be positive when set")
        self._max = max_entries
        self._entries: OrderedDict[int, CacheEntry] = OrderedDict()

    def store(self, entry: CacheEntry) -> None:
        wid = entry.workflow.workflow_id
        if wid in self._entries:
            del self._entries[wid]
        self._entries[wid] = entry
        if self._max is not None:
            while len(self._entries) > self._max:
                self._entries.popitem(last=False)

    def lookup(self, workflow_id: int) -> CacheEntry | None:
        entry = self._entries.get(workflow_id)
        if entry is not None:
            self._entries.move_to_end(workflow_id)
        return entry

    def remove(self, workflow_id: int) -> None:
        self._entries.pop(workflow_id, None)

    def __contains__(self, workflow_id: int) -> bool:
        return workflow_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)


@dataclass(frozen=True)
class LatencyCostModel:
    """Accounted node-search costs (seconds). Defaults: 5 ms to pick a
    cluster, 1 ms per node examined, 2 clusters probed by vela."""

    cluster_select_cost_s: float = 0.005
    per_node_sample_cost_s: float = 0.001
    vela_clusters_sampled: int = 2

    def __post_init__(self) -> None:
        if self.cluster_select_cost_s < 0 or self.per_node_sample_cost_s <= 0:
            raise ValueError("costs must be nonnegative (per-node strictly positive)")
        if self.vela_clusters_sampled < 1:
            raise ValueError("vela_clusters_sampled must be positive")


@dataclass(frozen=True)
class ScheduleDecision:
    workflow_id: int
    scheduler: str
    cluster_index: int
    attempt_number: int
    node_id: int
    nodes_sampled: int
    search_latency_s: float
    sampled_clusters: tuple[int, ...] | None = None


@dataclass
class HubState:
    """Everything the hub and cluster agents share during a run."""

    nodes: dict[int, VecNode]
    cluster_model: ClusterModel
    standardizer: Standardizer
    rnn: RnnModel
    encoder: FeatureEncoder
    cost_model: LatencyCostModel = field(default_factory=LatencyCostModel)
    availability_threshold: float = DEFAULT_AVAILABILITY_THRESHOLD
    sequence_length: int = 24
    start_epoch: int = DEFAULT_START_EPOCH
    duration_weighted_prediction: bool = False
    is_online: Callable[[int, float], bool] = lambda node_id, t: True
    is_busy: Callable[[int], bool] = lambda node_id: False
    caches: dict[int, ClusterCache] = field(default_factory=dict)
    # forecast invocations per workflow: incremented once per node scored
    prediction_counts: dict[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for c in range(self.cluster_model.k):
            self.caches.setdefault(c, ClusterCache())
        self._members: dict[int, list[int]] = {c: [] for c in range(self.cluster_model.k)}
        for nid, c in sorted(self.cluster_model.assignments.items()):
            self._members[c].append(nid)

    def cluster_members(self, cluster: int) -> list[int]:
        return self._members[cluster]

    def cluster_of(self, node_id: int) -> int:
        return self.cluster_model.assignments[node_id]

    def score_nodes(self, w: Workflow, node_ids: Sequence[int], now: float) -> list[tuple[int, float]]:
        """Forecast availability for each node; counts one invocation per node."""
        if self.duration_weighted_prediction:
            preds = [
                predict_window_min(
                    self.rnn, self.encoder, nid, now, w.duration_s,
                    self.sequence_length, self.start_epoch,
                )
                for nid in node_ids
            ]
        else:
            preds = predict_batch(
                self.rnn, self.encoder, node_ids, now, self.sequence_length, self.start_epoch
            )
        self.prediction_counts[w.workflow_id] = self.prediction_counts.get(w.workflow_id, 0) + len(node_ids)
        return [(int(nid), float(p)) for nid, p in zip(node_ids, preds)]

    def eligible(
        self,
        node_ids: Iterable[int],
        w: Workflow,
        now: float,
        excluded: frozenset[int] = frozenset(),
    ) -> list[int]:
        out = []
        for nid in node_ids:
            if nid in excluded:
                continue
            if not self.is_online(nid, now) or self.is_busy(nid):
                continue
            if w.cc_required and not self.nodes[nid].cc_capable:
                continue
            out.append(nid)
        return out


def select_cluster(model: ClusterModel, standardizer: Standardizer, w: Workflow) -> int:
    """Phase 1: cluster whose centroid is nearest the workflow requirement."""
    return assign_cluster(model, standardizer, w.required)


def predict_node_availability(
    hub: HubState,
    cluster: int,
    w: Workflow,
    now: float,
    excluded: frozenset[int] = frozenset(),
) -> OrderedCandidates:
    """Phase 2 scoring: rank the cluster's eligible nodes and cache the result.

    Raises NoEligibleNodeError when the candidate set is empty (no scoring
    happens in that case). `excluded` holds nodes that already failed this
    workflow and must not be re-picked.
    """
    eligible = hub.eligible(hub.cluster_members(cluster), w, now, excluded)
    if not eligible:
        raise NoEligibleNodeError(
            f"cluster {cluster} has no eligible node for workflow {w.workflow_id}"
        )
    candidates = rank_candidates(w.workflow_id, hub.score_nodes(w, eligible, now), created_at=now)
    hub.caches[cluster].store(CacheEntry(workflow=w, candidates=candidates))
    return candidates


def select_nearest_node(
    entries: OrderedCandidates | Sequence[tuple[int, float]],
    user_location: GeoPoint,
    nodes: Mapping[int, VecNode],
    threshold: float = DEFAULT_AVAILABILITY_THRESHOLD,
) -> int:
    """Nearest node (haversine) among candidates at or above the threshold.

    If nothing clears the threshold, fall back to the head of the ordered
    list (the highest predicted availability). Distance ties break toward
    the lower node id.
    """
    if isinstance(entries, OrderedCandidates):
        entries = entries.entries
    if not entries:
        raise NoEligibleNodeError("empty candidate list")
    strong = [(nid, p) for nid, p in entries if p >= threshold]
    if not strong:
        return entries[0][0]
    return min(strong, key=lambda e: (haversine_km(nodes[e[0]].location, user_location), e[0]))[0]


def schedule_veca(
    hub: HubState,
    w: Workflow,
    now: float,
    attempt_number: int = 1,
    excluded: frozenset[int] = frozenset(),
) -> tuple[ScheduleDecision, OrderedCandidates]:
    """Two-phase scheduling: cluster routing, then in-cluster prediction.

    Accounted latency covers one cluster selection plus sampling of the
    scored candidate set only.
    """
    cluster = select_cluster(hub.cluster_model, hub.standardizer, w)
    candidates = predict_node_availability(hub, cluster, w, now, excluded)
    node_id = select_nearest_node(candidates, w.user_location, hub.nodes, hub.availability_threshold)
    cost = hub.cost_model
    latency = cost.cluster_select_cost_s + cost.per_node_sample_cost_s * len(candidates.entries)
    decision = ScheduleDecision(
        workflow_id=w.workflow_id,
        scheduler="veca",
        cluster_index=cluster,
        attempt_number=attempt_number,
        node_id=node_id,
        nodes_sampled=len(candidates.entries),
        search_latency_s=latency,
    )
    return decision, candidates


def schedule_vecflex(
    hub: HubState,
    w: Workflow,
    now: float,
    attempt_number: int = 1,
    excluded: frozenset[int] = frozenset(),
) -> tuple[ScheduleDecision, OrderedCandidates]:
    """Flat baseline: examine every online node in the fleet.

    Latency charges one sample per online node (the whole pool is probed,
    busy or not); the CC and busy restrictions apply during selection.
    """
    online = [nid for nid in sorted(hub.nodes) if hub.is_online(nid, now)]
    if not online:
        raise NoEligibleNodeError(f"no online node for workflow {w.workflow_id}")
    eligible = hub.eligible(online, w, now, excluded)
    if not eligible:
        raise NoEligibleNodeError(f"no eligible node for workflow {w.workflow_id}")
    candidates = rank_candidates(w.workflow_id, hub.score_nodes(w, eligible, now), created_at=now)
    node_id = select_nearest_node(candidates, w.user_location, hub.nodes, hub.availability_threshold)
    latency = hub.cost_model.per_node_sample_cost_s * len(online)
    decision = ScheduleDecision(
        workflow_id=w.workflow_id,
        scheduler="vecflex",
        cluster_index=hub.cluster_of(node_id),
        attempt_number=attempt_number,
        node_id=node_id,
        nodes_sampled=len(online),
        search_latency_s=latency,
    )
    return decision, candidates


def schedule_vela(
    hub: HubState,
    w: Workflow,
    now: float,
    rng: np.random.Generator,
    attempt_number: int = 1,
    excluded: frozenset[int] = frozenset(),
) -> tuple[ScheduleDecision, OrderedCandidates]:
    """Random-cluster baseline: probe every node in c uniformly drawn clusters.

    Latency charges a cluster selection plus one sample per member of the
    drawn clusters regardless of status, since the scheduler must probe each
    to learn it. The drawn clusters are recorded on the decision.
    """
    k = hub.cluster_model.k
    c = min(hub.cost_model.vela_clusters_sampled, k)
    drawn = tuple(sorted(int(x) for x in rng.choice(k, size=c, replace=False)))
    members: list[int] = []
    for cluster in drawn:
        members.extend(hub.cluster_members(cluster))
    eligible = hub.eligible(members, w, now, excluded)
    if not eligible:
        raise NoEligibleNodeError(
            f"clusters {drawn} have no eligible node for workflow {w.workflow_id}"
        )
    candidates = rank_candidates(w.workflow_id, hub.score_nodes(w, eligible, now), created_at=now)
    node_id = select_nearest_node(candidates, w.user_location, hub.nodes, hub.availability_threshold)
    cost = hub.cost_model
    latency = cost.cluster_select_cost_s + cost.per_node_sample_cost_s * len(members)
    decision = ScheduleDecision(
        workflow_id=w.workflow_id,
        scheduler="vela",
        cluster_index=hub.cluster_of(node_id),
        attempt_number=attempt_number,
        node_id=node_id,
        nodes_sampled=len(members),
        search_latency_s=latency,
        sampled_clusters=drawn,
    )
    return decision, candidates


# ---------------------------------------------------------------------------
# Fail-over execution.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttemptResult:
    completed: bool
    start_time: float
    end_time: float  # completion or failure instant


class ExecutionHandle(Protocol):
    """Minimal surface the fail-over loop needs from the simulator."""

    def run_attempt(self, w: Workflow, node_id: int, start_time: float) -> AttemptResult: ...

    def is_online(self, node_id: int, t: float) -> bool: ...

    def is_busy(self, node_id: int) -> bool: ...


@dataclass
class ExecutionOutcome:
    completed: bool
    attempts: list[tuple[int, AttemptResult]]  # (node_id, result)
    recovery_time_s: float

    @property
    def final_node(self) -> int | None:
        return self.attempts[-1][0] if self.completed else None


def narrow_candidates(
    entries: Sequence[tuple[int, float]],
    excluded: set[int],
    t: float,
    is_online: Callable[[int, float], bool],
    is_busy: Callable[[int], bool],
) -> list[tuple[int, float]]:
    """Drop failed/offline/busy nodes from a cached ranking without re-scoring.

    The liveness check is the agent's live status view, not a forecast, so
    it does not count as a prediction.
    """
    return [
        (nid, p)
        for nid, p in entries
        if nid not in excluded and is_online(nid, t) and not is_busy(nid)
    ]


def execute_with_failover(
    w: Workflow,
    first_node: int,
    candidates: OrderedCandidates,
    cache: ClusterCache,
    handle: ExecutionHandle,
    nodes: Mapping[int, VecNode],
    start_time: float,
    threshold: float = DEFAULT_AVAILABILITY_THRESHOLD,
    failover_delay_s: float = 2.0,
) -> ExecutionOutcome:
    """Run the workflow, failing over through the cached ranking.

    Each failed node is removed from the cached candidate list and the
    selection rule re-runs on the remainder; execution restarts from zero.
    No new forecasts are requested at any point. The cache entry is removed
    after the final attempt, successful or not.
    """
    attempts: list[tuple[int, AttemptResult]] = []
    excluded: set[int] = set()
    recovery = 0.0
    node_id = first_node
    start = start_time
    while True:
        result = handle.run_attempt(w, node_id, start)
        attempts.append((node_id, result))
        if result.completed:
            cache.remove(w.workflow_id)
            return ExecutionOutcome(completed=True, attempts=attempts, recovery_time_s=recovery)
        excluded.add(node_id)
        entry = cache.lookup(w.workflow_id)
        if entry is None:  # defensive: cache evicted mid-run
            cache.remove(w.workflow_id)
            return ExecutionOutcome(completed=False, attempts=attempts, recovery_time_s=recovery)
        restart = result.end_time + failover_delay_s
        remaining = narrow_candidates(
            entry.candidates.entries, excluded, restart, handle.is_online, handle.is_busy
        )
        if not remaining:
            cache.remove(w.workflow_id)
            return ExecutionOutcome(completed=False, attempts=attempts, recovery_time_s=recovery)
        node_id = select_nearest_node(remaining, w.user_location, nodes, threshold)
        recovery += restart - result.end_time
        start = restart
