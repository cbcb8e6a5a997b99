"""Discrete-event simulation of the volunteer edge-cloud hub.

The kernel processes four event kinds in timestamp order (ties break by kind
priority NodeDown < NodeUp < WorkflowArrival < ExecutionComplete, then id):
node churn events derived exactly from the availability traces, workflow
arrivals (including requeues and hub resubmissions), and execution
completions, which may carry a failure.

Failure handling differs by scheduler and is the point of the comparison:

* veca: the cluster agent observes the failure immediately, narrows the
  cached candidate ranking (no re-forecasting), and restarts after a small
  cache-failover delay.
* vela / vecflex: there is no cluster cache and no cluster-local agent, so
  the hub only learns of the loss when its watchdog fires at
  attempt start + attempt_budget_s (the hub tracks submissions, not
  execution progress); the workflow data is then re-fetched from its origin
  and rescheduled from scratch after the resubmit delay.

Each workflow terminates in exactly one of completed / failed /
rejected(no eligible node). Recovery time sums the gaps between a failure
and the next attempt's start; the productivity rate is
(1 - recovery / total span) * 100 for completed workflows.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Sequence

import numpy as np

from .clustering import (
    ClusterModel,
    ElbowResult,
    Standardizer,
    elbow_select_k,
    fit_standardizer,
    kmeans_fit,
)
from .enclave import (
    AttestationError,
    Certifier,
    Enclave,
    EnclaveError,
    EnclaveImage,
    build_enclave,
    launch_and_attest,
    terminate_enclave,
)
from .fleet import (
    HOUR_S,
    AvailabilityTrace,
    ConfigurationError,
    VecNode,
    Workflow,
)
from .forecast import FeatureEncoder, RnnModel
from .scheduler import (
    HubState,
    LatencyCostModel,
    NoEligibleNodeError,
    OrderedCandidates,
    ScheduleDecision,
    narrow_candidates,
    schedule_vecflex,
    schedule_vela,
    schedule_veca,
    select_nearest_node,
)

SCHEDULERS = ("veca", "vela", "vecflex")

_FAILURE_STREAM = 6
_VELA_STREAM = 7


class EventKind(IntEnum):
    """Heap priority for same-timestamp events is the enum value."""

    NODE_DOWN = 0
    NODE_UP = 1
    WORKFLOW_ARRIVAL = 2
    EXECUTION_COMPLETE = 3


@dataclass(frozen=True)
class SimConfig:
    availability_threshold: float = 0.8
    failure_injection: bool = False
    forced_failure_prob: float = 0.3
    cache_failover_delay_s: float = 2.0
    hub_resubmit_delay_s: float = 60.0
    attempt_budget_s: float = 3600.0
    requeue_backoff_s: float = 60.0
    enclave_build_delay_s: float = 2.0
    enclave_attest_delay_s: float = 0.5
    max_attempts: int = 8
    sequence_length: int = 24
    duration_weighted_prediction: bool = False

    def __post_init__(self) -> None:
        if not (0.0 <= self.availability_threshold <= 1.0):
            raise ConfigurationError("availability_threshold must be in [0, 1]")
        if not (0.0 <= self.forced_failure_prob <= 1.0):
            raise ConfigurationError("forced_failure_prob must be in [0, 1]")
        if self.attempt_budget_s <= 0:
            raise ConfigurationError("attempt_budget_s must be positive")
        if self.max_attempts < 1:
            raise ConfigurationError("max_attempts must be positive")


@dataclass(frozen=True)
class Attempt:
    node_id: int
    start: float
    exec_start: float
    end: float
    completed: bool
    failure_kind: str | None = None  # "forced" | "churn" | None


@dataclass
class WorkflowRecord:
    workflow_id: int
    scheduler: str
    outcome: str  # completed | failed | rejected
    cluster_index: int | None
    attempts: list[Attempt]
    nodes_sampled: int | None
    search_latency_s: float  # first scheduling pass; nan if never scheduled
    total_search_latency_s: float
    recovery_time_s: float
    total_execution_time_s: float
    productivity_rate: float  # nan unless completed
    predictions_used: int
    pass_candidate_sizes: list[int]
    attested_nodes: list[int]


def recovery_accounting(attempts: Sequence[Attempt]) -> tuple[float, float]:
    """(recovery seconds, total span seconds) from an attempt history.

    Recovery sums (next attempt start - failure instant) over failed
    attempts that were retried; the span runs from first start to final end.
    """
    if not attempts:
        return 0.0, 0.0
    recovery = 0.0
    for prev, nxt in zip(attempts, attempts[1:]):
        recovery += nxt.start - prev.end
    return recovery, attempts[-1].end - attempts[0].start


def productivity_rate(recovery_s: float, total_s: float) -> float:
    """Percentage of the workflow's span not spent recovering from failures."""
    if total_s <= 0:
        raise ValueError("total execution time must be positive")
    if recovery_s < 0 or recovery_s > total_s:
        raise ValueError("recovery time must lie within [0, total]")
    return (1.0 - recovery_s / total_s) * 100.0


@dataclass
class ResultStore:
    """Append-only delivery log (the hub-facing results endpoint)."""

    rows: list[dict] = field(default_factory=list)

    def append(self, workflow_id: int, node_id: int, completed_at: float) -> None:
        self.rows.append(
            {"workflow_id": workflow_id, "node_id": node_id, "completed_at": completed_at}
        )


@dataclass
class SimReport:
    scheduler: str
    seed: int
    records: list[WorkflowRecord]
    decision_log: list[dict]
    result_store: ResultStore
    counters: dict


@dataclass(frozen=True)
class Artifacts:
    """Fitted models shared by every scheduler in a comparison."""

    cluster_model: ClusterModel
    standardizer: Standardizer
    rnn: RnnModel
    encoder: FeatureEncoder
    elbow: ElbowResult | None = None


def cluster_fleet(
    fleet: Sequence[VecNode],
    seed: int,
    k: int | None = None,
    k_range: Sequence[int] = tuple(range(1, 9)),
) -> tuple[ClusterModel, Standardizer, ElbowResult | None]:
    """Standardize fleet capacities and fit k-means, choosing k by the elbow
    rule unless given explicitly."""
    points = np.array([n.capacity.as_array() for n in fleet])
    standardizer = fit_standardizer(points)
    z = standardizer.transform(points)
    elbow = None
    if k is None:
        elbow = elbow_select_k(z, k_range=k_range, seed=seed)
        k = elbow.k_optimal
    ids = [n.node_id for n in fleet]
    model = kmeans_fit(z, k, seed=seed, ids=ids)
    return model, standardizer, elbow


@dataclass
class _WorkflowState:
    workflow: Workflow
    outcome: str | None = None
    attempts: list[Attempt] = field(default_factory=list)
    excluded: set[int] = field(default_factory=set)
    decisions: list[ScheduleDecision] = field(default_factory=list)
    pass_candidate_sizes: list[int] = field(default_factory=list)
    used_requeue: bool = False
    vela_pass: int = 0
    forced_armed: bool = False
    forced_fraction: float = 0.0
    current_node: int | None = None
    current_start: float = 0.0
    current_exec_start: float = 0.0
    current_attempt: int = 0
    enclave_image: EnclaveImage | None = None
    enclave: Enclave | None = None
    attested_nodes: list[int] = field(default_factory=list)
    pending_failure_time: float | None = None

    @property
    def cluster_index(self) -> int | None:
        return self.decisions[0].cluster_index if self.decisions else None


class _Kernel:
    """One simulation run for one scheduler."""

    def __init__(
        self,
        fleet: Sequence[VecNode],
        traces: Sequence[AvailabilityTrace],
        workloads: Sequence[Workflow],
        scheduler: str,
        artifacts: Artifacts,
        sim_config: SimConfig,
        cost_model: LatencyCostModel,
        seed: int,
    ):
        if scheduler not in SCHEDULERS:
            raise ConfigurationError(f"unknown scheduler {scheduler!r}; expected one of {SCHEDULERS}")
        self.scheduler = scheduler
        self.cfg = sim_config
        self.seed = seed
        self.nodes = {n.node_id: n for n in fleet}
        self.traces = {t.node_id: t for t in traces}
        missing = set(self.nodes) - set(self.traces)
        if missing:
            raise ConfigurationError(f"nodes without traces: {sorted(missing)}")
        any_trace = next(iter(self.traces.values()))
        self.start_epoch = any_trace.start_epoch
        self.horizon_end = self.start_epoch + any_trace.horizon_hours * HOUR_S
        for w in workloads:
            if not (self.start_epoch <= w.submit_time < self.horizon_end):
                raise ConfigurationError(
                    f"workflow {w.workflow_id} submit time {w.submit_time} outside trace horizon"
                )
        self.workloads = list(workloads)

        self.busy: set[int] = set()
        self.online: dict[int, bool] = {}
        self.hub = HubState(
            nodes=self.nodes,
            cluster_model=artifacts.cluster_model,
            standardizer=artifacts.standardizer,
            rnn=artifacts.rnn,
            encoder=artifacts.encoder,
            cost_model=cost_model,
            availability_threshold=sim_config.availability_threshold,
            sequence_length=sim_config.sequence_length,
            start_epoch=self.start_epoch,
            duration_weighted_prediction=sim_config.duration_weighted_prediction,
            is_online=self.trace_online,
            is_busy=lambda nid: nid in self.busy,
        )
        self.certifier = Certifier(seed=seed)
        for n in fleet:
            if n.cc_capable:
                self.certifier.register_node(n.node_id)

        # Forced failures hit an exact round(p * n) of the workflows (seeded
        # choice), not an independent Bernoulli per workflow: at desk scale
        # the binomial spread would dominate the productivity comparison.
        # The draws depend only on (seed, workflow ids), so every scheduler
        # sees the same failures at the same points.
        armed: set[int] = set()
        if sim_config.failure_injection:
            wids = sorted(w.workflow_id for w in self.workloads)
            n_armed = round(sim_config.forced_failure_prob * len(wids))
            pick = np.random.default_rng([seed, _FAILURE_STREAM])
            armed = {int(x) for x in pick.choice(wids, size=n_armed, replace=False)}
        self.states: dict[int, _WorkflowState] = {}
        for w in self.workloads:
            st = _WorkflowState(workflow=w)
            if w.workflow_id in armed:
                st.forced_armed = True
                st.forced_fraction = float(
                    np.random.default_rng([seed, _FAILURE_STREAM, w.workflow_id]).random()
                )
            self.states[w.workflow_id] = st

        self.decision_log: list[dict] = []
        self.result_store = ResultStore()
        self.heap: list = []
        self._seq = 0
        self.done = 0
        self.events_processed = 0
        self.cc_execution_checks: list[tuple[int, int, bool, bool]] = []

    # -- event plumbing ----------------------------------------------------

    def push(self, t: float, kind: EventKind, key: int, payload: tuple = ()) -> None:
        self._seq += 1
        heapq.heappush(self.heap, (t, int(kind), key, self._seq, payload))

    def trace_online(self, node_id: int, t: float) -> bool:
        tr = self.traces.get(node_id)
        if tr is None:
            return False
        idx = int((t - tr.start_epoch) // HOUR_S)
        if idx < 0 or idx >= tr.horizon_hours:
            return False  # outside the trace horizon a node is unknown, treat as offline
        return bool(tr.hours[idx])

    def _seed_events(self) -> None:
        sim_start = min(w.submit_time for w in self.workloads)
        for nid, tr in sorted(self.traces.items()):
            self.online[nid] = self.trace_online(nid, sim_start)
            changes = np.flatnonzero(np.diff(tr.hours.astype(np.int8))) + 1
            for idx in changes:
                t = tr.start_epoch + int(idx) * HOUR_S
                if t <= sim_start:
                    self.online[nid] = bool(tr.hours[idx])
                    continue
                kind = EventKind.NODE_UP if tr.hours[idx] else EventKind.NODE_DOWN
                self.push(float(t), kind, nid)
        for w in self.workloads:
            self.push(float(w.submit_time), EventKind.WORKFLOW_ARRIVAL, w.workflow_id, ("arrival",))

    # -- scheduling --------------------------------------------------------

    def _schedule(self, st: _WorkflowState, now: float) -> tuple[ScheduleDecision, OrderedCandidates]:
        w = st.workflow
        attempt_no = len(st.attempts) + 1
        excluded = frozenset(st.excluded)
        if self.scheduler == "veca":
            return schedule_veca(self.hub, w, now, attempt_number=attempt_no, excluded=excluded)
        if self.scheduler == "vecflex":
            return schedule_vecflex(self.hub, w, now, attempt_number=attempt_no, excluded=excluded)
        st.vela_pass += 1
        rng = np.random.default_rng([self.seed, _VELA_STREAM, w.workflow_id, st.vela_pass])
        return schedule_vela(self.hub, w, now, rng, attempt_number=attempt_no, excluded=excluded)

    def _log_decision(self, d: ScheduleDecision, outcome: str) -> None:
        self.decision_log.append(
            {
                "workflow_id": d.workflow_id,
                "scheduler": d.scheduler,
                "cluster": d.cluster_index,
                "attempt": d.attempt_number,
                "node_id": d.node_id,
                "nodes_sampled": d.nodes_sampled,
                "search_latency_ms": d.search_latency_s * 1000.0,
                "outcome": outcome,
            }
        )

    def _log_attestation(self, st: _WorkflowState, node_id: int, ok: bool) -> None:
        self.decision_log.append(
            {
                "workflow_id": st.workflow.workflow_id,
                "scheduler": self.scheduler,
                "cluster": st.cluster_index if st.cluster_index is not None else "",
                "attempt": len(st.attempts) + 1,
                "node_id": node_id,
                "nodes_sampled": 0,
                "search_latency_ms": 0.0,
                "outcome": "attested" if ok else "attestation_failed",
            }
        )

    # -- event handlers ----------------------------------------------------

    def _handle_arrival(self, t: float, wid: int) -> None:
        st = self.states[wid]
        if st.outcome is not None:
            return
        try:
            decision, candidates = self._schedule(st, t)
        except NoEligibleNodeError:
            if not st.used_requeue:
                st.used_requeue = True
                self.push(t + self.cfg.requeue_backoff_s, EventKind.WORKFLOW_ARRIVAL, wid, ("arrival",))
            elif st.attempts:
                self._finalize(st, "failed")
            else:
                self._finalize(st, "rejected")
            return
        st.decisions.append(decision)
        st.pass_candidate_sizes.append(len(candidates.entries))
        self._log_decision(decision, "scheduled")

        start = t + decision.search_latency_s
        startable = narrow_candidates(
            candidates.entries, st.excluded, start, self.trace_online, lambda n: n in self.busy
        )
        if not startable:
            # The candidate set evaporated within the search window (an hour
            # boundary fell inside it); treat like an empty candidate set.
            if self.scheduler == "veca":
                self.hub.caches[decision.cluster_index].remove(wid)
            if not st.used_requeue:
                st.used_requeue = True
                self.push(t + self.cfg.requeue_backoff_s, EventKind.WORKFLOW_ARRIVAL, wid, ("arrival",))
            elif st.attempts:
                self._finalize(st, "failed")
            else:
                self._finalize(st, "rejected")
            return
        node_id = decision.node_id
        if all(nid != node_id for nid, _ in startable):
            node_id = select_nearest_node(
                startable, st.workflow.user_location, self.nodes, self.cfg.availability_threshold
            )
        self._start_attempt(st, node_id, start)

    def _start_attempt(self, st: _WorkflowState, node_id: int, start: float) -> None:
        w = st.workflow
        if st.pending_failure_time is not None:
            # recovery gap closes when the next attempt actually starts
            st.pending_failure_time = None
        self.busy.add(node_id)
        exec_start = start
        attempt_no = len(st.attempts) + 1
        if w.cc_required:
            node = self.nodes[node_id]
            if st.enclave_image is None:
                st.enclave_image = build_enclave(w)
                exec_start += self.cfg.enclave_build_delay_s
            try:
                enclave, _doc = launch_and_attest(st.enclave_image, node, self.certifier)
            except (AttestationError, EnclaveError):
                # Should be unreachable for scheduled nodes (the CC filter ran),
                # but never execute unattested: treat as an immediate failure.
                self._log_attestation(st, node_id, ok=False)
                self.busy.discard(node_id)
                st.excluded.add(node_id)
                self._finalize(st, "failed")
                return
            st.enclave = enclave
            st.attested_nodes.append(node_id)
            self._log_attestation(st, node_id, ok=True)
            exec_start += self.cfg.enclave_attest_delay_s
            self.cc_execution_checks.append((w.workflow_id, node_id, node.cc_capable, True))
        end = exec_start + w.duration_s

        fail_time: float | None = None
        fail_kind: str | None = None
        churn = self._first_down_crossing(node_id, start, end)
        if churn is not None:
            fail_time, fail_kind = churn, "churn"
        if st.forced_armed and attempt_no == 1:
            forced_t = exec_start + st.forced_fraction * w.duration_s
            if fail_time is None or forced_t < fail_time:
                fail_time, fail_kind = forced_t, "forced"

        st.current_node = node_id
        st.current_start = start
        st.current_exec_start = exec_start
        st.current_attempt = attempt_no
        if fail_time is not None:
            self.push(fail_time, EventKind.EXECUTION_COMPLETE, w.workflow_id, ("failed", attempt_no, fail_kind))
        else:
            self.push(end, EventKind.EXECUTION_COMPLETE, w.workflow_id, ("completed", attempt_no, None))

    def _first_down_crossing(self, node_id: int, start: float, end: float) -> float | None:
        """Earliest instant in (start, end] where the node's trace goes offline."""
        tr = self.traces[node_id]
        if end > self.horizon_end:
            return float(self.horizon_end)  # the trace ends; the node's fate is unknown
        first_idx = int((start - tr.start_epoch) // HOUR_S) + 1
        last_idx = int((end - tr.start_epoch) // HOUR_S)
        if math.floor((end - tr.start_epoch) / HOUR_S) == (end - tr.start_epoch) / HOUR_S:
            # end exactly on a boundary: the run is over before that hour starts
            last_idx -= 1
        if first_idx > last_idx:
            return None
        window = tr.hours[first_idx : last_idx + 1]
        down = np.flatnonzero(window == 0)
        if down.size == 0:
            return None
        return float(tr.start_epoch + (first_idx + int(down[0])) * HOUR_S)

    def _handle_completion(self, t: float, wid: int, payload: tuple) -> None:
        status, attempt_no, fail_kind = payload
        st = self.states[wid]
        if st.outcome is not None or st.current_attempt != attempt_no:
            return  # stale event
        node_id = st.current_node
        assert node_id is not None
        self.busy.discard(node_id)
        if st.enclave is not None:
            terminate_enclave(st.enclave)  # erase state before any fail-over
            st.enclave = None
        completed = status == "completed"
        st.attempts.append(
            Attempt(
                node_id=node_id,
                start=st.current_start,
                exec_start=st.current_exec_start,
                end=t,
                completed=completed,
                failure_kind=fail_kind,
            )
        )
        st.current_node = None
        if completed:
            self.result_store.append(wid, node_id, t)
            if self.scheduler == "veca" and st.cluster_index is not None:
                self.hub.caches[st.cluster_index].remove(wid)
            self._finalize(st, "completed")
            return

        st.excluded.add(node_id)
        if len(st.attempts) >= self.cfg.max_attempts:
            if self.scheduler == "veca" and st.cluster_index is not None:
                self.hub.caches[st.cluster_index].remove(wid)
            self._finalize(st, "failed")
            return

        if self.scheduler == "veca":
            self._veca_failover(st, t)
        else:
            # Hub-side detection: the watchdog fires when the attempt blows
            # its execution budget; the hub then re-fetches the workflow from
            # its origin and resubmits it.
            detect = max(st.current_start + self.cfg.attempt_budget_s, t)
            resubmit = detect + self.cfg.hub_resubmit_delay_s
            st.pending_failure_time = t
            self.push(resubmit, EventKind.WORKFLOW_ARRIVAL, wid, ("arrival",))

    def _veca_failover(self, st: _WorkflowState, fail_time: float) -> None:
        wid = st.workflow.workflow_id
        cluster = st.cluster_index
        assert cluster is not None
        entry = self.hub.caches[cluster].lookup(wid)
        if entry is None:
            self._finalize(st, "failed")
            return
        restart = fail_time + self.cfg.cache_failover_delay_s
        remaining = narrow_candidates(
            entry.candidates.entries, st.excluded, restart, self.trace_online, lambda n: n in self.busy
        )
        if not remaining:
            self.hub.caches[cluster].remove(wid)
            self._finalize(st, "failed")
            return
        node_id = select_nearest_node(
            remaining, st.workflow.user_location, self.nodes, self.cfg.availability_threshold
        )
        self._start_attempt(st, node_id, restart)

    def _finalize(self, st: _WorkflowState, outcome: str) -> None:
        st.outcome = outcome
        self.done += 1

    # -- run ---------------------------------------------------------------

    def run(self) -> SimReport:
        if not self.workloads:
            return self._report()
        self._seed_events()
        total = len(self.workloads)
        while self.heap and self.done < total:
            t, kind, key, _seq, payload = heapq.heappop(self.heap)
            self.events_processed += 1
            if kind == EventKind.NODE_DOWN:
                self.online[key] = False
            elif kind == EventKind.NODE_UP:
                self.online[key] = True
            elif kind == EventKind.WORKFLOW_ARRIVAL:
                self._handle_arrival(t, key)
            else:
                self._handle_completion(t, key, payload)
        # Anything still pending when events run dry could not finish inside
        # the horizon.
        for st in self.states.values():
            if st.outcome is None:
                self._finalize(st, "failed")
        return self._report()

    def _report(self) -> SimReport:
        records = []
        for w in self.workloads:
            st = self.states[w.workflow_id]
            recovery, span = recovery_accounting(st.attempts)
            prod = float("nan")
            if st.outcome == "completed":
                prod = productivity_rate(recovery, span)
            first = st.decisions[0] if st.decisions else None
            records.append(
                WorkflowRecord(
                    workflow_id=w.workflow_id,
                    scheduler=self.scheduler,
                    outcome=st.outcome or "failed",
                    cluster_index=first.cluster_index if first else None,
                    attempts=list(st.attempts),
                    nodes_sampled=first.nodes_sampled if first else None,
                    search_latency_s=first.search_latency_s if first else float("nan"),
                    total_search_latency_s=sum(d.search_latency_s for d in st.decisions),
                    recovery_time_s=recovery,
                    total_execution_time_s=span,
                    productivity_rate=prod,
                    predictions_used=self.hub.prediction_counts.get(w.workflow_id, 0),
                    pass_candidate_sizes=list(st.pass_candidate_sizes),
                    attested_nodes=list(st.attested_nodes),
                )
            )
        outcomes = {"completed": 0, "failed": 0, "rejected": 0}
        for r in records:
            outcomes[r.outcome] += 1
        counters = {
            "events_processed": self.events_processed,
            "outcomes": outcomes,
            "prediction_counts": dict(self.hub.prediction_counts),
            "cc_execution_checks": list(self.cc_execution_checks),
        }
        return SimReport(
            scheduler=self.scheduler,
            seed=self.seed,
            records=records,
            decision_log=self.decision_log,
            result_store=self.result_store,
            counters=counters,
        )


def run_simulation(
    fleet: Sequence[VecNode],
    traces: Sequence[AvailabilityTrace],
    workloads: Sequence[Workflow],
    scheduler: str,
    artifacts: Artifacts,
    sim_config: SimConfig = SimConfig(),
    cost_model: LatencyCostModel = LatencyCostModel(),
    seed: int = 0,
) -> SimReport:
    """Simulate one scheduler over one workload; deterministic per seed."""
    kernel = _Kernel(fleet, traces, workloads, scheduler, artifacts, sim_config, cost_model, seed)
    return kernel.run()


@dataclass
class ComparisonResult:
    # rows: workflow_id -> {scheduler: latency_ms} at the instance scale
    latency_by_instance: list[dict]
    # rows: (scale, scheduler, mean_latency_ms)
    latency_by_scale: list[tuple[int, str, float]]
    # rows: (scheduler, workflow_id, productivity_rate); completed only
    productivity: list[tuple[str, int, float]]
    latency_reports: dict[tuple[int, str], SimReport]
    productivity_reports: dict[str, SimReport]

    def mean_latency_ms(self, scale: int, scheduler: str) -> float:
        for s, name, v in self.latency_by_scale:
            if s == scale and name == scheduler:
                return v
        raise KeyError((scale, scheduler))

    def mean_productivity(self, scheduler: str) -> float:
        vals = [p for s, _, p in self.productivity if s == scheduler]
        if not vals:
            return float("nan")
        return float(np.mean(vals))


def _mean_first_latency_ms(report: SimReport) -> float:
    vals = [r.search_latency_s * 1000.0 for r in report.records if not math.isnan(r.search_latency_s)]
    return float(np.mean(vals)) if vals else float("nan")


def compare_schedulers(
    fleet: Sequence[VecNode],
    traces: Sequence[AvailabilityTrace],
    workloads_by_scale: dict[int, Sequence[Workflow]],
    artifacts: Artifacts,
    sim_config: SimConfig = SimConfig(),
    cost_model: LatencyCostModel = LatencyCostModel(),
    seed: int = 0,
    instance_scale: int = 50,
) -> ComparisonResult:
    """Run all three schedulers on identical inputs.

    Latency runs use the given workloads per scale with failure injection
    off; the productivity run re-uses the instance-scale workload with
    failure injection on. Identical seeds mean identical arrival sequences
    and forced-failure draws across schedulers.
    """
    if instance_scale not in workloads_by_scale:
        raise ConfigurationError(f"instance scale {instance_scale} missing from workloads_by_scale")
    latency_cfg = replace(sim_config, failure_injection=False)
    failure_cfg = replace(sim_config, failure_injection=True)

    latency_reports: dict[tuple[int, str], SimReport] = {}
    latency_by_scale = []
    for scale in sorted(workloads_by_scale):
        for scheduler in SCHEDULERS:
            rep = run_simulation(
                fleet, traces, workloads_by_scale[scale], scheduler, artifacts,
                latency_cfg, cost_model, seed,
            )
            latency_reports[(scale, scheduler)] = rep
            latency_by_scale.append((scale, scheduler, _mean_first_latency_ms(rep)))

    latency_by_instance = []
    for wid in sorted(w.workflow_id for w in workloads_by_scale[instance_scale]):
        row: dict = {"workflow_id": wid}
        for scheduler in SCHEDULERS:
            rec = next(
                r for r in latency_reports[(instance_scale, scheduler)].records if r.workflow_id == wid
            )
            row[scheduler] = rec.search_latency_s * 1000.0
        latency_by_instance.append(row)

    productivity_reports: dict[str, SimReport] = {}
    productivity = []
    for scheduler in SCHEDULERS:
        rep = run_simulation(
            fleet, traces, workloads_by_scale[instance_scale], scheduler, artifacts,
            failure_cfg, cost_model, seed,
        )
        productivity_reports[scheduler] = rep
        for r in rep.records:
            if r.outcome == "completed":
                productivity.append((scheduler, r.workflow_id, r.productivity_rate))

    return ComparisonResult(
        latency_by_instance=latency_by_instance,
        latency_by_scale=latency_by_scale,
        productivity=productivity,
        latency_reports=latency_reports,
        productivity_reports=productivity_reports,
    )
