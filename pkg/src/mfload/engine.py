"""
Discrete-time simulation
========================

Advances the cluster in fixed ticks: expire finished requests, dispatch
the tick's arrivals under the selected policy, sample utilizations, and
evaluate the imbalance pipeline at each monitoring event. The monitoring
schedule is per-request, fixed-interval, or adaptive (interval halves
under bursty arrivals, doubles under calm ones).

The sweep runs a grid of (H, delta_h) traffic targets with several seeds
per cell and aggregates equilibrium time and settled imbalance per cell.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .balancer import Balancer, Policy
from .cluster import ServerSpec, ServerState, default_cluster
from .errors import CalibrationError, ConfigurationError, ParameterError
from .metrics import (
    EQUILIBRIUM_EPSILON,
    EQUILIBRIUM_WINDOW,
    ImbalanceReport,
    RunSummary,
    Weights,
    make_report,
    run_summary,
)
from .traffic import (
    FlowClass,
    MultifractalSpec,
    Request,
    TrafficTrace,
    generate_traffic,
    materialize_requests,
    validate_classes,
)

MONITORING_KINDS = ("per_request", "fixed_interval", "adaptive")


@dataclass(frozen=True)
class CompletedRequest:
    """A finished request together with its realized completion time.

    Under overload the server drains slower, so the realized sojourn can
    exceed the drawn service duration.
    """

    request: Request
    completion_time: float

    @property
    def sojourn(self) -> float:
        return self.completion_time - self.request.arrival_time


def default_classes() -> list[FlowClass]:
    """Three classes of service with distinct demand profiles."""
    return [
        FlowClass("web", cpu_demand=40.0, ram_demand=40.0, net_demand=35.0,
                  mean_duration=6.0, weight=0.5),
        FlowClass("compute", cpu_demand=90.0, ram_demand=60.0, net_demand=25.0,
                  mean_duration=10.0, weight=0.3),
        FlowClass("stream", cpu_demand=35.0, ram_demand=80.0, net_demand=70.0,
                  mean_duration=14.0, weight=0.2),
    ]


@dataclass(frozen=True)
class MonitoringMode:
    kind: str = "fixed_interval"
    interval: float = 10.0
    min_interval: float = 1.0
    max_interval: float = 20.0
    cv_threshold: float = 1.0

    def __post_init__(self):
        if self.kind not in MONITORING_KINDS:
            raise ConfigurationError(
                f"unknown monitoring kind {self.kind!r}, expected one of {MONITORING_KINDS}"
            )
        if self.interval <= 0:
            raise ConfigurationError("monitoring interval must be positive")
        if self.kind == "adaptive" and not (
            0 < self.min_interval <= self.interval <= self.max_interval
        ):
            raise ConfigurationError("need 0 < min <= interval <= max for adaptive mode")


@dataclass(frozen=True)
class Scenario:
    servers: tuple[ServerSpec, ...] = field(default_factory=lambda: tuple(default_cluster()))
    classes: tuple[FlowClass, ...] = field(default_factory=lambda: tuple(default_classes()))
    # The default trace spans the whole run, so the simulation sees the
    # calibrated burst structure at every scale.
    traffic: MultifractalSpec = MultifractalSpec(length=4096, slot_duration=500.0 / 4096)
    policy: Policy = Policy()
    weights: Weights = Weights()
    monitoring: MonitoringMode = MonitoringMode()
    run_length: float = 500.0
    tick: float = 1.0
    sample_window: float = 10.0
    arrival_rate: float = 2.5  # requests per second, before burst modulation
    overhead: float = 1.05
    rejection: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.servers:
            raise ConfigurationError("scenario needs at least one server")
        validate_classes(self.classes)
        if self.tick <= 0:
            raise ConfigurationError("tick must be positive")
        if self.run_length < self.sample_window:
            raise ConfigurationError("run_length must be >= the monitoring window")
        if self.arrival_rate < 0:
            raise ConfigurationError("arrival_rate must be nonnegative")


def next_monitoring_time(
    mode: MonitoringMode,
    arrivals,
    now: float,
    current_interval: float | None = None,
) -> tuple[float, float]:
    """Next monitoring instant and the updated adaptive interval.

    ``arrivals`` is the sequence of arrival times seen so far (used by the
    per-request and adaptive modes).
    """
    if current_interval is None:
        current_interval = mode.interval
    if mode.kind == "per_request":
        upcoming = [a for a in arrivals if a > now]
        nxt = min(upcoming) if upcoming else math.inf
        return nxt, current_interval
    if mode.kind == "fixed_interval":
        return now + mode.interval, mode.interval

    cv = _arrival_cv(arrivals, now, window=60.0)
    if cv > mode.cv_threshold:
        interval = max(mode.min_interval, current_interval / 2.0)
    else:
        interval = min(mode.max_interval, current_interval * 2.0)
    return now + interval, interval


def _arrival_cv(arrivals, now: float, window: float) -> float:
    """Coefficient of variation of per-second arrival counts in the window."""
    lo = now - window
    recent = [a for a in arrivals if lo < a <= now]
    bins = max(1, int(round(window)))
    counts = np.zeros(bins)
    for a in recent:
        idx = min(bins - 1, int((a - lo) / window * bins))
        counts[idx] += 1
    mean = counts.mean()
    if mean == 0:
        return 0.0
    return float(counts.std() / mean)


def _min_imbalance_scores(
    utils: np.ndarray, caps: np.ndarray, demands: np.ndarray, w: Weights,
    clip: bool = True,
) -> np.ndarray:
    """Predicted IMB_tot for hypothetically admitting the request anywhere.

    Vectorized over targets: one row of hypothetical cluster utilization
    per candidate server. With clip=False the utilization estimates may
    exceed 1, which keeps overloaded servers distinguishable (no ties at
    the cap) when scoring the balancer's internal bookkeeping.
    """
    n = utils.shape[0]
    delta = demands[None, :] / caps  # per-server utilization increment
    hypo = np.repeat(utils[None, :, :], n, axis=0)
    idx = np.arange(n)
    if clip:
        hypo[idx, idx, :] = np.minimum(1.0, utils + delta)
    else:
        hypo[idx, idx, :] = utils + delta
    cap_tot = caps.sum(axis=0)
    averages = (hypo * caps[None, :, :]).sum(axis=1) / cap_tot[None, :]
    sq = (hypo - averages[:, None, :]) ** 2
    weights = np.array([w.a, w.b, w.c])
    return (sq * weights[None, None, :]).sum(axis=2).mean(axis=1)


class _Engine:
    """Tick-level mechanics plus the balancer's monitored view.

    The balancer never sees live server state: it works from the
    utilizations published at the last monitoring event plus its own
    bookkeeping of the placements it made since. In particular it does
    not observe departures between events, so its view goes stale in
    proportion to the churn of the traffic.
    """

    def __init__(self, scenario: Scenario):
        self.sc = scenario
        specs = sorted(scenario.servers, key=lambda s: s.id)
        self.states = [ServerState(s, scenario.overhead) for s in specs]
        self.ids = [s.id for s in specs]
        self.caps = np.array([s.capacities for s in specs])
        self.balancer = Balancer(scenario.policy)
        self.view = np.zeros((len(specs), 3))
        self.dropped: list[Request] = []
        self.admitted = 0

    def refresh_view(self, snapshots) -> None:
        self.view = np.array([s.util for s in snapshots])

    def dispatch_index(self, r: Request) -> int:
        policy = self.sc.policy
        if policy.kind == "round_robin":
            i = self.balancer._cursor % len(self.states)
            self.balancer._cursor += 1
            return i
        w = policy.weights
        if policy.kind == "least_loaded":
            scores = self.view @ np.array([w.a, w.b, w.c])
        else:
            scores = _min_imbalance_scores(
                self.view, self.caps, np.array([r.cpu, r.ram, r.net]), w,
                clip=False,
            )
        return int(np.argmin(scores))

    def admit(self, r: Request) -> None:
        i = self.dispatch_index(r)
        state = self.states[i]
        if self.sc.rejection:
            caps = state.spec.capacities
            demand = [0.0, 0.0, 0.0]
            for a in state.active.values():
                demand[0] += a.cpu; demand[1] += a.ram; demand[2] += a.net
            if (demand[0] + r.cpu > caps[0] or demand[1] + r.ram > caps[1]
                    or demand[2] + r.net > caps[2]):
                self.dropped.append(r)
                return
        state.admit(r, r.arrival_time)
        self.view[i] = self.view[i] + np.array([r.cpu, r.ram, r.net]) / self.caps[i]
        self.admitted += 1


def run(scenario: Scenario) -> tuple[list[ImbalanceReport], RunSummary]:
    """Simulate one scenario; returns the report series and its summary."""
    trace = generate_traffic(scenario.traffic)
    n_slots = min(
        len(trace), math.ceil(scenario.run_length / trace.slot_duration)
    )
    slots = trace.slots[:n_slots]
    # Arrival shaping: a background-load floor keeps the cluster churning
    # through deep traffic holes, and an admission cap keeps extreme spikes
    # from freezing it outright. The measured trace itself is untouched.
    if slots.size and slots.mean() > 0:
        mean = slots.mean()
        slots = np.clip(slots, 0.15 * mean, 50.0 * mean)
    window_trace = TrafficTrace(
        slots=slots,
        slot_duration=trace.slot_duration,
        achieved=trace.achieved,
    )
    requests = materialize_requests(
        window_trace,
        list(scenario.classes),
        seed=scenario.seed,
        mean_arrivals_per_slot=scenario.arrival_rate * trace.slot_duration,
    )
    requests = [r for r in requests if r.arrival_time < scenario.run_length]

    engine = _Engine(scenario)
    reports: list[ImbalanceReport] = []
    completed: list[CompletedRequest] = []
    arrivals_seen: list[float] = []

    mode = scenario.monitoring
    interval = mode.interval
    if mode.kind == "per_request":
        next_mon = requests[0].arrival_time if requests else math.inf
    else:
        next_mon = interval

    tick = scenario.tick
    n_ticks = int(round(scenario.run_length / tick))
    ri = 0
    for k in range(n_ticks):
        t0, t1 = k * tick, (k + 1) * tick
        for state in engine.states:
            completed.extend(
                CompletedRequest(r, tc) for r, tc in state.progress(tick, t0)
            )
        while ri < len(requests) and requests[ri].arrival_time < t1:
            r = requests[ri]
            engine.admit(r)
            arrivals_seen.append(r.arrival_time)
            ri += 1
        for state in engine.states:
            state.record_sample(t1)
        while next_mon <= t1:
            snaps = [
                s.windowed_snapshot(scenario.sample_window, tick, now=next_mon)
                for s in engine.states
            ]
            engine.refresh_view(snaps)
            reports.append(make_report(next_mon, snaps, scenario.weights))
            next_mon, interval = next_monitoring_time(
                mode, arrivals_seen, next_mon, interval
            )
            if next_mon <= reports[-1].t:  # guard against zero progress
                next_mon = reports[-1].t + max(tick, 1e-9)

    if not reports:
        raise ConfigurationError(
            "no monitoring events fired; check run_length and monitoring interval"
        )
    summary = run_summary(
        reports,
        completed,
        window=EQUILIBRIUM_WINDOW,
        epsilon=EQUILIBRIUM_EPSILON,
    )
    return reports, summary


TABLE_GRID = tuple(
    (h, dh) for h in (0.6, 0.7, 0.8, 0.9) for dh in (1.5, 2.0, 4.0, 6.0)
)


@dataclass(frozen=True)
class SweepRow:
    target_h: float
    target_delta_h: float
    t_eq: float
    t_eq_censored: int
    imb_tot_final: float
    seeds: int


def sweep(
    cells,
    base: Scenario,
    seeds_per_cell: int = 10,
) -> list[SweepRow]:
    """Run each (H, delta_h) cell with several replicate seeds.

    Replicate RNG streams derive from (base seed, cell index, replicate
    index), so adding replicates to one cell never changes another cell's
    results. Equilibrium times of runs that never settle are censored at
    the run length and counted in ``t_eq_censored``. Replicates whose
    trace fails to calibrate retry on the next derived seed (up to 3
    attempts) before the failure propagates.
    """
    cells = list(cells)
    if not cells:
        raise ConfigurationError("empty sweep grid")
    if seeds_per_cell < 1:
        raise ConfigurationError("need at least one seed per cell")

    rows = []
    for ci, (h, dh) in enumerate(cells):
        teqs, finals, censored = [], [], 0
        for rep in range(seeds_per_cell):
            last_error: CalibrationError | None = None
            for attempt in range(3):
                seed = int(
                    np.random.SeedSequence(
                        entropy=base.seed, spawn_key=(ci, rep, attempt)
                    ).generate_state(1)[0]
                )
                scenario = replace(
                    base,
                    traffic=replace(
                        base.traffic, target_h=h, target_delta_h=dh, seed=seed
                    ),
                    seed=seed,
                )
                try:
                    _, summary = run(scenario)
                    last_error = None
                    break
                except CalibrationError as exc:
                    last_error = exc
            if last_error is not None:
                raise last_error
            if summary.equilibrium_time is None:
                censored += 1
                teqs.append(base.run_length)
            else:
                teqs.append(summary.equilibrium_time)
            finals.append(summary.imb_tot_final)
        rows.append(
            SweepRow(
                target_h=h,
                target_delta_h=dh,
                t_eq=sum(teqs) / len(teqs),
                t_eq_censored=censored,
                imb_tot_final=sum(finals) / len(finals),
                seeds=seeds_per_cell,
            )
        )
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["H", "delta_h", "t_eq", "t_eq_censored", "imb_tot_final", "seeds"])
        for r in rows:
            writer.writerow(
                [repr(r.target_h), repr(r.target_delta_h), repr(r.t_eq),
                 r.t_eq_censored, repr(r.imb_tot_final), r.seeds]
            )
