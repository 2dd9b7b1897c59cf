"""
Server and cluster state
========================

Heterogeneous servers tracked per resource (cpu, ram, net). Utilization is
always the ratio of active demand to capacity, clipped to [0, 1]; demand
beyond capacity accrues an overload-debt counter instead of raising.

Per-class usage readings carry a configurable multiplicative overhead
factor (OS bookkeeping sits on top of the true demand); the class shares
derived from them are used to split the windowed utilization averages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigurationError, InsufficientDataError, ParameterError, ParseError
from .traffic import Request

# Per-class usage readings run this much above true demand (scheduler and
# bookkeeping overhead on top of the task itself).
DEFAULT_OVERHEAD_FACTOR = 1.05

RESOURCES = ("cpu", "ram", "net")


@dataclass(frozen=True)
class ServerSpec:
    """Static description of one server."""

    id: int
    cpu_capacity: float
    ram_capacity: float
    net_capacity: float

    def __post_init__(self):
        if min(self.cpu_capacity, self.ram_capacity, self.net_capacity) <= 0:
            raise ConfigurationError(f"server {self.id}: capacities must be positive")

    @property
    def capacities(self) -> tuple[float, float, float]:
        return (self.cpu_capacity, self.ram_capacity, self.net_capacity)


@dataclass(frozen=True)
class ServerSnapshot:
    """Immutable utilization view handed to metrics and dispatch."""

    id: int
    capacities: tuple[float, float, float]
    util: tuple[float, float, float]


@dataclass(frozen=True)
class WindowedUtilization:
    """Mean utilization over an observation window (one value per resource)."""

    cpu_avg: float
    ram_avg: float
    net_avg: float
    window: float
    sample_period: float
    samples: int = 1

    def __post_init__(self):
        for v in (self.cpu_avg, self.ram_avg, self.net_avg):
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"windowed average {v} outside [0, 1]")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.cpu_avg, self.ram_avg, self.net_avg)


@dataclass(frozen=True)
class ClassLoadBreakdown:
    """Per-class shares of each resource and the attributed loads.

    ``shares[class_id]`` and ``loads[class_id]`` are (cpu, ram, net)
    triples; shares per resource sum to 1. When the readings for a
    resource are all zero the shares are uniform and ``degenerate`` names
    the affected resources.
    """

    shares: dict[str, tuple[float, float, float]]
    loads: dict[str, tuple[float, float, float]]
    degenerate: tuple[str, ...] = ()


class ServerState:
    """Mutable per-server accounting owned by exactly one simulation."""

    def __init__(self, spec: ServerSpec, overhead: float = DEFAULT_OVERHEAD_FACTOR):
        if overhead < 1.0:
            raise ConfigurationError("overhead factor must be >= 1")
        self.spec = spec
        self.overhead = overhead
        self.active: dict[int, Request] = {}
        self.remaining: dict[int, float] = {}
        self.util: tuple[float, float, float] = (0.0, 0.0, 0.0)
        self.overload_debt: tuple[float, float, float] = (0.0, 0.0, 0.0)
        self.demand: tuple[float, float, float] = (0.0, 0.0, 0.0)
        self.measured_by_class: dict[str, tuple[float, float, float]] = {}
        self.window_samples: list[tuple[float, float, float, float]] = []

    def _recompute(self) -> None:
        caps = self.spec.capacities
        demand = [0.0, 0.0, 0.0]
        by_class: dict[str, list[float]] = {}
        for r in self.active.values():
            d = (r.cpu, r.ram, r.net)
            acc = by_class.setdefault(r.class_id, [0.0, 0.0, 0.0])
            for i in range(3):
                demand[i] += d[i]
                acc[i] += d[i] * self.overhead
        self.demand = tuple(demand)
        self.util = tuple(min(1.0, demand[i] / caps[i]) for i in range(3))
        self.overload_debt = tuple(max(0.0, demand[i] - caps[i]) for i in range(3))
        self.measured_by_class = {c: tuple(v) for c, v in by_class.items()}

    def admit(self, request: Request, now: float) -> None:
        """Add a request to the active set; overload clips at full utilization."""
        if request.id in self.active:
            raise ParameterError(f"request {request.id} already active")
        self.active[request.id] = request
        self.remaining[request.id] = request.duration
        self._recompute()

    def release_expired(self, now: float) -> list[Request]:
        """Remove every request whose nominal completion time has passed.

        Nominal completion is arrival + duration (no congestion slowdown);
        simulations that model overload slowdown advance work with
        ``progress`` instead.
        """
        done = [r for r in self.active.values() if r.completion_time <= now]
        if done:
            for r in done:
                del self.active[r.id]
                self.remaining.pop(r.id, None)
            self._recompute()
        return done

    # Fraction of capacity lost to task switching per unit of overload;
    # overloaded servers drain slower than plain processor sharing.
    CONGESTION_OVERHEAD = 0.6

    def service_rate(self) -> float:
        """Work progress per unit time: 1 uncongested, degraded when demand
        exceeds capacity in any resource (processor sharing plus switching
        overhead)."""
        ratio = max(
            self.demand[i] / self.spec.capacities[i] for i in range(3)
        ) if self.active else 0.0
        if ratio <= 1.0:
            return 1.0
        return 1.0 / (ratio * (1.0 + self.CONGESTION_OVERHEAD * (ratio - 1.0)))

    def progress(self, dt: float, now: float) -> list[tuple[Request, float]]:
        """Advance remaining work by dt at the current service rate.

        Returns (request, completion_time) for requests that finish within
        the step; overloaded servers drain slower, so completion can fall
        past arrival + duration.
        """
        if not self.active:
            return []
        rate = self.service_rate()
        finished: list[tuple[Request, float]] = []
        for rid in list(self.active):
            left = self.remaining[rid] - dt * rate
            if left <= 0.0:
                completion = now + self.remaining[rid] / rate
                finished.append((self.active[rid], completion))
                del self.active[rid]
                del self.remaining[rid]
            else:
                self.remaining[rid] = left
        if finished:
            self._recompute()
        return finished

    def record_sample(self, t: float) -> None:
        self.window_samples.append((t, *self.util))
        # Ring semantics: samples older than any plausible window get dropped.
        if len(self.window_samples) > 4096:
            del self.window_samples[:2048]

    def snapshot(self) -> ServerSnapshot:
        return ServerSnapshot(
            id=self.spec.id, capacities=self.spec.capacities, util=self.util
        )

    def windowed_snapshot(self, window: float, period: float, now: float) -> ServerSnapshot:
        w = sample_window(self, window, period, now)
        return ServerSnapshot(
            id=self.spec.id, capacities=self.spec.capacities, util=w.as_tuple()
        )


def sample_window(
    state: ServerState, window: float, period: float, now: float | None = None
) -> WindowedUtilization:
    """Arithmetic mean of the utilization samples recorded in the window."""
    if not window >= period > 0:
        raise ParameterError(f"need window >= period > 0, got {window}, {period}")
    if not state.window_samples:
        raise InsufficientDataError("no utilization samples recorded")
    if now is None:
        now = state.window_samples[-1][0]
    recent = [s for s in state.window_samples if now - window <= s[0] <= now]
    if not recent:
        raise InsufficientDataError(f"no samples within window ending at {now}")
    n = len(recent)
    return WindowedUtilization(
        cpu_avg=sum(s[1] for s in recent) / n,
        ram_avg=sum(s[2] for s in recent) / n,
        net_avg=sum(s[3] for s in recent) / n,
        window=window,
        sample_period=period,
        samples=n,
    )


def class_breakdown(
    util: WindowedUtilization, measured_by_class: dict[str, tuple[float, float, float]]
) -> ClassLoadBreakdown:
    """Split each windowed average across classes by their measured shares.

    Share of class c in resource r = reading(c, r) / sum of readings(r);
    attributed load = windowed average x share. All-zero readings for a
    resource yield uniform shares, flagged in ``degenerate``.
    """
    if not measured_by_class:
        raise InsufficientDataError("no per-class measurements")
    classes = sorted(measured_by_class)
    averages = util.as_tuple()
    totals = [sum(measured_by_class[c][i] for c in classes) for i in range(3)]
    degenerate = tuple(RESOURCES[i] for i in range(3) if totals[i] == 0.0)

    shares: dict[str, tuple[float, float, float]] = {}
    loads: dict[str, tuple[float, float, float]] = {}
    for c in classes:
        share = tuple(
            (measured_by_class[c][i] / totals[i]) if totals[i] > 0.0 else 1.0 / len(classes)
            for i in range(3)
        )
        shares[c] = share
        loads[c] = tuple(averages[i] * share[i] for i in range(3))
    return ClassLoadBreakdown(shares=shares, loads=loads, degenerate=degenerate)


def default_cluster() -> list[ServerSpec]:
    """Two clusters of six servers with the default heterogeneous capacities.

    Odd positions get 400/450/300, even positions 300/350/250; the last
    server of cluster 1 is 500/550/350 and of cluster 2 is 600/650/400.
    Ids are two-digit: cluster digit then position 1..6.
    """
    servers = []
    for cluster in (1, 2):
        for pos in range(1, 7):
            sid = cluster * 10 + pos
            if pos == 6:
                caps = (500.0, 550.0, 350.0) if cluster == 1 else (600.0, 650.0, 400.0)
            elif pos % 2 == 1:
                caps = (400.0, 450.0, 300.0)
            else:
                caps = (300.0, 350.0, 250.0)
            servers.append(ServerSpec(sid, *caps))
    return servers


def parse_cluster_lines(lines) -> list[ServerSpec]:
    """Parse ``server<id> = cpu,ram,net`` lines into specs."""
    servers = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"expected 'server<id> = cpu,ram,net', got {line!r}", line=lineno)
        key, _, value = line.partition("=")
        key = key.strip().lower()
        if not key.startswith("server"):
            raise ParseError(f"unknown key {key!r}", line=lineno)
        try:
            sid = int(key[len("server"):])
            caps = [float(p) for p in value.split(",")]
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from exc
        if len(caps) != 3:
            raise ParseError("expected three capacities cpu,ram,net", line=lineno)
        servers.append(ServerSpec(sid, *caps))
    if not servers:
        raise ConfigurationError("cluster config lists no servers")
    ids = [s.id for s in servers]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("duplicate server ids in cluster config")
    return servers
