"""
Imbalance metrics
=================

System-wide averages and the squared-deviation imbalance measures over a
set of server snapshots:

* per resource, capacity-weighted mean utilization across servers,
* per resource, the sum of squared deviations from that mean (no 1/N),
* per server, the weighted combination of its three squared deviations,
* in total, the arithmetic mean of the per-server values.

Also: equilibrium detection on the total-imbalance time series and the
end-of-run summary statistics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from .errors import (
    ConfigurationError,
    InsufficientDataError,
    ParameterError,
    ParseError,
)

EQUILIBRIUM_WINDOW = 60.0
EQUILIBRIUM_EPSILON = 0.05
# The settled imbalance level is averaged over this trailing stretch.
FINAL_WINDOW = 250.0


@dataclass(frozen=True)
class Weights:
    """Resource weighting coefficients (cpu, ram, net); must sum to 1."""

    a: float = 1.0 / 3.0
    b: float = 1.0 / 3.0
    c: float = 1.0 / 3.0

    def __post_init__(self):
        if min(self.a, self.b, self.c) < 0:
            raise ParameterError("weights must be nonnegative")
        if abs(self.a + self.b + self.c - 1.0) > 1e-12:
            raise ParameterError(f"weights sum to {self.a + self.b + self.c}, expected 1")


@dataclass(frozen=True)
class SystemAverages:
    """Capacity-weighted mean utilization per resource."""

    cpu_all: float
    ram_all: float
    net_all: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.cpu_all, self.ram_all, self.net_all)


@dataclass(frozen=True)
class ImbalanceReport:
    """All imbalance measures evaluated at one monitoring instant."""

    t: float
    imb_cpu: float
    imb_ram: float
    imb_net: float
    per_server: dict[int, float]
    imb_tot: float
    averages: SystemAverages
    # Weighted per-server loads; not part of the imbalance equations but
    # needed for the processing-period and efficiency summary statistics.
    per_server_load: dict[int, float] = field(default_factory=dict)


@dataclass(frozen=True)
class RunSummary:
    equilibrium_time: float | None
    imb_tot_final: float
    avg_duration: float | None
    processing_period_per_server: dict[int, float]
    processing_period_system: float
    efficiency: float


def system_averages(states) -> SystemAverages:
    """Capacity-weighted mean utilization per resource over the servers."""
    states = list(states)
    if not states:
        raise ConfigurationError("empty cluster")
    sums = [0.0, 0.0, 0.0]
    caps = [0.0, 0.0, 0.0]
    for s in states:
        for i in range(3):
            sums[i] += s.util[i] * s.capacities[i]
            caps[i] += s.capacities[i]
    return SystemAverages(
        cpu_all=sums[0] / caps[0], ram_all=sums[1] / caps[1], net_all=sums[2] / caps[2]
    )


def resource_imbalance(states, averages: SystemAverages) -> tuple[float, float, float]:
    """Sum of squared deviations from the system average, per resource."""
    avg = averages.as_tuple()
    out = [0.0, 0.0, 0.0]
    for s in states:
        for i in range(3):
            out[i] += (s.util[i] - avg[i]) ** 2
    return tuple(out)


def server_imbalance(state, averages: SystemAverages, w: Weights) -> float:
    """Weighted squared deviation of one server from the system averages."""
    avg = averages.as_tuple()
    return (
        w.a * (state.util[0] - avg[0]) ** 2
        + w.b * (state.util[1] - avg[1]) ** 2
        + w.c * (state.util[2] - avg[2]) ** 2
    )


def total_imbalance(per_server: dict[int, float]) -> float:
    """Arithmetic mean of the per-server imbalance values."""
    if not per_server:
        raise ConfigurationError("no servers")
    return sum(per_server.values()) / len(per_server)


def make_report(t: float, states, w: Weights) -> ImbalanceReport:
    """Evaluate the full imbalance pipeline on one set of snapshots."""
    states = list(states)
    averages = system_averages(states)
    imb_cpu, imb_ram, imb_net = resource_imbalance(states, averages)
    per_server = {s.id: server_imbalance(s, averages, w) for s in states}
    loads = {s.id: w.a * s.util[0] + w.b * s.util[1] + w.c * s.util[2] for s in states}
    return ImbalanceReport(
        t=t,
        imb_cpu=imb_cpu,
        imb_ram=imb_ram,
        imb_net=imb_net,
        per_server=per_server,
        imb_tot=total_imbalance(per_server),
        averages=averages,
        per_server_load=loads,
    )


def detect_equilibrium(series, window: float, epsilon: float) -> float | None:
    """Earliest time from which the series stays within an epsilon band.

    Returns the first t0 such that every window [t, t + window] with
    t >= t0 has max - min < epsilon, or None when the series never
    settles (including when it settles too late for one full window to
    confirm it before the run ends).
    """
    pts = list(series)
    if not pts:
        raise InsufficientDataError("empty imbalance series")
    if window <= 0 or epsilon <= 0:
        raise ParameterError("window and epsilon must be positive")
    times = [t for t, _ in pts]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ParameterError("series must be sorted by time")

    n = len(pts)
    # ok[i]: spread of values in [t_i, t_i + window] is below epsilon.
    # Any real-valued window's sample set is contained in one of these.
    first_bad_after = n  # index of the first start whose suffix is all ok
    j = 0
    spreads_ok = []
    for i in range(n):
        lo = hi = pts[i][1]
        j = i
        while j < n and pts[j][0] <= pts[i][0] + window:
            lo = min(lo, pts[j][1])
            hi = max(hi, pts[j][1])
            j += 1
        spreads_ok.append(hi - lo < epsilon)
    last_bad = -1
    for i, ok in enumerate(spreads_ok):
        if not ok:
            last_bad = i
    if last_bad == -1:
        return times[0]
    t0_index = last_bad + 1
    if t0_index >= n:
        return None
    t0 = pts[t0_index][0]
    # After an unstable stretch, the settled tail must cover at least one
    # full window before the series ends, otherwise the run ends before
    # settling is confirmed (censored).
    if t0 > times[-1] - window:
        return None
    return t0


def run_summary(
    reports,
    completed_requests,
    window: float = EQUILIBRIUM_WINDOW,
    epsilon: float = EQUILIBRIUM_EPSILON,
) -> RunSummary:
    """Summarize a run: equilibrium, settled imbalance, durations, loads."""
    reports = list(reports)
    if not reports:
        raise InsufficientDataError("no reports")
    series = [(r.t, r.imb_tot) for r in reports]
    teq = detect_equilibrium(series, window, epsilon)

    t_end = reports[-1].t
    tail = [r.imb_tot for r in reports if r.t >= t_end - FINAL_WINDOW]
    imb_tot_final = sum(tail) / len(tail)

    durations = [
        r.sojourn if hasattr(r, "sojourn") else r.duration
        for r in completed_requests
    ]
    avg_duration = sum(durations) / len(durations) if durations else None

    ids = reports[0].per_server_load.keys()
    per_server_max = {
        i: max(r.per_server_load[i] for r in reports) for i in ids
    }
    loads_over_time = [
        sum(r.per_server_load.values()) / len(r.per_server_load) for r in reports
    ]
    mean_load = sum(loads_over_time) / len(loads_over_time)

    return RunSummary(
        equilibrium_time=teq,
        imb_tot_final=imb_tot_final,
        avg_duration=avg_duration,
        processing_period_per_server=per_server_max,
        processing_period_system=mean_load,
        efficiency=mean_load,
    )


# --- CSV interfaces ------------------------------------------------------

def write_reports_csv(reports, path) -> None:
    """Report series as t,imb_cpu,imb_ram,imb_net,imb_tot,imb_s<id>...,load_s<id>..."""
    reports = list(reports)
    if not reports:
        raise InsufficientDataError("no reports to write")
    ids = sorted(reports[0].per_server)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t", "imb_cpu", "imb_ram", "imb_net", "imb_tot"]
            + [f"imb_s{i}" for i in ids]
            + [f"load_s{i}" for i in ids]
        )
        for r in reports:
            writer.writerow(
                [repr(r.t), repr(r.imb_cpu), repr(r.imb_ram), repr(r.imb_net), repr(r.imb_tot)]
                + [repr(r.per_server[i]) for i in ids]
                + [repr(r.per_server_load.get(i, 0.0)) for i in ids]
            )


def read_reports_csv(path) -> list[ImbalanceReport]:
    reports = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:5] != ["t", "imb_cpu", "imb_ram", "imb_net", "imb_tot"]:
            raise ParseError("expected an imbalance report header", line=1)
        imb_ids = [int(c[len("imb_s"):]) for c in header[5:] if c.startswith("imb_s")]
        load_ids = [int(c[len("load_s"):]) for c in header[5:] if c.startswith("load_s")]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise ParseError(f"bad report row {row!r}", line=lineno) from exc
            per_server = dict(zip(imb_ids, vals[5 : 5 + len(imb_ids)]))
            loads = dict(zip(load_ids, vals[5 + len(imb_ids) :]))
            reports.append(
                ImbalanceReport(
                    t=vals[0],
                    imb_cpu=vals[1],
                    imb_ram=vals[2],
                    imb_net=vals[3],
                    per_server=per_server,
                    imb_tot=vals[4],
                    averages=SystemAverages(0.0, 0.0, 0.0),
                    per_server_load=loads,
                )
            )
    return reports


def summary_text(summary: RunSummary) -> str:
    lines = []
    teq = summary.equilibrium_time
    lines.append(f"equilibrium_time = {'none' if teq is None else repr(teq)}")
    lines.append(f"imb_tot_final = {summary.imb_tot_final!r}")
    avg = summary.avg_duration
    lines.append(f"avg_duration = {'none' if avg is None else repr(avg)}")
    lines.append(f"processing_period_system = {summary.processing_period_system!r}")
    lines.append(f"efficiency = {summary.efficiency!r}")
    for sid in sorted(summary.processing_period_per_server):
        lines.append(
            f"processing_period_s{sid} = {summary.processing_period_per_server[sid]!r}"
        )
    return "\n".join(lines) + "\n"
