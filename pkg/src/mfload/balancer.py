"""
Dispatch policies
=================

Three ways to pick a server for an arriving request:

* ``round_robin``: cyclic order, ignoring load,
* ``least_loaded``: smallest weighted current utilization,
* ``min_imbalance``: greedy one-step lookahead; the request goes to the
  server whose hypothetical admission minimizes the recomputed total
  imbalance over the whole cluster.

Dispatch never mutates cluster state; it works on immutable snapshots and
returns a decision. Ties break toward the lowest server id.
"""

from __future__ import annotations

from dataclasses import dataclass

from .cluster import ServerSnapshot
from .errors import ConfigurationError, ParameterError
from .metrics import Weights, server_imbalance, system_averages
from .traffic import Request

POLICY_KINDS = ("round_robin", "least_loaded", "min_imbalance")


@dataclass(frozen=True)
class Policy:
    kind: str = "min_imbalance"
    weights: Weights = Weights()

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ParameterError(
                f"unknown policy {self.kind!r}, expected one of {POLICY_KINDS}"
            )


@dataclass(frozen=True)
class DispatchDecision:
    request_id: int
    server_id: int
    predicted_imb_tot: float | None = None
    tie_broken: bool = False


def _admitted(snapshot: ServerSnapshot, r: Request) -> ServerSnapshot:
    caps = snapshot.capacities
    demands = (r.cpu, r.ram, r.net)
    util = tuple(
        min(1.0, snapshot.util[i] + demands[i] / caps[i]) for i in range(3)
    )
    return ServerSnapshot(id=snapshot.id, capacities=caps, util=util)


def predicted_total_imbalance(
    snapshots, r: Request, target: int, w: Weights
) -> float:
    """Total imbalance of the cluster with ``r`` hypothetically at ``target``."""
    hypo = []
    found = False
    for s in snapshots:
        if s.id == target:
            hypo.append(_admitted(s, r))
            found = True
        else:
            hypo.append(s)
    if not found:
        raise ConfigurationError(f"no server with id {target}")
    averages = system_averages(hypo)
    return sum(server_imbalance(s, averages, w) for s in hypo) / len(hypo)


class Balancer:
    """Applies a policy to successive requests; owns the round-robin cursor."""

    def __init__(self, policy: Policy):
        self.policy = policy
        self._cursor = 0

    def dispatch(self, snapshots, r: Request) -> DispatchDecision:
        snapshots = sorted(snapshots, key=lambda s: s.id)
        if not snapshots:
            raise ConfigurationError("empty cluster")

        if self.policy.kind == "round_robin":
            chosen = snapshots[self._cursor % len(snapshots)]
            self._cursor += 1
            return DispatchDecision(request_id=r.id, server_id=chosen.id)

        w = self.policy.weights
        if self.policy.kind == "least_loaded":
            scores = [
                (w.a * s.util[0] + w.b * s.util[1] + w.c * s.util[2], s.id)
                for s in snapshots
            ]
            best = min(scores)
            ties = sum(1 for sc in scores if sc[0] == best[0])
            return DispatchDecision(
                request_id=r.id, server_id=best[1], tie_broken=ties > 1
            )

        scores = [
            (predicted_total_imbalance(snapshots, r, s.id, w), s.id)
            for s in snapshots
        ]
        best = min(scores)
        ties = sum(1 for sc in scores if sc[0] == best[0])
        return DispatchDecision(
            request_id=r.id,
            server_id=best[1],
            predicted_imb_tot=best[0],
            tie_broken=ties > 1,
        )


def dispatch(policy: Policy, snapshots, r: Request) -> DispatchDecision:
    """One-shot dispatch for the stateless policies.

    Round-robin needs a cursor across calls; use a Balancer for it.
    """
    return Balancer(policy).dispatch(snapshots, r)
