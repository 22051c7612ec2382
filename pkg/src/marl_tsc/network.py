"""Static road-network topology: junctions, lanes, phases, turning probabilities.

Indices are 0-based everywhere: junction ``j``, global lane id ``i`` and the
phase position ``p`` inside a junction's round-robin order. A lane's cars go,
after being served, to the lanes that list it as a feeder (with the feeder's
turning probability) or leave the network with ``exit_probability``.
"""
from __future__ import annotations

import json
import numbers
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping

TURNING_TOL = 1e-9


class InvalidReference(KeyError):
    """Unknown junction, lane or phase id."""


class LaneKind(str, Enum):
    EXTERNAL = "external"
    INTERNAL = "internal"


@dataclass(frozen=True)
class LaneSpec:
    id: int
    junction: int
    kind: LaneKind
    capacity: int
    service_rate: float
    arrival_rate: float = 0.0
    # (upstream lane id, turning probability into this lane)
    feeders: tuple[tuple[int, float], ...] = ()
    # share of this lane's served cars that leave the network
    exit_probability: float = 0.0


@dataclass(frozen=True)
class PhaseSpec:
    index: int
    lanes_served: frozenset[int]


@dataclass(frozen=True)
class JunctionSpec:
    id: int
    incoming_lanes: tuple[int, ...]
    phases: tuple[PhaseSpec, ...]

    @property
    def n_lanes(self) -> int:
        return len(self.incoming_lanes)

    @property
    def n_phases(self) -> int:
        return len(self.phases)

    def phase_of(self, lane: int) -> int:
        """Index p(i) of the phase granting green to ``lane``."""
        for ph in self.phases:
            if lane in ph.lanes_served:
                return ph.index
        raise InvalidReference(f"lane {lane} is not served at junction {self.id}")


@dataclass(frozen=True)
class Violation:
    kind: str
    subject: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    def add(self, kind: str, subject: str, message: str) -> None:
        self.violations.append(Violation(kind, subject, message))

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> list[str]:
        return [v.kind for v in self.violations]

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)


@dataclass(frozen=True)
class TrafficNetwork:
    junctions: tuple[JunctionSpec, ...]
    lanes: tuple[LaneSpec, ...]
    neighborhoods: Mapping[int, frozenset[int]]

    def lane(self, lane_id: int) -> LaneSpec:
        if not isinstance(lane_id, numbers.Integral) or not 0 <= lane_id < len(self.lanes):
            raise InvalidReference(f"unknown lane id {lane_id!r}")
        return self.lanes[lane_id]

    def junction(self, j: int) -> JunctionSpec:
        if not isinstance(j, numbers.Integral) or not 0 <= j < len(self.junctions):
            raise InvalidReference(f"unknown junction id {j!r}")
        return self.junctions[j]

    @property
    def n_junctions(self) -> int:
        return len(self.junctions)

    @cached_property
    def downstream(self) -> dict[int, tuple[tuple[int, float], ...]]:
        """lane id -> ((downstream lane id, alpha), ...) in lane-id order."""
        out: dict[int, list[tuple[int, float]]] = {ln.id: [] for ln in self.lanes}
        for ln in self.lanes:
            for up, alpha in ln.feeders:
                out.setdefault(up, []).append((ln.id, alpha))
        return {k: tuple(sorted(v)) for k, v in out.items()}

    @cached_property
    def routing(self) -> dict[int, tuple[tuple[int, ...], tuple[float, ...]]]:
        """lane id -> (destination lane ids, probabilities incl. trailing exit share).

        A lane with no downstream lane sends every served car out of the network.
        """
        table = {}
        for ln in self.lanes:
            down = self.downstream.get(ln.id, ())
            if not down:
                table[ln.id] = ((), (1.0,))
                continue
            dests = tuple(d for d, _ in down)
            probs = [a for _, a in down]
            probs.append(max(0.0, 1.0 - sum(probs)))
            table[ln.id] = (dests, tuple(probs))
        return table

    def adjacent(self, j: int) -> frozenset[int]:
        """Junctions physically linked to ``j`` by a feeder relation (either direction)."""
        adj = set()
        for ln in self.lanes:
            for up, _ in ln.feeders:
                if not 0 <= up < len(self.lanes):
                    continue
                a, b = ln.junction, self.lanes[up].junction
                if a == j and b != j:
                    adj.add(b)
                elif b == j and a != j:
                    adj.add(a)
        return frozenset(adj)


def upstream_set(net: TrafficNetwork, lane: int) -> frozenset[tuple[int, float]]:
    """U(i): the (upstream lane, turning probability) pairs feeding ``lane``."""
    return frozenset(net.lane(lane).feeders)


def validate_network(net: TrafficNetwork) -> ValidationReport:
    """Collect every structural violation; never raises."""
    rep = ValidationReport()
    n_lanes = len(net.lanes)
    n_j = len(net.junctions)

    for pos, ln in enumerate(net.lanes):
        subj = f"lane {ln.id}"
        if ln.id != pos:
            rep.add("structure", subj, f"lane id {ln.id} stored at position {pos}")
        if not 0 <= ln.junction < n_j:
            rep.add("reference", subj, f"unknown junction {ln.junction}")
        elif ln.id not in net.junctions[ln.junction].incoming_lanes:
            rep.add("structure", subj, f"not listed as incoming at junction {ln.junction}")
        if not isinstance(ln.capacity, int) or ln.capacity <= 0:
            rep.add("range", subj, f"capacity must be a positive integer, got {ln.capacity!r}")
        if not ln.service_rate > 0:
            rep.add("range", subj, f"service rate must be > 0, got {ln.service_rate}")
        if not ln.arrival_rate >= 0:
            rep.add("range", subj, f"arrival rate must be >= 0, got {ln.arrival_rate}")
        if not 0.0 <= ln.exit_probability <= 1.0:
            rep.add("range", subj, f"exit probability outside [0,1]: {ln.exit_probability}")
        if ln.kind is LaneKind.EXTERNAL:
            if ln.feeders:
                rep.add("structure", subj, "external lane must not have feeders")
        else:
            if not ln.feeders:
                rep.add("structure", subj, "internal lane needs at least one feeder")
            if ln.arrival_rate != 0:
                rep.add("structure", subj, "internal lane cannot have an external arrival rate")
        for up, alpha in ln.feeders:
            if not 0.0 <= alpha <= 1.0:
                rep.add("turning_probability", subj, f"alpha {alpha} from lane {up} outside [0,1]")
            if not 0 <= up < n_lanes:
                rep.add("reference", subj, f"feeder lane {up} does not exist")
            elif net.lanes[up].junction == ln.junction:
                rep.add("reference", subj, f"feeder lane {up} belongs to the same junction")

    for pos, jn in enumerate(net.junctions):
        subj = f"junction {jn.id}"
        if jn.id != pos:
            rep.add("structure", subj, f"junction id {jn.id} stored at position {pos}")
        if jn.n_lanes < 1:
            rep.add("structure", subj, "needs at least one incoming lane")
        if jn.n_phases < 1:
            rep.add("structure", subj, "needs at least one phase")
        incoming = set(jn.incoming_lanes)
        for k, ph in enumerate(jn.phases):
            if ph.index != k:
                rep.add("structure", subj, f"phase at position {k} has index {ph.index}")
            if not ph.lanes_served:
                rep.add("structure", subj, f"phase {ph.index} serves no lane")
            extra = set(ph.lanes_served) - incoming
            if extra:
                rep.add("structure", subj, f"phase {ph.index} serves foreign lanes {sorted(extra)}")
        for lane_id in jn.incoming_lanes:
            hits = sum(lane_id in ph.lanes_served for ph in jn.phases)
            if hits != 1:
                rep.add("structure", subj, f"lane {lane_id} assigned to {hits} phases")

    # turning rows: every lane with a downstream lane sends all served cars somewhere
    for lane_id, down in net.downstream.items():
        if not down or not 0 <= lane_id < n_lanes:
            continue
        total = sum(a for _, a in down) + net.lanes[lane_id].exit_probability
        if abs(total - 1.0) > TURNING_TOL:
            rep.add("turning_probability", f"lane {lane_id}",
                    f"turning probabilities plus exit share sum to {total!r}, expected 1")

    for j in range(n_j):
        subj = f"junction {j}"
        if j not in net.neighborhoods:
            rep.add("neighborhood", subj, "no neighborhood defined")
            continue
        nb = net.neighborhoods[j]
        if j not in nb:
            rep.add("neighborhood", subj, "neighborhood does not contain the junction itself")
        bad = [k for k in nb if not 0 <= k < n_j]
        if bad:
            rep.add("neighborhood", subj, f"unknown junctions in neighborhood: {sorted(bad)}")
    for j in range(n_j):
        if j not in net.neighborhoods:
            continue
        for k in net.adjacent(j):
            if k < j or k not in net.neighborhoods:
                continue
            if (k in net.neighborhoods[j]) != (j in net.neighborhoods[k]):
                rep.add("neighborhood", f"junction {j}",
                        f"neighborhood membership with adjacent junction {k} is not symmetric")
    return rep


# --- construction helpers ---------------------------------------------------

def _default_neighborhoods(junctions: Iterable[JunctionSpec], lanes) -> dict[int, frozenset[int]]:
    nb = {jn.id: {jn.id} for jn in junctions}
    for ln in lanes:
        for up, _ in ln.feeders:
            a, b = ln.junction, lanes[up].junction
            nb[a].add(b)
            nb[b].add(a)
    return {k: frozenset(v) for k, v in nb.items()}


def build_three_junction_example(
    arrival_rate: float = 0.2,
    service_rate: float = 0.5,
    capacity: int = 40,
    external_turn: float = 0.5,
    through_turn: float = 0.25,
) -> TrafficNetwork:
    """Three fully interconnected junctions with two-way roads.

    Junction ``j`` has lane 0 fed from outside, lane 1 fed by junction
    ``j+1`` and lane 2 fed by junction ``j+2`` (mod 3); phase ``p`` serves its
    lane ``p``. External cars split ``external_turn`` / ``1 - external_turn``
    over the two roads leaving towards the other junctions. Cars reaching a
    junction from another one continue (no U-turns) with ``through_turn`` and
    otherwise leave by the junction's outbound external road.
    """
    def lid(j: int, i: int) -> int:
        return 3 * j + i

    def lane_from(j: int, k: int) -> int:
        # lane at junction j carrying cars that came from junction k
        return lid(j, 1 if k == (j + 1) % 3 else 2)

    lanes = []
    for j in range(3):
        lanes.append(LaneSpec(lid(j, 0), j, LaneKind.EXTERNAL, capacity, service_rate,
                              arrival_rate=arrival_rate))
        for i in (1, 2):
            k = (j + i) % 3          # upstream junction
            m = 3 - j - k            # third junction
            # the two shares of k's external lane must add up to one
            feeders = (
                (lid(k, 0), external_turn if i == 1 else 1.0 - external_turn),
                (lane_from(k, m), through_turn),
            )
            lanes.append(LaneSpec(lid(j, i), j, LaneKind.INTERNAL, capacity, service_rate,
                                  feeders=tuple(sorted(feeders)),
                                  exit_probability=1.0 - through_turn))
    junctions = tuple(
        JunctionSpec(j, (lid(j, 0), lid(j, 1), lid(j, 2)),
                     tuple(PhaseSpec(p, frozenset({lid(j, p)})) for p in range(3)))
        for j in range(3)
    )
    return TrafficNetwork(junctions, tuple(lanes), _default_neighborhoods(junctions, lanes))


def build_single_junction(
    arrival_rates: Iterable[float] = (0.2, 0.2),
    service_rate: float = 0.5,
    capacity: int = 40,
) -> TrafficNetwork:
    """One isolated junction; every lane external, one phase per lane, all cars exit."""
    rates = list(arrival_rates)
    lanes = tuple(LaneSpec(i, 0, LaneKind.EXTERNAL, capacity, service_rate, arrival_rate=r)
                  for i, r in enumerate(rates))
    phases = tuple(PhaseSpec(p, frozenset({p})) for p in range(len(rates)))
    jn = JunctionSpec(0, tuple(range(len(rates))), phases)
    return TrafficNetwork((jn,), lanes, {0: frozenset({0})})


# --- serialization ------------------------------------------------------------

def network_to_dict(net: TrafficNetwork) -> dict:
    return {
        "junctions": [
            {
                "id": jn.id,
                "incoming_lanes": list(jn.incoming_lanes),
                "phases": [{"index": ph.index, "lanes_served": sorted(ph.lanes_served)}
                           for ph in jn.phases],
            }
            for jn in net.junctions
        ],
        "lanes": [
            {
                "id": ln.id,
                "junction": ln.junction,
                "kind": ln.kind.value,
                "capacity": ln.capacity,
                "arrival_rate": ln.arrival_rate,
                "service_rate": ln.service_rate,
                "feeders": [[up, a] for up, a in ln.feeders],
                "exit_probability": ln.exit_probability,
            }
            for ln in net.lanes
        ],
        "neighborhoods": {str(j): sorted(nb) for j, nb in sorted(net.neighborhoods.items())},
    }


def network_from_dict(data: dict) -> TrafficNetwork:
    lanes = tuple(
        LaneSpec(
            id=int(d["id"]),
            junction=int(d["junction"]),
            kind=LaneKind(d["kind"]),
            capacity=d["capacity"],
            service_rate=float(d["service_rate"]),
            arrival_rate=float(d.get("arrival_rate", 0.0)),
            feeders=tuple((int(up), float(a)) for up, a in d.get("feeders", [])),
            exit_probability=float(d.get("exit_probability", 0.0)),
        )
        for d in data["lanes"]
    )
    junctions = tuple(
        JunctionSpec(
            id=int(d["id"]),
            incoming_lanes=tuple(int(x) for x in d["incoming_lanes"]),
            phases=tuple(PhaseSpec(int(p["index"]), frozenset(int(x) for x in p["lanes_served"]))
                         for p in d["phases"]),
        )
        for d in data["junctions"]
    )
    if "neighborhoods" in data:
        nbs = {int(k): frozenset(int(x) for x in v) for k, v in data["neighborhoods"].items()}
    else:
        nbs = _default_neighborhoods(junctions, lanes)
    return TrafficNetwork(junctions, lanes, nbs)


def dumps_network(net: TrafficNetwork) -> str:
    return json.dumps(network_to_dict(net), indent=2) + "\n"


def loads_network(text: str) -> TrafficNetwork:
    return network_from_dict(json.loads(text))


def save_network(net: TrafficNetwork, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_network(net))


def load_network(path) -> TrafficNetwork:
    with open(path) as fh:
        return loads_network(fh.read())
