"""Discrete-time stochastic queueing simulator for signalized road networks.

The network advances one full phase cycle at a time. Within a phase of length
``t`` a green lane discharges ``min(count, round(mu * t))`` cars, each routed
to a downstream lane by sampling the turning probabilities; external lanes
draw ``Poisson(r * t)`` arrivals in every phase. While its own phase is green
an external lane's new arrivals traverse the junction without joining the
queue (they are routed downstream like served cars), so the queue itself only
accumulates red-time arrivals. Cars routed into a full lane are dropped and
counted as blocked on that lane.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .network import InvalidReference, LaneKind, TrafficNetwork

ACTION_DURATIONS = (10, 20, 30)
CYCLE_CSV_HEADER = ("cycle", "junction", "lane", "before", "arrivals", "departures",
                    "blocked", "after")


def service_capacity(service_rate: float, duration: float) -> int:
    """Cars a green lane can discharge in ``duration`` seconds (half-up rounding)."""
    return int(math.floor(service_rate * duration + 0.5))


@dataclass
class LaneState:
    count: int = 0
    arrivals_this_cycle: int = 0
    departures_this_cycle: int = 0
    blocked_this_cycle: int = 0
    passed_this_cycle: int = 0
    offered_this_cycle: int = 0

    def reset_cycle(self) -> None:
        self.arrivals_this_cycle = 0
        self.departures_this_cycle = 0
        self.blocked_this_cycle = 0
        self.passed_this_cycle = 0
        self.offered_this_cycle = 0


def initial_lane_states(net: TrafficNetwork, counts: Sequence[int] | None = None) -> list[LaneState]:
    if counts is None:
        return [LaneState() for _ in net.lanes]
    if len(counts) != len(net.lanes):
        raise ValueError(f"expected {len(net.lanes)} counts, got {len(counts)}")
    states = []
    for ln, c in zip(net.lanes, counts):
        if not 0 <= c <= ln.capacity:
            raise ValueError(f"lane {ln.id}: count {c} outside [0, {ln.capacity}]")
        states.append(LaneState(int(c)))
    return states


@dataclass
class SimClock:
    t: float = 0.0
    cycle_index: int = 0


@dataclass(frozen=True)
class GreenSchedule:
    """Green duration per (junction, phase), each drawn from ``allowed``."""

    durations: Mapping[tuple[int, int], int]
    allowed: tuple[int, ...] = ACTION_DURATIONS

    def __post_init__(self):
        bad = {k: v for k, v in self.durations.items() if v not in self.allowed}
        if bad:
            raise ValueError(f"durations {bad} not in the action set {self.allowed}")

    @classmethod
    def uniform(cls, net: TrafficNetwork, duration: int = 20,
                allowed: tuple[int, ...] = ACTION_DURATIONS) -> "GreenSchedule":
        return cls({(jn.id, ph.index): duration for jn in net.junctions for ph in jn.phases},
                   allowed)

    def duration(self, junction: int, phase: int) -> int:
        try:
            return self.durations[(junction, phase)]
        except KeyError:
            raise InvalidReference(f"no duration for junction {junction} phase {phase}") from None

    def cycle_time(self, net: TrafficNetwork, junction: int) -> int:
        return sum(self.duration(junction, ph.index) for ph in net.junction(junction).phases)

    def with_duration(self, junction: int, phase: int, duration: int) -> "GreenSchedule":
        d = dict(self.durations)
        d[(junction, phase)] = duration
        return GreenSchedule(d, self.allowed)


def sample_poisson_arrivals(rate: float, dt: float, rng: np.random.Generator) -> int:
    if rate < 0 or dt < 0:
        raise ValueError(f"rate and dt must be non-negative (rate={rate}, dt={dt})")
    if rate == 0 or dt == 0:
        return 0
    return int(rng.poisson(rate * dt))


@dataclass
class LaneDelta:
    """What happened during one phase (or an accumulation of phases)."""

    arrivals: dict[int, int] = field(default_factory=dict)
    departures: dict[int, int] = field(default_factory=dict)
    blocked: dict[int, int] = field(default_factory=dict)
    passed_through: dict[int, int] = field(default_factory=dict)
    # (source lane, destination lane or None for exit) -> cars
    routed: dict[tuple[int, int | None], int] = field(default_factory=dict)


def _bump(d: dict, key, n: int) -> None:
    if n:
        d[key] = d.get(key, 0) + n


def _admit(net: TrafficNetwork, lanes: list[LaneState], lane_id: int, n: int,
           delta: LaneDelta) -> None:
    st = lanes[lane_id]
    room = net.lanes[lane_id].capacity - st.count
    ok = min(n, room)
    st.count += ok
    st.arrivals_this_cycle += ok
    st.blocked_this_cycle += n - ok
    _bump(delta.arrivals, lane_id, ok)
    _bump(delta.blocked, lane_id, n - ok)


def route_cars(net: TrafficNetwork, lanes: list[LaneState], src: int, n: int,
               rng: np.random.Generator, delta: LaneDelta) -> None:
    """Send ``n`` cars leaving ``src`` to its downstream lanes, one multinomial draw."""
    if n <= 0:
        return
    dests, probs = net.routing[src]
    if not dests:
        _bump(delta.routed, (src, None), n)
        return
    split = rng.multinomial(n, probs)
    for d, m in zip(dests, split[:-1]):
        m = int(m)
        if m:
            _bump(delta.routed, (src, d), m)
            _admit(net, lanes, d, m, delta)
    _bump(delta.routed, (src, None), int(split[-1]))


def step_phase(net: TrafficNetwork, lanes: list[LaneState], junction: int, phase: int,
               duration: float, rng: np.random.Generator,
               delta: LaneDelta | None = None) -> LaneDelta:
    """Run one green phase of ``junction``, mutating ``lanes`` in place."""
    jn = net.junction(junction)
    if not 0 <= phase < jn.n_phases:
        raise InvalidReference(f"junction {junction} has no phase {phase}")
    if duration <= 0:
        raise ValueError(f"phase duration must be positive, got {duration}")
    if delta is None:
        delta = LaneDelta()
    green = jn.phases[phase].lanes_served

    for lane_id in sorted(green):
        spec = net.lanes[lane_id]
        st = lanes[lane_id]
        cap = service_capacity(spec.service_rate, duration)
        st.offered_this_cycle += cap
        n_dep = min(st.count, cap)
        st.count -= n_dep
        st.departures_this_cycle += n_dep
        _bump(delta.departures, lane_id, n_dep)
        route_cars(net, lanes, lane_id, n_dep, rng, delta)

    for lane_id in jn.incoming_lanes:
        spec = net.lanes[lane_id]
        if spec.kind is not LaneKind.EXTERNAL:
            continue
        k = sample_poisson_arrivals(spec.arrival_rate, duration, rng)
        if not k:
            continue
        if lane_id in green:
            lanes[lane_id].passed_this_cycle += k
            _bump(delta.passed_through, lane_id, k)
            route_cars(net, lanes, lane_id, k, rng, delta)
        else:
            _admit(net, lanes, lane_id, k, delta)
    return delta


@dataclass
class CycleReport:
    cycle: int
    before: np.ndarray
    arrivals: np.ndarray
    departures: np.ndarray
    blocked: np.ndarray
    passed_through: np.ndarray
    offered: np.ndarray
    after: np.ndarray
    routed: dict[tuple[int, int | None], int]

    def conservation_residual(self) -> np.ndarray:
        return self.after - self.before - self.arrivals + self.departures

    def rows(self, net: TrafficNetwork) -> Iterable[tuple]:
        for ln in net.lanes:
            i = ln.id
            yield (self.cycle, ln.junction, i, int(self.before[i]), int(self.arrivals[i]),
                   int(self.departures[i]), int(self.blocked[i]), int(self.after[i]))


def advance_cycle(net: TrafficNetwork, lanes: list[LaneState], schedule: GreenSchedule,
                  rng: np.random.Generator, cycle: int = 0) -> CycleReport:
    """Run every junction's phases once, in round-robin order, junctions in index order."""
    before = np.array([st.count for st in lanes], dtype=np.int64)
    for st in lanes:
        st.reset_cycle()
    delta = LaneDelta()
    for jn in net.junctions:
        for ph in jn.phases:
            step_phase(net, lanes, jn.id, ph.index, schedule.duration(jn.id, ph.index), rng, delta)

    def col(attr):
        return np.array([getattr(st, attr) for st in lanes], dtype=np.int64)

    return CycleReport(
        cycle=cycle,
        before=before,
        arrivals=col("arrivals_this_cycle"),
        departures=col("departures_this_cycle"),
        blocked=col("blocked_this_cycle"),
        passed_through=col("passed_this_cycle"),
        offered=col("offered_this_cycle"),
        after=col("count"),
        routed=delta.routed,
    )


class TrafficSimulator:
    """Owns the mutable lane states and clock of one simulation run."""

    def __init__(self, net: TrafficNetwork, rng: np.random.Generator,
                 counts: Sequence[int] | None = None):
        self.net = net
        self.rng = rng
        self.lanes = initial_lane_states(net, counts)
        self.clock = SimClock()

    @property
    def counts(self) -> np.ndarray:
        return np.array([st.count for st in self.lanes], dtype=np.int64)

    def advance(self, schedule: GreenSchedule) -> CycleReport:
        rep = advance_cycle(self.net, self.lanes, schedule, self.rng, self.clock.cycle_index)
        self.clock.t += max(schedule.cycle_time(self.net, jn.id) for jn in self.net.junctions)
        self.clock.cycle_index += 1
        return rep


def write_cycle_csv(reports: Iterable[CycleReport], net: TrafficNetwork, fh,
                    header: bool = True) -> None:
    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow(CYCLE_CSV_HEADER)
    for rep in reports:
        w.writerows(rep.rows(net))


# --- expected drift -------------------------------------------------------------

def _check_probs(occupancy_probs: Mapping[int, float]) -> None:
    for k, p in occupancy_probs.items():
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"occupancy probability for lane {k} outside [0,1]: {p}")


def expected_queue_drift(net: TrafficNetwork, lane: int, schedule: GreenSchedule,
                         occupancy_probs: Mapping[int, float]) -> float:
    """Closed-form expected per-cycle change of a lane's queue.

    External: ``r (T_c - t_g) - mu P(N>0) t_g``. Internal: the sum over upstream
    lanes of ``alpha (mu_l P(N_l>0) + r_l) t_g(l)`` minus the own departures term,
    where ``r_l t_g(l)`` is the external traffic an upstream lane forwards
    unqueued during its own green (zero for internal upstream lanes).
    """
    _check_probs(occupancy_probs)
    spec = net.lane(lane)
    jn = net.junction(spec.junction)
    t_own = schedule.duration(jn.id, jn.phase_of(lane))
    out = spec.service_rate * occupancy_probs.get(lane, 0.0) * t_own
    if spec.kind is LaneKind.EXTERNAL:
        return spec.arrival_rate * (schedule.cycle_time(net, jn.id) - t_own) - out
    inflow = 0.0
    for up, alpha in spec.feeders:
        up_spec = net.lane(up)
        up_j = net.junction(up_spec.junction)
        t_up = schedule.duration(up_j.id, up_j.phase_of(up))
        rate = up_spec.service_rate * occupancy_probs.get(up, 0.0)
        if up_spec.kind is LaneKind.EXTERNAL:
            rate += up_spec.arrival_rate
        inflow += alpha * rate * t_up
    return inflow - out


def drift_sign_condition(net: TrafficNetwork, lane: int, occupancy_probs: Mapping[int, float],
                         alpha_weighted: bool = False, via: int | None = None) -> float:
    """Coefficient ``r - v + P(N>0) v`` of the lane's green time in the expected cost.

    Negative means lengthening the green time lowers the expected cost. With
    ``alpha_weighted`` the occupancy term is scaled by the turning probability
    into ``via`` (default: the first downstream lane).
    """
    _check_probs(occupancy_probs)
    spec = net.lane(lane)
    if spec.kind is not LaneKind.EXTERNAL:
        raise NotImplementedError("sign condition is only derived for externally fed lanes")
    v = spec.service_rate
    occ = occupancy_probs.get(lane, 0.0) * v
    if alpha_weighted:
        down = dict(net.downstream.get(lane, ()))
        if not down:
            raise ValueError(f"lane {lane} has no downstream lane to weight by")
        key = next(iter(sorted(down))) if via is None else via
        occ *= down[key]
    return spec.arrival_rate - v + occ


def empirical_occupancy(reports: Sequence[CycleReport]) -> dict[int, float]:
    """P(N>0) per lane as the fraction of offered green service actually used.

    Departures are the integral of ``mu * 1[N>0]`` over green time, so
    departures / (mu * t_g) is the share of green time the queue was non-empty.
    """
    dep = sum(r.departures for r in reports)
    off = sum(r.offered for r in reports)
    return {i: (float(dep[i] / off[i]) if off[i] else 0.0) for i in range(len(dep))}


def drift_sign_experiment(arrival_rate: float, service_rate: float, p_occupied: float,
                          green_time: float, cycles: int,
                          rng: np.random.Generator) -> tuple[float, float]:
    """Simulate the neighborhood occupancy change attributable to one green window.

    Per window: ``Poisson(r t)`` arrivals are charged to the lane, the full
    saturation discharge ``round(v t)`` is removed from it, and each discharged
    car lands in a downstream queue of the neighborhood with probability
    ``p_occupied``. Returns (mean change per window, standard error).
    """
    if not 0.0 <= p_occupied <= 1.0:
        raise ValueError(f"p_occupied outside [0,1]: {p_occupied}")
    cap = service_capacity(service_rate, green_time)
    arrivals = rng.poisson(arrival_rate * green_time, size=cycles)
    delivered = rng.binomial(cap, p_occupied, size=cycles)
    change = arrivals - cap + delivered
    se = float(change.std(ddof=1) / math.sqrt(cycles)) if cycles > 1 else float("nan")
    return float(change.mean()), se
