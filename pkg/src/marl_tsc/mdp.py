"""Discretized per-junction observations, actions and the neighborhood cost."""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np

from .network import InvalidReference, TrafficNetwork
from .sim import ACTION_DURATIONS, LaneState


class ConfigError(ValueError):
    pass


class EncodingError(ValueError):
    pass


class OccupancyLevel(IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2


class Action(IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2


@dataclass(frozen=True)
class MdpConfig:
    """Thresholds in car counts and the action -> green-seconds map."""

    d1: int = 5
    d2: int = 10
    action_durations: tuple[int, ...] = ACTION_DURATIONS

    def __post_init__(self):
        if not 0 < self.d1 < self.d2:
            raise ConfigError(f"need 0 < d1 < d2, got d1={self.d1}, d2={self.d2}")
        if len(self.action_durations) != 3 or any(d <= 0 for d in self.action_durations):
            raise ConfigError(f"need three positive durations, got {self.action_durations}")
        if len(set(self.action_durations)) != 3:
            raise ConfigError("action durations must be distinct")

    @property
    def n_actions(self) -> int:
        return len(self.action_durations)

    def duration(self, action: int) -> int:
        return self.action_durations[action]


@dataclass(frozen=True)
class DiscretizedState:
    occupancies: tuple[int, ...]
    active_phase: int


@dataclass(frozen=True)
class CostSignal:
    value: float
    junction: int
    cycle: int = 0


def discretize_lane(count: float, d1: float, d2: float) -> OccupancyLevel:
    if not d1 < d2:
        raise ConfigError(f"need d1 < d2, got d1={d1}, d2={d2}")
    if count < d1:
        return OccupancyLevel.LOW
    if count < d2:
        return OccupancyLevel.MEDIUM
    return OccupancyLevel.HIGH


def _counts(lanes: Sequence[LaneState] | np.ndarray) -> Sequence[int]:
    if isinstance(lanes, np.ndarray):
        return lanes
    return [st.count for st in lanes]


def observe_state(net: TrafficNetwork, lanes, junction: int, active_phase: int,
                  d1: float, d2: float) -> DiscretizedState:
    """``lanes`` may be the simulator's LaneState list or a raw count array."""
    jn = net.junction(junction)
    if not 0 <= active_phase < jn.n_phases:
        raise InvalidReference(f"junction {junction} has no phase {active_phase}")
    counts = _counts(lanes)
    occ = tuple(int(discretize_lane(counts[i], d1, d2)) for i in jn.incoming_lanes)
    return DiscretizedState(occ, active_phase)


def neighborhood_cost(net: TrafficNetwork, lanes, junction: int, d1: float, d2: float,
                      cycle: int = 0) -> CostSignal:
    """Average summed discretized occupancy over the junctions in N_j.

    ``lanes`` must describe the post-action state.
    """
    counts = _counts(lanes)
    nb = net.neighborhoods[junction]
    total = 0
    for k in nb:
        for i in net.junction(k).incoming_lanes:
            total += int(discretize_lane(counts[i], d1, d2))
    return CostSignal(total / len(nb), junction, cycle)


def max_cost(net: TrafficNetwork, junction: int) -> float:
    nb = net.neighborhoods[junction]
    return sum(2 * net.junction(k).n_lanes for k in nb) / len(nb)


def n_states(n_lanes: int, n_phases: int) -> int:
    return 3 ** n_lanes * n_phases


def state_index(state: DiscretizedState, n_lanes: int, n_phases: int) -> int:
    """Mixed-radix code: occupancies as base-3 digits (first lane most significant), phase last."""
    if len(state.occupancies) != n_lanes:
        raise EncodingError(f"expected {n_lanes} occupancies, got {len(state.occupancies)}")
    idx = 0
    for q in state.occupancies:
        if q not in (0, 1, 2):
            raise EncodingError(f"occupancy {q} not in {{0,1,2}}")
        idx = idx * 3 + int(q)
    if not 0 <= state.active_phase < n_phases:
        raise EncodingError(f"phase {state.active_phase} outside [0, {n_phases})")
    return idx * n_phases + state.active_phase


def state_decode(index: int, n_lanes: int, n_phases: int) -> DiscretizedState:
    if not 0 <= index < n_states(n_lanes, n_phases):
        raise EncodingError(f"state index {index} outside [0, {n_states(n_lanes, n_phases)})")
    idx, phase = divmod(int(index), n_phases)
    occ = []
    for _ in range(n_lanes):
        idx, q = divmod(idx, 3)
        occ.append(q)
    return DiscretizedState(tuple(reversed(occ)), phase)
