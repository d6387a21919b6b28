"""Signal scheduling policies.

Generalized backpressure scores each movement by

    p[l,m] = (gamma[l,m] q[l,m] - sum_k gamma[m,k] q[m,k] r[m,k]) * c[l,m]

and serves, at every intersection independently, the phase with the largest
summed priority.  ``gamma = 1`` is classical backpressure; ``gamma = 1/c``
weighs queues by their approximate waiting time.

Ties (phase scores within a relative ``1e-9``) go to the phase with the
largest total capacity, then to the lowest phase index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Tuple, Union

import numpy as np

from .network import MovementId, NetworkSpec, QueueState, activation_from_phases

TIE_RTOL = 1e-9

UNIFORM = "uniform"
INVERSE_CAPACITY = "inverse_capacity"
CUSTOM = "custom"


@dataclass(frozen=True)
class Backpressure:
    weight_mode: str = UNIFORM
    custom: Optional[Mapping[MovementId, float]] = None
    name: str = ""

    def __post_init__(self):
        if self.weight_mode not in (UNIFORM, INVERSE_CAPACITY, CUSTOM):
            raise ValueError(f"unknown weight mode {self.weight_mode!r}")
        if not self.name:
            label = {UNIFORM: "bp", INVERSE_CAPACITY: "new", CUSTOM: "custom"}[self.weight_mode]
            object.__setattr__(self, "name", label)


@dataclass(frozen=True)
class FixedCycle:
    """Serve each intersection's phases in order, ``dwell`` slots each.

    ``cycle`` lists phase indices (local to each intersection); ``None`` means
    all phases in canonical order.
    """

    cycle: Optional[Tuple[int, ...]] = None
    dwell: int = 1
    name: str = "fixed"

    def __post_init__(self):
        if self.dwell < 1:
            raise ValueError("dwell must be at least one slot")
        if self.cycle is not None and len(self.cycle) == 0:
            raise ValueError("cycle must not be empty")


@dataclass(frozen=True)
class Alternating:
    """Serve upstream queue 1 on even slots and queue 2 on odd slots (2x1 only)."""

    name: str = "alt"


PolicyKind = Union[Backpressure, FixedCycle, Alternating]


def policy_from_flag(flag: str, custom: Optional[Mapping[MovementId, float]] = None) -> PolicyKind:
    """Map the CLI names ``bp | new | fixed | alt`` (and ``custom``) to a policy."""
    if flag == "bp":
        return Backpressure(UNIFORM)
    if flag == "new":
        return Backpressure(INVERSE_CAPACITY)
    if flag == "fixed":
        return FixedCycle()
    if flag == "alt":
        return Alternating()
    if flag == "custom":
        return Backpressure(CUSTOM, custom=custom)
    raise ValueError(f"unknown policy {flag!r}; expected bp, new, fixed, alt or custom")


def weights_for(spec: NetworkSpec, policy: Backpressure) -> np.ndarray:
    """Per-movement gamma vector for a backpressure policy.

    Custom mode without an explicit map uses the weights stored on the spec.

    Inverse-capacity weights use the static capacities, so capacity overlays
    (incidents) leave gamma untouched.  Zero-capacity movements get weight 1.
    """
    if policy.weight_mode == UNIFORM:
        return np.ones(len(spec.movements))
    if policy.weight_mode == INVERSE_CAPACITY:
        c = spec.arrays.capacity
        return np.where(c > 0, 1.0 / np.where(c > 0, c, 1.0), 1.0)
    if policy.custom is None:
        return spec.arrays.weight.copy()
    g = spec.vector(policy.custom, default=np.nan)
    if np.any(np.isnan(g)) or np.any(g <= 0):
        raise ValueError("custom weights must be positive and cover every movement")
    return g


def priorities(state, spec: NetworkSpec, weight=None, capacity=None) -> np.ndarray:
    """Generalized backpressure priorities, one per movement.

    ``weight`` defaults to the network's own weights.  Movements ending at a
    sink link have an empty downstream term.
    """
    a = spec.arrays
    q = state.q if isinstance(state, QueueState) else np.asarray(state, dtype=float)
    g = a.weight if weight is None else np.asarray(weight, dtype=float)
    c = a.capacity if capacity is None else capacity
    gq = g * q
    downstream = np.bincount(a.up, weights=gq * a.routing, minlength=a.n_links)
    return (gq - downstream[a.down]) * c


def phase_scores(p: np.ndarray, spec: NetworkSpec) -> np.ndarray:
    return spec.arrays.phase_matrix @ p


def select_phases(p: np.ndarray, spec: NetworkSpec) -> np.ndarray:
    """Global index of the winning phase at every intersection."""
    a = spec.arrays
    scores = phase_scores(p, spec)
    slots = a.phase_slots
    valid = slots >= 0
    grid = np.where(valid, scores[np.where(valid, slots, 0)], -np.inf)
    best = grid.max(axis=1, keepdims=True)
    scale = np.where(valid, np.abs(grid), 0.0).max(axis=1, keepdims=True)
    tied = valid & (grid >= best - TIE_RTOL * scale)
    capgrid = np.where(tied, a.phase_capacity[np.where(valid, slots, 0)], -np.inf)
    col = np.argmax(capgrid, axis=1)
    return slots[np.arange(len(slots)), col]


def backpressure_select(p: np.ndarray, spec: NetworkSpec) -> np.ndarray:
    """Activation vector maximizing summed priority per intersection."""
    return activation_from_phases(spec, select_phases(p, spec))


def fixed_cycle_select(t: int, kind: FixedCycle, spec: NetworkSpec) -> np.ndarray:
    if t < 0:
        raise ValueError("time index must be nonnegative")
    a = spec.arrays
    slot = t // kind.dwell
    counts = (a.phase_slots >= 0).sum(axis=1)
    rows = np.arange(a.n_intersections)
    if kind.cycle is None:
        cols = slot % counts
    else:
        cols = np.empty(a.n_intersections, dtype=np.intp)
        for i, n in enumerate(counts):
            # phases beyond an intersection's count are skipped
            cyc = [j for j in kind.cycle if j < n] or [0]
            cols[i] = cyc[slot % len(cyc)]
    return activation_from_phases(spec, a.phase_slots[rows, cols])


def is_two_by_one(spec: NetworkSpec) -> bool:
    return spec.meta.get("topology") == "2x1"


def alternating_select(t: int, spec: NetworkSpec) -> np.ndarray:
    """Queue 1 on even ``t``, queue 2 on odd ``t``."""
    if not is_two_by_one(spec):
        raise ValueError("the alternating schedule is only defined on the 2x1 junction")
    a = spec.arrays
    chosen = []
    for i, name in enumerate(spec.intersections):
        local = a.phase_slots[i][a.phase_slots[i] >= 0]
        chosen.append(local[t % 2] if name == "merge" else local[0])
    return activation_from_phases(spec, chosen)


class Controller:
    """Binds a policy to a network; ``decide`` returns ``(u, p)`` for one slot."""

    def __init__(self, spec: NetworkSpec, policy: PolicyKind):
        self.spec = spec
        self.policy = policy
        if isinstance(policy, Backpressure):
            self.weight = weights_for(spec, policy)
        else:
            self.weight = np.ones(len(spec.movements))

    def decide(self, state: QueueState, t: int, capacity=None):
        # priorities are recorded for every policy so runs can be compared
        p = priorities(state, self.spec, self.weight, capacity)
        pol = self.policy
        if isinstance(pol, Backpressure):
            u = backpressure_select(p, self.spec)
        elif isinstance(pol, FixedCycle):
            u = fixed_cycle_select(t, pol, self.spec)
        else:
            u = alternating_select(t, self.spec)
        return u, p
