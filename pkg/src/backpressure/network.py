"""Discrete-time queuing-network state model.

A network is a set of *movements* ``(l, m)``: vehicles queued on link ``l``
waiting to cross the intersection at the end of ``l`` towards link ``m``.
One time slot advances every queue by the conservation update

    q[l,m](t+1) = q[l,m] + r[l,m] * sum_k u[k,l] s[k,l] - u[l,m] s[l,m] + e[l,m]

with ``s = min(q, c)`` the slot throughput, ``u`` the 0/1 activation and
``e`` the exogenous inflow.  Served vehicles that reach a link with no
outgoing movements leave the network.

Queues are continuous quantities.  A :class:`NetworkSpec` is immutable once
built; its numpy views (:attr:`NetworkSpec.arrays`) are computed lazily and
shared read-only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

TOL = 1e-9

Link = str


class MovementId(NamedTuple):
    upstream_link: Link
    downstream_link: Link

    def __str__(self) -> str:
        return f"{self.upstream_link}->{self.downstream_link}"


class SpecError(ValueError):
    """Raised when a network specification violates its invariants."""


class ActivationError(ValueError):
    """Raised when an activation does not match exactly one phase per intersection."""


@dataclass(frozen=True)
class CompiledArrays:
    """Index-based view of a :class:`NetworkSpec` used by the hot loops."""

    capacity: np.ndarray       # (M,)
    weight: np.ndarray         # (M,)
    routing: np.ndarray        # (M,)
    inflow_mean: np.ndarray    # (M,)
    up: np.ndarray             # (M,) link index of upstream link
    down: np.ndarray           # (M,) link index of downstream link
    n_links: int
    is_sink: np.ndarray        # (M,) bool, downstream link has no movements
    clamp_mask: np.ndarray     # (M,) bool
    clamp_value: np.ndarray    # (M,)
    phase_matrix: np.ndarray   # (P, M) 0/1 membership
    phase_capacity: np.ndarray  # (P,) total static capacity of each phase
    phase_slots: np.ndarray    # (I, Pmax) phase indices, -1 padded
    n_intersections: int


@dataclass(frozen=True)
class NetworkSpec:
    """Static network topology and parameters.

    ``phases`` maps an intersection name to its ordered list of activation
    sets; each activation set is a tuple of movements served together.  The
    order is the canonical order used for tie-breaking and fixed cycles.
    """

    movements: Tuple[MovementId, ...]
    capacity: Mapping[MovementId, float]
    weight: Mapping[MovementId, float]
    routing: Mapping[MovementId, float]
    inflow_mean: Mapping[MovementId, float]
    phases: Mapping[str, Tuple[Tuple[MovementId, ...], ...]]
    clamped_queues: Mapping[MovementId, float] = field(default_factory=dict)
    inflow_kind: str = "deterministic"
    link_class: Mapping[Link, str] = field(default_factory=dict)
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "movements", tuple(MovementId(*m) for m in self.movements))
        self.validate()

    # -- invariants -------------------------------------------------------
    def validate(self) -> None:
        movs = self.movements
        if len(set(movs)) != len(movs):
            raise SpecError("duplicate movement ids")
        if not movs:
            raise SpecError("network has no movements")
        mset = set(movs)
        for name, table in (("capacity", self.capacity), ("weight", self.weight),
                            ("routing", self.routing)):
            missing = [m for m in movs if m not in table]
            if missing:
                raise SpecError(f"{name} missing for {missing[:3]}")
        for m in movs:
            if not self.capacity[m] >= 0:
                raise SpecError(f"negative capacity on {m}")
            if not self.weight[m] > 0:
                raise SpecError(f"non-positive weight on {m}")
            r = self.routing[m]
            if not (-TOL <= r <= 1 + TOL):
                raise SpecError(f"routing rate {r} outside [0, 1] on {m}")
            if self.inflow_mean.get(m, 0.0) < 0:
                raise SpecError(f"negative inflow mean on {m}")
        sums: Dict[Link, float] = {}
        for m in movs:
            sums[m.upstream_link] = sums.get(m.upstream_link, 0.0) + self.routing[m]
        for link, total in sums.items():
            if abs(total - 1.0) > TOL:
                raise SpecError(f"routing rates out of link {link!r} sum to {total}")
        covered = set()
        for name, plist in self.phases.items():
            if not plist:
                raise SpecError(f"intersection {name!r} has no phases")
            for ph in plist:
                if not ph:
                    raise SpecError(f"empty phase at intersection {name!r}")
                for m in ph:
                    if m not in mset:
                        raise SpecError(f"phase at {name!r} references unknown movement {m}")
                    covered.add(MovementId(*m))
        uncovered = mset - covered
        if uncovered:
            raise SpecError(f"movements not in any phase: {sorted(uncovered)[:3]}")
        owner: Dict[MovementId, str] = {}
        for name, plist in self.phases.items():
            for ph in plist:
                for m in ph:
                    if owner.setdefault(MovementId(*m), name) != name:
                        raise SpecError(f"movement {m} belongs to two intersections")
        if self.inflow_kind not in ("deterministic", "poisson"):
            raise SpecError(f"unknown inflow kind {self.inflow_kind!r}")

    # -- indexing ---------------------------------------------------------
    @cached_property
    def index(self) -> Dict[MovementId, int]:
        return {m: i for i, m in enumerate(self.movements)}

    @cached_property
    def links(self) -> Tuple[Link, ...]:
        seen: Dict[Link, None] = {}
        for m in self.movements:
            seen.setdefault(m.upstream_link)
            seen.setdefault(m.downstream_link)
        return tuple(seen)

    @cached_property
    def intersections(self) -> Tuple[str, ...]:
        return tuple(self.phases)

    @cached_property
    def movement_intersection(self) -> Dict[MovementId, str]:
        out = {}
        for name, plist in self.phases.items():
            for ph in plist:
                for m in ph:
                    out[MovementId(*m)] = name
        return out

    @cached_property
    def arrays(self) -> CompiledArrays:
        movs = self.movements
        link_idx = {lk: i for i, lk in enumerate(self.links)}
        up = np.array([link_idx[m.upstream_link] for m in movs], dtype=np.intp)
        down = np.array([link_idx[m.downstream_link] for m in movs], dtype=np.intp)
        has_out = np.zeros(len(link_idx), dtype=bool)
        has_out[up] = True
        cap = np.array([self.capacity[m] for m in movs], dtype=float)
        phase_rows = []
        slots = []
        for name in self.intersections:
            row = []
            for ph in self.phases[name]:
                row.append(len(phase_rows))
                phase_rows.append([self.index[MovementId(*m)] for m in ph])
            slots.append(row)
        pmat = np.zeros((len(phase_rows), len(movs)))
        for p, members in enumerate(phase_rows):
            pmat[p, members] = 1.0
        width = max(len(r) for r in slots)
        pslots = np.full((len(slots), width), -1, dtype=np.intp)
        for i, r in enumerate(slots):
            pslots[i, :len(r)] = r
        clamp_mask = np.array([m in self.clamped_queues for m in movs])
        clamp_value = np.array([self.clamped_queues.get(m, 0.0) for m in movs], dtype=float)
        arrays = CompiledArrays(
            capacity=cap,
            weight=np.array([self.weight[m] for m in movs], dtype=float),
            routing=np.array([self.routing[m] for m in movs], dtype=float),
            inflow_mean=np.array([self.inflow_mean.get(m, 0.0) for m in movs], dtype=float),
            up=up,
            down=down,
            n_links=len(link_idx),
            is_sink=~has_out[down],
            clamp_mask=clamp_mask,
            clamp_value=clamp_value,
            phase_matrix=pmat,
            phase_capacity=pmat @ cap,
            phase_slots=pslots,
            n_intersections=len(slots),
        )
        for a in (arrays.capacity, arrays.weight, arrays.routing, arrays.inflow_mean,
                  arrays.phase_matrix, arrays.phase_capacity, arrays.clamp_value):
            a.setflags(write=False)
        return arrays

    def with_weights(self, weight: Mapping[MovementId, float]) -> "NetworkSpec":
        return _replace(self, weight=dict(weight))

    def with_inflow(self, inflow_mean: Mapping[MovementId, float],
                    kind: Optional[str] = None) -> "NetworkSpec":
        return _replace(self, inflow_mean=dict(inflow_mean),
                        inflow_kind=kind or self.inflow_kind)

    def vector(self, values: Mapping[MovementId, float], default: float = 0.0) -> np.ndarray:
        return np.array([values.get(m, default) for m in self.movements], dtype=float)

    def as_map(self, vec: Sequence[float]) -> Dict[MovementId, float]:
        return {m: float(v) for m, v in zip(self.movements, vec)}

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        ms = [str(m) for m in self.movements]
        return {
            "movements": [[m.upstream_link, m.downstream_link] for m in self.movements],
            "capacity": {s: self.capacity[m] for s, m in zip(ms, self.movements)},
            "weight": {s: self.weight[m] for s, m in zip(ms, self.movements)},
            "routing": {s: self.routing[m] for s, m in zip(ms, self.movements)},
            "inflow_mean": {str(m): v for m, v in self.inflow_mean.items() if v},
            "inflow_kind": self.inflow_kind,
            "phases": {name: [[str(m) for m in ph] for ph in plist]
                       for name, plist in self.phases.items()},
            "clamped_queues": {str(m): v for m, v in self.clamped_queues.items()},
            "link_class": dict(self.link_class),
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        movs = [MovementId(a, b) for a, b in d["movements"]]
        by_name = {str(m): m for m in movs}

        def table(key):
            try:
                return {by_name[k]: float(v) for k, v in d.get(key, {}).items()}
            except KeyError as exc:
                raise SpecError(f"{key} references unknown movement {exc.args[0]}") from None

        phases = {}
        for name, plist in d["phases"].items():
            try:
                phases[name] = tuple(tuple(by_name[s] for s in ph) for ph in plist)
            except KeyError as exc:
                raise SpecError(f"phase references unknown movement {exc.args[0]}") from None
        return cls(
            movements=tuple(movs),
            capacity=table("capacity"),
            weight=table("weight"),
            routing=table("routing"),
            inflow_mean=table("inflow_mean"),
            phases=phases,
            clamped_queues=table("clamped_queues"),
            inflow_kind=d.get("inflow_kind", "deterministic"),
            link_class=dict(d.get("link_class", {})),
            meta=dict(d.get("meta", {})),
        )

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "NetworkSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _replace(spec: NetworkSpec, **changes) -> NetworkSpec:
    kw = dict(
        movements=spec.movements, capacity=spec.capacity, weight=spec.weight,
        routing=spec.routing, inflow_mean=spec.inflow_mean, phases=spec.phases,
        clamped_queues=spec.clamped_queues, inflow_kind=spec.inflow_kind,
        link_class=spec.link_class, meta=spec.meta,
    )
    kw.update(changes)
    return NetworkSpec(**kw)


@dataclass(frozen=True)
class QueueState:
    """Queue sizes ``q`` (ordered as ``spec.movements``) at time ``t``."""

    q: np.ndarray
    t: int = 0

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        if q.ndim != 1:
            raise ValueError("queue vector must be one-dimensional")
        if np.any(q < -TOL):
            raise ValueError("queue sizes must be nonnegative")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @classmethod
    def initial(cls, spec: NetworkSpec, q0=None) -> "QueueState":
        """Initial state; ``q0`` is a mapping, a vector, a scalar or ``None`` (empty)."""
        n = len(spec.movements)
        if q0 is None:
            q = np.zeros(n)
        elif isinstance(q0, Mapping):
            q = spec.vector(q0)
        else:
            q = np.broadcast_to(np.asarray(q0, dtype=float), (n,)).copy()
        a = spec.arrays
        q = np.where(a.clamp_mask, a.clamp_value, q)
        return cls(q, 0)

    def as_map(self, spec: NetworkSpec) -> Dict[MovementId, float]:
        return spec.as_map(self.q)


def throughput(q, c):
    """Vehicles able to cross in one slot: ``min(q, c)``.  Works elementwise."""
    return np.minimum(q, c)


def activation_from_phases(spec: NetworkSpec, chosen: Sequence[int]) -> np.ndarray:
    """0/1 activation vector from one chosen global phase index per intersection."""
    return spec.arrays.phase_matrix[np.asarray(chosen, dtype=np.intp)].sum(axis=0)


def check_activation(spec: NetworkSpec, u: np.ndarray) -> None:
    """Raise :class:`ActivationError` unless ``u`` matches one phase per intersection.

    An intersection with every movement off (all red) is also accepted.
    """
    a = spec.arrays
    u = np.asarray(u, dtype=float)
    if u.shape != (len(spec.movements),) or np.any((u != 0) & (u != 1)):
        raise ActivationError("activation must be a 0/1 vector over movements")
    for i in range(a.n_intersections):
        slots = a.phase_slots[i][a.phase_slots[i] >= 0]
        members = a.phase_matrix[slots].max(axis=0) > 0
        on = u[members]
        if not on.any():
            continue
        if not any(np.array_equal(on, a.phase_matrix[p][members]) for p in slots):
            raise ActivationError(
                f"activation at intersection {spec.intersections[i]!r} matches no phase")


def step(state: QueueState, u, inflow, spec: NetworkSpec, capacity: Optional[np.ndarray] = None,
         validate: bool = True) -> QueueState:
    """Advance the network by one slot.

    ``u`` and ``inflow`` are vectors in movement order (or mappings).
    ``capacity`` overrides the static capacities for this slot (incident
    overlays).  Clamped queues are reset after the update.
    """
    a = spec.arrays
    if isinstance(u, Mapping):
        u = spec.vector(u)
    if isinstance(inflow, Mapping):
        inflow = spec.vector(inflow)
    u = np.asarray(u, dtype=float)
    e = np.asarray(inflow, dtype=float)
    if validate:
        check_activation(spec, u)
        if np.any(e < 0):
            raise ValueError("exogenous inflow must be nonnegative")
    c = a.capacity if capacity is None else capacity
    s = u * np.minimum(state.q, c)
    arrivals = np.bincount(a.down, weights=s, minlength=a.n_links)
    q = state.q + a.routing * arrivals[a.up] - s + e
    # outflow never exceeds the queue, so only rounding can go below zero
    np.maximum(q, 0.0, out=q)
    if a.clamp_mask.any():
        q[a.clamp_mask] = a.clamp_value[a.clamp_mask]
    return QueueState(q, state.t + 1)


def sink_outflow(state: QueueState, u, spec: NetworkSpec, capacity=None) -> float:
    """Vehicles leaving the network when ``u`` is applied to ``state``."""
    a = spec.arrays
    c = a.capacity if capacity is None else capacity
    s = np.asarray(u, dtype=float) * np.minimum(state.q, c)
    return float(s[a.is_sink].sum())


def lyapunov_value(state, weights) -> float:
    """Weighted quadratic objective ``0.5 * sum(gamma * q**2)``."""
    q = state.q if isinstance(state, QueueState) else np.asarray(state, dtype=float)
    g = np.asarray(weights, dtype=float)
    return float(0.5 * np.sum(g * q * q))


def single_queue_spec(capacity: float, inflow: float = 0.0) -> NetworkSpec:
    """One isolated movement draining to a sink; handy for tests and demos."""
    m = MovementId("in", "out")
    return NetworkSpec(
        movements=(m,), capacity={m: capacity}, weight={m: 1.0}, routing={m: 1.0},
        inflow_mean={m: inflow}, phases={"x": ((m,),)},
    )


def movements_by_link(spec: NetworkSpec) -> Dict[Link, List[MovementId]]:
    out: Dict[Link, List[MovementId]] = {}
    for m in spec.movements:
        out.setdefault(m.upstream_link, []).append(m)
    return out


def iter_phases(spec: NetworkSpec) -> Iterable[Tuple[str, int, Tuple[MovementId, ...]]]:
    for name, plist in spec.phases.items():
        for j, ph in enumerate(plist):
            yield name, j, ph
