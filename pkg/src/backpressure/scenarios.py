"""Manhattan-grid networks, origin-destination demand and derived scenarios.

Grid nodes are ``"i,j"`` for ``0 <= i < rows`` and ``0 <= j < cols``.  A ring
of outer nodes (``i`` or ``j`` equal to -1, ``rows`` or ``cols``) surrounds the
grid: every boundary node gets one entry link from, and one exit link to,
each outer neighbour.  Vehicles enter on entry links and leave on exit
links, which carry no movements.  Link ``a -> b`` is named ``"a>b"``.

Each link ending at a grid node spawns left, straight and right movements
(no U-turns).  Link capacity is split 1:2:1 between them, and every
incoming link forms its own phase.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .engine import CapacityOverlay
from .network import MovementId, NetworkSpec

log = logging.getLogger(__name__)

Node = Tuple[int, int]
ODMap = Dict[Tuple[str, str], float]

ARTERIAL = "arterial"
SECONDARY = "secondary"
STEPS_PER_HOUR = 120  # at 30 s per slot


def node_name(n: Node) -> str:
    return f"{n[0]},{n[1]}"


def link_name(a: Node, b: Node) -> str:
    return f"{node_name(a)}>{node_name(b)}"


def parse_link(name: str) -> Tuple[Node, Node]:
    a, b = name.split(">")
    pa, pb = a.split(","), b.split(",")
    return (int(pa[0]), int(pa[1])), (int(pb[0]), int(pb[1]))


@dataclass(frozen=True)
class GridConfig:
    rows: int = 10
    cols: int = 10
    arterial_spacing: int = 5
    capacity_ratio: float = 4.0
    base_capacity: float = 5.0
    time_step_seconds: float = 30.0

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("a Manhattan grid needs at least 2 rows and 2 columns")
        if self.arterial_spacing < 0:
            raise ValueError("arterial spacing must be nonnegative")
        if self.capacity_ratio < 1:
            raise ValueError("capacity ratio must be at least 1")
        if not self.base_capacity > 0 or not self.time_step_seconds > 0:
            raise ValueError("capacity and time step must be positive")

    def inside(self, n: Node) -> bool:
        return 0 <= n[0] < self.rows and 0 <= n[1] < self.cols

    def is_arterial(self, a: Node, b: Node) -> bool:
        h = self.arterial_spacing
        if h == 0:
            return False
        # horizontal links run along row a[0], vertical ones along column a[1]
        line = a[0] if a[0] == b[0] else a[1]
        return line % h == 0

    def link_capacity(self, a: Node, b: Node) -> float:
        return self.base_capacity * (self.capacity_ratio if self.is_arterial(a, b) else 1.0)

    def speed(self, a: Node, b: Node) -> float:
        """Free-flow speed relative to a secondary road."""
        return self.capacity_ratio if self.is_arterial(a, b) else 1.0

    def outer_nodes(self) -> List[Node]:
        R, C = self.rows, self.cols
        return ([(-1, j) for j in range(C)] + [(i, C) for i in range(R)]
                + [(R, j) for j in reversed(range(C))] + [(i, -1) for i in reversed(range(R))])

    def directed_links(self) -> List[Tuple[Node, Node]]:
        out = []
        for i in range(-1, self.rows + 1):
            for j in range(-1, self.cols + 1):
                a = (i, j)
                for b in ((i + 1, j), (i, j + 1)):
                    # two outer nodes are never joined
                    if self.inside(a) or self.inside(b):
                        out += [(a, b), (b, a)]
        return out


def turn_of(a: Node, b: Node, c: Node) -> str:
    d1 = (b[0] - a[0], b[1] - a[1])
    d2 = (c[0] - b[0], c[1] - b[1])
    if d1 == d2:
        return "straight"
    if d1 == (-d2[0], -d2[1]):
        return "uturn"
    cross = d1[0] * d2[1] - d1[1] * d2[0]
    return "left" if cross > 0 else "right"


TURN_SHARE = {"left": 0.25, "straight": 0.5, "right": 0.25}


def build_manhattan(cfg: GridConfig) -> NetworkSpec:
    """Grid network with uniform routing and no demand (see :func:`build_scenario`)."""
    links = cfg.directed_links()
    out_of: Dict[Node, List[Node]] = {}
    for a, b in links:
        out_of.setdefault(a, []).append(b)
    movements, capacity, phases = [], {}, {}
    link_class = {}
    for a, b in links:
        link_class[link_name(a, b)] = ARTERIAL if cfg.is_arterial(a, b) else SECONDARY
    for a, b in sorted(links, key=lambda ab: (ab[1], ab[0])):
        if not cfg.inside(b):
            continue
        base = cfg.link_capacity(a, b)
        approach = []
        for c in sorted(out_of[b]):
            turn = turn_of(a, b, c)
            if turn == "uturn":
                continue
            m = MovementId(link_name(a, b), link_name(b, c))
            movements.append(m)
            capacity[m] = base * TURN_SHARE[turn]
            approach.append(m)
        phases.setdefault(node_name(b), []).append(tuple(approach))
    routing = {}
    for ph in (p for plist in phases.values() for p in plist):
        for m in ph:
            routing[m] = 1.0 / len(ph)
    return NetworkSpec(
        movements=tuple(movements),
        capacity=capacity,
        weight={m: 1.0 for m in movements},
        routing=routing,
        inflow_mean={},
        phases={k: tuple(v) for k, v in phases.items()},
        inflow_kind="poisson",
        link_class=link_class,
        meta={"topology": "manhattan", "grid": asdict(cfg)},
    )


@dataclass(frozen=True)
class DemandConfig:
    """``od_mean_scale=None`` calibrates the scale with :func:`calibrate_scale`."""

    rho: float = 1.0
    od_mean_scale: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("demand magnitude rho must be nonnegative")
        if self.od_mean_scale is not None and not self.od_mean_scale > 0:
            raise ValueError("od_mean_scale must be positive")


def od_pairs(cfg: GridConfig) -> List[Tuple[str, str]]:
    outer = [node_name(n) for n in cfg.outer_nodes()]
    return [(o, d) for o in outer for d in outer if o != d]


def sample_od_demand(cfg: GridConfig, dcfg: DemandConfig, scale: Optional[float] = None) -> ODMap:
    """Mean flow per slot for every ordered pair of outer nodes: ``rho * scale * Exp(1)``."""
    if scale is None:
        scale = dcfg.od_mean_scale if dcfg.od_mean_scale is not None else calibrate_scale(reference_grid(cfg))
    pairs = od_pairs(cfg)
    draws = np.random.default_rng(dcfg.seed).exponential(1.0, size=len(pairs))
    return {p: dcfg.rho * scale * float(x) for p, x in zip(pairs, draws)}


def _node_graph(cfg: GridConfig):
    links = cfg.directed_links()
    nodes = sorted({n for ab in links for n in ab})
    idx = {n: i for i, n in enumerate(nodes)}
    rows = [idx[a] for a, _ in links]
    cols = [idx[b] for _, b in links]
    w = [1.0 / cfg.speed(a, b) for a, b in links]
    g = csr_matrix((w, (rows, cols)), shape=(len(nodes), len(nodes)))
    return nodes, idx, g


def shortest_paths(cfg: GridConfig, origins: Sequence[str]) -> Tuple[List[Node], Dict[Node, int], np.ndarray]:
    nodes, idx, g = _node_graph(cfg)
    src = [idx[_parse_node(o)] for o in origins]
    _, pred = dijkstra(g, directed=True, indices=src, return_predecessors=True)
    return nodes, idx, pred


def _parse_node(s: str) -> Node:
    i, j = s.split(",")
    return int(i), int(j)


@dataclass
class Assignment:
    flow: Dict[MovementId, float]
    routing: Dict[MovementId, float]
    inflow: Dict[MovementId, float]
    n_dropped: int = 0

    def link_flow(self) -> Dict[str, float]:
        out: Dict[str, float] = {}
        for m, f in self.flow.items():
            out[m.upstream_link] = out.get(m.upstream_link, 0.0) + f
        return out


def assign_shortest_paths(spec: NetworkSpec, od: ODMap, cfg: Optional[GridConfig] = None) -> Assignment:
    """All-or-nothing assignment of every OD mean to its free-flow shortest path.

    Routing rates are the share of each link's assigned flow using each of
    its movements; links with no flow route uniformly.  Entry-link movements
    receive the assigned flow as exogenous inflow.
    """
    if cfg is None:
        cfg = GridConfig(**spec.meta["grid"])
    origins = sorted({o for o, _ in od})
    nodes, idx, pred = shortest_paths(cfg, origins)
    row_of = {o: r for r, o in enumerate(origins)}
    flow = {m: 0.0 for m in spec.movements}
    inflow: Dict[MovementId, float] = {}
    dropped = 0
    for (o, d), mean in od.items():
        if o == d:
            continue
        pr = pred[row_of[o]]
        path = [idx[_parse_node(d)]]
        while pr[path[-1]] >= 0:
            path.append(pr[path[-1]])
        if nodes[path[-1]] != _parse_node(o):
            dropped += 1
            continue
        if mean == 0:
            continue
        seq = [nodes[i] for i in reversed(path)]
        for a, b, c in zip(seq, seq[1:], seq[2:]):
            m = MovementId(link_name(a, b), link_name(b, c))
            flow[m] += mean
            if a == seq[0]:
                inflow[m] = inflow.get(m, 0.0) + mean
    if dropped:
        log.warning("dropped %d unreachable OD pairs", dropped)
    by_link: Dict[str, List[MovementId]] = {}
    for m in spec.movements:
        by_link.setdefault(m.upstream_link, []).append(m)
    routing = {}
    for lk, ms in by_link.items():
        total = sum(flow[m] for m in ms)
        for m in ms:
            routing[m] = flow[m] / total if total > 0 else 1.0 / len(ms)
    return Assignment(flow, routing, inflow, dropped)


@lru_cache(maxsize=64)
def _unit_max_load(cfg: GridConfig) -> float:
    spec = build_manhattan(cfg)
    unit = {p: 1.0 for p in od_pairs(cfg)}
    a = assign_shortest_paths(spec, unit, cfg)
    return max(a.flow[m] / spec.capacity[m] for m in spec.movements)


def reference_grid(cfg: GridConfig) -> GridConfig:
    """The 10x10 grid with an arterial every 5 blocks, keeping ``cfg``'s capacities.

    Demand is calibrated once on this grid so that sweeps over the layout
    compare networks under the same OD intensity.
    """
    return replace(cfg, rows=10, cols=10, arterial_spacing=5)


def calibrate_scale(cfg: GridConfig, target_per_rho: float = 0.25) -> float:
    """OD scale at which the busiest movement's expected load is ``rho * target_per_rho``.

    Uses unit OD means (the expectation of the exponential draws), so the
    scale is a deterministic function of the grid.
    """
    return target_per_rho / _unit_max_load(cfg)


def poisson_inflows(means, T: int, seed: int, rho=None) -> np.ndarray:
    """``(T, n)`` independent Poisson draws with per-slot mean ``rho[t] * means``.

    Uses the same generator stream as :func:`backpressure.engine.simulate`, so a
    run with ``seed`` sees exactly these arrivals.
    """
    means = np.asarray(means, dtype=float)
    if np.any(means < 0):
        raise ValueError("inflow means must be nonnegative")
    scale = np.ones(T) if rho is None else np.asarray(rho, dtype=float)
    lam = scale[:, None] * means[None, :]
    out = np.zeros((T, len(means)))
    cols = np.flatnonzero(means > 0)
    out[:, cols] = np.random.default_rng(seed).poisson(lam[:, cols])
    return out


def peak_profile(T: int, rho_max: float = 3.0) -> np.ndarray:
    """Triangular demand multiplier at ``t = 0..T``: 0, rising to ``rho_max`` at ``T/2``, back to 0."""
    if T < 2:
        raise ValueError("peak profile needs T >= 2")
    t = np.arange(T + 1, dtype=float)
    return rho_max * (1.0 - np.abs(2.0 * t / T - 1.0))


@dataclass(frozen=True)
class IncidentSpec:
    link: str
    t_start: int
    t_end: int

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError("incident must end after it starts")


def inject_incident(spec: NetworkSpec, inc: IncidentSpec) -> CapacityOverlay:
    """Overlay zeroing every movement queued on ``inc.link`` during ``[t_start, t_end)``."""
    link = inc.link.upstream_link if isinstance(inc.link, MovementId) else inc.link
    idx = tuple(i for i, m in enumerate(spec.movements) if m.upstream_link == link)
    if not idx:
        raise KeyError(f"unknown link {link!r} (or it carries no movements)")
    return CapacityOverlay(idx, inc.t_start, inc.t_end, link)


def central_link(cfg: GridConfig, arterial: bool = False) -> str:
    """An eastbound link near the grid centre, on an arterial row if requested."""
    i = cfg.rows // 2
    if arterial and cfg.arterial_spacing > 0:
        i = (i // cfg.arterial_spacing) * cfg.arterial_spacing or cfg.arterial_spacing
    elif cfg.arterial_spacing > 0 and i % cfg.arterial_spacing == 0:
        i += 1
    j = cfg.cols // 2 - 1
    return link_name((i, j), (i, j + 1))


# -- scenarios -------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Everything needed to run a grid experiment; serializable to JSON.

    ``profile`` is ``"constant"`` (rho fixed) or ``"peak"`` (triangle over the
    first ``peak_T`` slots, zero afterwards, scaled by ``demand.rho``).
    """

    grid: GridConfig = field(default_factory=GridConfig)
    demand: DemandConfig = field(default_factory=DemandConfig)
    T: int = 500
    profile: str = "constant"
    peak_T: Optional[int] = None
    incident: Optional[IncidentSpec] = None

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("horizon must be positive")
        if self.profile not in ("constant", "peak"):
            raise ValueError(f"unknown demand profile {self.profile!r}")

    def rho_series(self) -> np.ndarray:
        if self.profile == "constant":
            return np.full(self.T, float(self.demand.rho))
        n = self.peak_T or self.T
        prof = peak_profile(n, self.demand.rho)[:n]
        out = np.zeros(self.T)
        out[:min(n, self.T)] = prof[:self.T]
        return out

    def build(self) -> Tuple[NetworkSpec, Optional[CapacityOverlay]]:
        """Network with assigned routing and unit-rho inflow means, plus the incident overlay.

        Demand is generated at ``rho = 1``; the time-varying multiplier from
        :meth:`rho_series` is applied at simulation time.
        """
        spec = build_manhattan(self.grid)
        od = sample_od_demand(self.grid, replace(self.demand, rho=1.0))
        a = assign_shortest_paths(spec, od, self.grid)
        spec = replace_flows(spec, a)
        overlay = inject_incident(spec, self.incident) if self.incident else None
        return spec, overlay

    def run_kwargs(self) -> dict:
        return {"rho": self.rho_series()}

    def to_dict(self) -> dict:
        d = {"grid": asdict(self.grid), "demand": asdict(self.demand), "T": self.T,
             "profile": self.profile, "peak_T": self.peak_T,
             "incident": asdict(self.incident) if self.incident else None}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = {"grid", "demand", "T", "profile", "peak_T", "incident", "kind"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown scenario keys: {sorted(extra)}")
        return cls(
            grid=GridConfig(**d.get("grid", {})),
            demand=DemandConfig(**d.get("demand", {})),
            T=int(d.get("T", 500)),
            profile=d.get("profile", "constant"),
            peak_T=d.get("peak_T"),
            incident=IncidentSpec(**d["incident"]) if d.get("incident") else None,
        )

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps({"kind": "grid", **self.to_dict()}, indent=2))

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


def replace_flows(spec: NetworkSpec, a: Assignment) -> NetworkSpec:
    from .network import _replace
    return _replace(spec, routing=dict(a.routing), inflow_mean=dict(a.inflow))


def peak_scenario(rows: int = 20, cols: int = 10, h: int = 4, peak_T: int = 240,
                  T: int = 360, seed: int = 0, **grid_kw) -> Scenario:
    return Scenario(GridConfig(rows, cols, h, **grid_kw), DemandConfig(3.0, seed=seed),
                    T=T, profile="peak", peak_T=peak_T)


def incident_scenario(rows: int = 20, cols: int = 10, h: int = 4, rho: float = 1.5,
                      T: int = 480, t_start: int = 120, duration: int = STEPS_PER_HOUR,
                      seed: int = 0, **grid_kw) -> Scenario:
    grid = GridConfig(rows, cols, h, **grid_kw)
    inc = IncidentSpec(central_link(grid, arterial=True), t_start, t_start + duration)
    return Scenario(grid, DemandConfig(rho, seed=seed), T=T, incident=inc)
