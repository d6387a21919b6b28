"""Simulation loop, trajectories and performance metrics."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .network import MovementId, NetworkSpec, QueueState, step
from .policies import Controller, PolicyKind

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CapacityOverlay:
    """Zero the capacity of ``movements`` (indices) for ``t_start <= t < t_end``."""

    movements: Tuple[int, ...]
    t_start: int
    t_end: int
    link: str = ""

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError("incident must end after it starts")

    def capacity(self, base: np.ndarray, t: int) -> Optional[np.ndarray]:
        if self.t_start <= t < self.t_end:
            c = base.copy()
            c[list(self.movements)] = 0.0
            return c
        return None


@dataclass
class Trajectory:
    """Everything recorded during one run.

    ``states[t]`` is the queue vector at the start of slot ``t``
    (``T + 1`` rows); ``activations``, ``priorities`` and ``inflows`` have one
    row per slot.
    """

    spec: NetworkSpec
    states: np.ndarray
    activations: np.ndarray
    priorities: np.ndarray
    inflows: np.ndarray
    policy: str = ""
    seed: Optional[int] = None
    incident: Optional[CapacityOverlay] = None
    sink_outflow: Optional[np.ndarray] = None

    @property
    def T(self) -> int:
        return len(self.activations)

    def state(self, t: int) -> QueueState:
        return QueueState(self.states[t], t)

    def capacity_at(self, t: int) -> np.ndarray:
        base = self.spec.arrays.capacity
        if self.incident is not None:
            c = self.incident.capacity(base, t)
            if c is not None:
                return c
        return base

    def replay(self) -> np.ndarray:
        """Recompute the states from the recorded activations and inflows."""
        out = np.empty_like(self.states)
        s = QueueState(self.states[0], 0)
        out[0] = s.q
        for t in range(self.T):
            s = step(s, self.activations[t], self.inflows[t], self.spec,
                     capacity=self.capacity_at(t), validate=False)
            out[t + 1] = s.q
        return out


def _inflow_draws(spec: NetworkSpec, T: int, rng: np.random.Generator,
                  rho: Optional[np.ndarray]) -> np.ndarray:
    mean = spec.arrays.inflow_mean
    scale = np.ones(T) if rho is None else np.asarray(rho, dtype=float)
    if scale.shape != (T,):
        raise ValueError("demand profile must have one value per slot")
    lam = scale[:, None] * mean[None, :]
    if spec.inflow_kind == "deterministic":
        return lam
    out = np.zeros((T, len(mean)))
    cols = np.flatnonzero(mean > 0)
    out[:, cols] = rng.poisson(lam[:, cols])
    return out


def simulate(spec: NetworkSpec, policy: PolicyKind, T: int, seed: int = 0,
             initial=None, incident: Optional[CapacityOverlay] = None,
             rho: Optional[Sequence[float]] = None, inflows: Optional[np.ndarray] = None) -> Trajectory:
    """Run ``T`` slots: priorities, activation, inflow draw, conservation step.

    Inflows depend only on ``(spec, seed, rho)``, never on the policy, so two
    policies run with the same seed see identical arrivals.  ``inflows`` may
    be passed explicitly to override the draw entirely.
    """
    if T <= 0:
        raise ValueError("horizon must be positive")
    rng = np.random.default_rng(seed)
    if inflows is None:
        inflows = _inflow_draws(spec, T, rng, None if rho is None else np.asarray(rho))
    else:
        inflows = np.asarray(inflows, dtype=float)
        if inflows.shape != (T, len(spec.movements)):
            raise ValueError("inflow array must be (T, n_movements)")
    ctrl = Controller(spec, policy)
    a = spec.arrays
    n = len(spec.movements)
    states = np.empty((T + 1, n))
    acts = np.empty((T, n), dtype=np.int8)
    prios = np.empty((T, n))
    out_sink = np.empty(T)
    s = QueueState.initial(spec, initial)
    states[0] = s.q
    for t in range(T):
        cap = incident.capacity(a.capacity, t) if incident is not None else None
        u, p = ctrl.decide(s, t, cap)
        acts[t] = u
        prios[t] = p
        c = a.capacity if cap is None else cap
        out_sink[t] = float((u * np.minimum(s.q, c))[a.is_sink].sum())
        s = step(s, u, inflows[t], spec, capacity=cap, validate=False)
        states[t + 1] = s.q
    return Trajectory(spec, states, acts, prios, inflows, getattr(policy, "name", ""),
                      seed, incident, out_sink)


# -- metrics ---------------------------------------------------------------

@dataclass
class MetricsSeries:
    total_queue: np.ndarray
    cumulative_time_spent: np.ndarray
    per_movement_mean_q: Dict[MovementId, float]
    per_movement_max_q: Dict[MovementId, float]


def metrics(traj: Trajectory, warmup: int = 0) -> MetricsSeries:
    """Per-slot totals over slots ``0..T-1``; per-movement stats after ``warmup``."""
    q = traj.states[:-1]
    total = q.sum(axis=1)
    window = q[warmup:]
    spec = traj.spec
    return MetricsSeries(
        total_queue=total,
        cumulative_time_spent=np.cumsum(total),
        per_movement_mean_q=spec.as_map(window.mean(axis=0)),
        per_movement_max_q=spec.as_map(window.max(axis=0)),
    )


def total_time_spent(traj: Trajectory, warmup: int = 0) -> float:
    """Vehicle-slots spent queuing: the sum over slots of all queue sizes."""
    return float(traj.states[warmup:-1].sum())


def paired_seeds(base_seed: int, n_runs: int) -> List[int]:
    ss = np.random.SeedSequence(base_seed)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in ss.spawn(n_runs)]


@dataclass
class PolicyStats:
    name: str
    values: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        return float(np.std(self.values, ddof=1)) if len(self.values) > 1 else 0.0


@dataclass
class Comparison:
    stats: Dict[str, PolicyStats]
    seeds: List[int]

    def ratio(self, a: str, b: str) -> float:
        """Ratio of mean total time spent, ``a / b``."""
        return self.stats[a].mean / self.stats[b].mean

    def paired_ratios(self, a: str, b: str) -> np.ndarray:
        return self.stats[a].values / self.stats[b].values

    def ratio_table(self) -> Dict[Tuple[str, str], float]:
        names = list(self.stats)
        return {(x, y): self.ratio(x, y) for x in names for y in names}


def compare_policies(spec: NetworkSpec, policies: Sequence[PolicyKind], n_runs: int = 1,
                     seeds: Optional[Sequence[int]] = None, T: int = 500, warmup: int = 0,
                     **sim_kw) -> Comparison:
    """Run every policy on the same seed list and summarize total time spent."""
    if n_runs < 1:
        raise ValueError("need at least one run")
    seeds = list(seeds) if seeds is not None else paired_seeds(0, n_runs)
    if len(seeds) < n_runs:
        raise ValueError("fewer seeds than runs")
    seeds = seeds[:n_runs]
    stats = {}
    for pol in policies:
        vals = [total_time_spent(simulate(spec, pol, T, seed=sd, **sim_kw), warmup) for sd in seeds]
        name = pol.name
        while name in stats:
            name += "'"
        stats[name] = PolicyStats(name, np.array(vals))
    return Comparison(stats, seeds)


def link_queues(traj: Trajectory) -> Tuple[List[str], np.ndarray]:
    """Total queue per upstream link over time, shape ``(T + 1, n_links)``."""
    spec = traj.spec
    links = sorted({m.upstream_link for m in spec.movements})
    col = {lk: i for i, lk in enumerate(links)}
    idx = np.array([col[m.upstream_link] for m in spec.movements])
    out = np.zeros((traj.states.shape[0], len(links)))
    for j in range(len(links)):
        out[:, j] = traj.states[:, idx == j].sum(axis=1)
    return links, out


def hop_groups(spec: NetworkSpec, link: str) -> Dict[str, List[str]]:
    """Links at directed hop distance 0, 1 and 2 upstream and 1 downstream of ``link``."""
    up_of: Dict[str, set] = {}
    down_of: Dict[str, set] = {}
    for m in spec.movements:
        up_of.setdefault(m.downstream_link, set()).add(m.upstream_link)
        down_of.setdefault(m.upstream_link, set()).add(m.downstream_link)
    if link not in down_of:
        raise KeyError(f"link {link!r} carries no movements in this network")
    has_queue = set(down_of)
    up1 = up_of.get(link, set()) & has_queue
    up2 = set().union(*[up_of.get(x, set()) for x in up1]) & has_queue if up1 else set()
    up2 -= up1 | {link}
    dn1 = down_of.get(link, set()) & has_queue
    return {"0": [link], "up1": sorted(up1), "up2": sorted(up2), "down1": sorted(dn1 - {link})}


def incident_locality_stats(traj: Trajectory, link: str) -> Dict[str, float]:
    """Maximum link queue over time within each hop-distance group of ``link``."""
    groups = hop_groups(traj.spec, link)
    links, lq = link_queues(traj)
    col = {lk: i for i, lk in enumerate(links)}
    out = {}
    for name, members in groups.items():
        cols = [col[x] for x in members if x in col]
        out[name] = float(lq[:, cols].max()) if cols else 0.0
    return out


def per_link_log_ratio(traj_a: Trajectory, traj_b: Trajectory, warmup: int = 0):
    """``log(mean_q_a / mean_q_b)`` per movement, split by the upstream link class.

    Returns ``(ratios, classes, n_excluded)``; movements whose mean queue is
    zero in either run are excluded and counted.
    """
    if traj_a.spec.movements != traj_b.spec.movements:
        raise ValueError("trajectories come from different networks")
    ma = traj_a.states[warmup:-1].mean(axis=0)
    mb = traj_b.states[warmup:-1].mean(axis=0)
    keep = (ma > 0) & (mb > 0)
    spec = traj_a.spec
    ratios = {}
    classes = {}
    for i in np.flatnonzero(keep):
        m = spec.movements[i]
        ratios[m] = math.log(ma[i] / mb[i])
        classes[m] = spec.link_class.get(m.upstream_link, "secondary")
    return ratios, classes, int((~keep).sum())


# -- export ----------------------------------------------------------------

def long_rows(traj: Trajectory, run_id: str = "0") -> Iterable[Tuple]:
    """``(run_id, policy, t, metric, value)`` rows for the per-slot totals."""
    m = metrics(traj)
    for t in range(traj.T):
        yield run_id, traj.policy, t, "total_queue", float(m.total_queue[t])
        yield run_id, traj.policy, t, "cumulative_time_spent", float(m.cumulative_time_spent[t])


def write_long_csv(path, rows: Iterable[Tuple]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run_id", "policy", "t", "metric", "value"])
        for r in rows:
            w.writerow(r)


def summary(traj: Trajectory) -> dict:
    m = metrics(traj)
    return {
        "policy": traj.policy,
        "seed": traj.seed,
        "T": traj.T,
        "total_time_spent": total_time_spent(traj),
        "final_total_queue": float(traj.states[-1].sum()),
        "max_total_queue": float(m.total_queue.max()),
    }
