"""Closed-form analysis of the 2x1 merge junction and trajectory diagnostics.

Two upstream queues merge into one downstream queue held at a constant
size ``Q``::

    queue 1: capacity c,   inflow eta*c    \\
                                            >-- downstream: capacity (k+1)c, clamped at Q
    queue 2: capacity k*c, inflow k*eta*c  /

Upstream queues are numbered 1 (capacity ``c``) and 2 (capacity ``k c``)
throughout.  A steady state in which exactly one upstream queue is
unsaturated is labelled ``(u, s)``, e.g. ``(1, 2)`` when queue 1 is
unsaturated and queue 2 saturated.

The downstream weight ``gamma_0`` is 1 under uniform weights and
``1 / ((k+1) c)`` under inverse-capacity weights.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .engine import Trajectory, simulate
from .network import MovementId, NetworkSpec
from .policies import INVERSE_CAPACITY, UNIFORM, Backpressure, PolicyKind

Region = Tuple[int, int]

Q1 = MovementId("1", "3")
Q2 = MovementId("2", "3")
DOWN = MovementId("3", "4")

_BOUNDARY_RTOL = 1e-12


class IndeterminateRegion(ValueError):
    """The parameters fall between the two closed-form R1 regions."""


@dataclass(frozen=True)
class JunctionParams:
    c: float = 10.0
    k: float = 2.0
    eta: float = 0.4
    Q: float = 0.0
    gamma_mode: str = UNIFORM

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("reference capacity c must be positive")
        if not self.k >= 1:
            raise ValueError("heterogeneity factor k must be at least 1")
        if not 0 < self.eta <= 0.5:
            raise ValueError("demand ratio eta must lie in (0, 0.5]")
        if not self.Q >= 0:
            raise ValueError("downstream queue Q must be nonnegative")
        if self.gamma_mode not in (UNIFORM, INVERSE_CAPACITY):
            raise ValueError(f"gamma_mode must be {UNIFORM!r} or {INVERSE_CAPACITY!r}")

    @property
    def capacities(self) -> Tuple[float, float, float]:
        return self.c, self.k * self.c, (self.k + 1) * self.c

    @property
    def inflows(self) -> Tuple[float, float]:
        return self.eta * self.c, self.k * self.eta * self.c

    @property
    def gammas(self) -> Tuple[float, float, float]:
        """``(gamma_1, gamma_2, gamma_0)``."""
        if self.gamma_mode == UNIFORM:
            return 1.0, 1.0, 1.0
        c1, c2, c3 = self.capacities
        return 1.0 / c1, 1.0 / c2, 1.0 / c3

    def cap(self, i: int) -> float:
        return self.capacities[i - 1]

    def inflow(self, i: int) -> float:
        return self.inflows[i - 1]

    def gamma(self, i: int) -> float:
        return self.gammas[i - 1]

    @property
    def gamma0(self) -> float:
        return self.gammas[2]

    def with_mode(self, mode: str) -> "JunctionParams":
        return JunctionParams(self.c, self.k, self.eta, self.Q, mode)

    def policy(self) -> Backpressure:
        return Backpressure(self.gamma_mode)


@dataclass(frozen=True)
class SteadyStateBounds:
    q_u_lo: float
    q_u_hi: float
    q_s_lo: float
    q_s_hi: float
    q_s_act: float


@dataclass(frozen=True)
class RegimeReport:
    regime: str
    unsaturated: Optional[int]
    saturated: Optional[int]
    p_act: Optional[float]
    q_act: Optional[Dict[int, float]]
    bounds: Optional[SteadyStateBounds]
    mean_queue: Optional[float]
    params: JunctionParams

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = asdict(self.params)
        if self.q_act is not None:
            d["q_act"] = {str(i): v for i, v in self.q_act.items()}
        d["region"] = None if self.unsaturated is None else [self.unsaturated, self.saturated]
        return d


def build_junction(params: JunctionParams) -> NetworkSpec:
    """The 2x1 network with deterministic inflows and the downstream queue clamped at Q."""
    c1, c2, c3 = params.capacities
    f1, f2 = params.inflows
    g1, g2, g0 = params.gammas
    return NetworkSpec(
        movements=(Q1, Q2, DOWN),
        capacity={Q1: c1, Q2: c2, DOWN: c3},
        weight={Q1: g1, Q2: g2, DOWN: g0},
        routing={Q1: 1.0, Q2: 1.0, DOWN: 1.0},
        inflow_mean={Q1: f1, Q2: f2},
        phases={"merge": ((Q1,), (Q2,)), "out": ((DOWN,),)},
        clamped_queues={DOWN: params.Q},
        inflow_kind="deterministic",
        meta={"topology": "2x1"},
    )


def region_thresholds(params: JunctionParams) -> Tuple[float, float]:
    """``(Q_low, Q_high)``: region (2,1) needs ``Q <= Q_low``, region (1,2) needs ``Q >= Q_high``."""
    k, eta, c = params.k, params.eta, params.c
    if k <= 1:
        raise ValueError("closed forms need k > 1 (the homogeneous junction is degenerate)")
    if params.gamma_mode == UNIFORM:
        return (k * k * eta - 1) / (k - 1) * c, (k * k - eta) / (k - 1) * c
    return (k * eta - 1) / (k - 1) * (k + 1) * c, (k - eta) / (k - 1) * (k + 1) * c


def phase_region(params: JunctionParams) -> Optional[Region]:
    """Predicted ``(u, s)`` assignment, or ``None`` when indeterminate."""
    lo, hi = region_thresholds(params)
    slack = _BOUNDARY_RTOL * max(1.0, abs(params.Q), abs(lo), abs(hi))
    if params.Q >= hi - slack:
        return (1, 2)
    if params.Q <= lo + slack:
        return (2, 1)
    return None


def _definite(params: JunctionParams) -> Region:
    reg = phase_region(params)
    if reg is None:
        raise IndeterminateRegion(f"no definite R1 state for {params}")
    return reg


def activation_priority(params: JunctionParams, u: Optional[int] = None) -> float:
    """Minimal priority to be served in steady state, reached when ``q_u = f_u``."""
    if u is None:
        u = _definite(params)[0]
    return (params.gamma(u) * params.inflow(u) - params.gamma0 * params.Q) * params.cap(u)


def activation_queue(params: JunctionParams, i: int, p_act: float) -> float:
    """Queue size at which queue ``i`` reaches priority ``p_act``."""
    g = params.gamma(i)
    return params.gamma0 / g * params.Q + p_act / (g * params.cap(i))


def steady_state_bounds(params: JunctionParams) -> SteadyStateBounds:
    u, s = _definite(params)
    cu, cs = params.cap(u), params.cap(s)
    gu, gs, g0 = params.gamma(u), params.gamma(s), params.gamma0
    fu, fs = params.inflow(u), params.inflow(s)
    q_s_act = g0 / gs * (1 - cu / cs) * params.Q + gu * cu / (gs * cs) * fu
    return SteadyStateBounds(
        q_u_lo=fu, q_u_hi=2 * fu,
        q_s_lo=q_s_act + fs - cs, q_s_hi=q_s_act + fs,
        q_s_act=q_s_act,
    )


def mean_queue_estimate(params: JunctionParams) -> float:
    """Approximate time-averaged size of the saturated queue."""
    u, s = _definite(params)
    b = steady_state_bounds(params)
    return b.q_s_act + params.inflow(s) - 0.5 * params.cap(s)


def time_spent_ratio(params: JunctionParams) -> float:
    """Saturated-queue mean under uniform weights over that under inverse-capacity weights."""
    uni = params.with_mode(UNIFORM)
    inv = params.with_mode(INVERSE_CAPACITY)
    ru, ri = phase_region(uni), phase_region(inv)
    if ru is None or ri is None:
        raise IndeterminateRegion("region undefined for one of the weight modes")
    if ru != ri:
        raise IndeterminateRegion(f"weight modes disagree on the region: {ru} vs {ri}")
    return mean_queue_estimate(uni) / mean_queue_estimate(inv)


def asymptotic_ratio(region: Region, k: float) -> float:
    """Large-k limit of :func:`time_spent_ratio`: 1 in region (1,2), k in region (2,1)."""
    if tuple(region) == (1, 2):
        return 1.0
    if tuple(region) == (2, 1):
        return float(k)
    raise ValueError(f"unknown region {region}")


def analyze_junction(params: JunctionParams) -> RegimeReport:
    reg = phase_region(params)
    if reg is None:
        return RegimeReport("Indeterminate", None, None, None, None, None, None, params)
    u, s = reg
    p_act = activation_priority(params, u)
    q_act = {i: activation_queue(params, i, p_act) for i in (1, 2)}
    return RegimeReport("R1", u, s, p_act, q_act, steady_state_bounds(params),
                        mean_queue_estimate(params), params)


def default_tolerance(params: JunctionParams) -> float:
    """One slot of inflow expressed in priority units: ``max_i gamma_i f_i c_i``."""
    return max(params.gamma(i) * params.inflow(i) * params.cap(i) for i in (1, 2))


# -- simulation helpers ----------------------------------------------------

def simulate_junction(params: JunctionParams, T: int = 10_000, q0=None,
                      policy: Optional[PolicyKind] = None) -> Trajectory:
    """Run the 2x1 junction; ``q0`` is ``(q1, q2)`` and defaults to ``10 c_s`` each."""
    spec = build_junction(params)
    if q0 is None:
        big = 10 * params.k * params.c
        q0 = (big, big)
    init = {Q1: float(q0[0]), Q2: float(q0[1])}
    return simulate(spec, policy or params.policy(), T, initial=init)


def upstream_series(traj: Trajectory) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Queues ``(T+1, 2)``, priorities ``(T, 2)`` and served index ``(T,)`` of queues 1 and 2."""
    idx = [traj.spec.index[Q1], traj.spec.index[Q2]]
    q = traj.states[:, idx]
    p = traj.priorities[:, idx]
    act = traj.activations[:, idx]
    served = np.where(act[:, 0] == 1, 1, 2)
    return q, p, served


def rolling_pmax(priority_series) -> np.ndarray:
    """Rolling two-slot minimum of the per-slot maximum priority.

    Accepts a ``(T, n)`` array of priorities (or a 1-d series of per-slot
    maxima).  Entry ``i`` of the result is the value at ``t = i + 1``.
    """
    p = np.asarray(priority_series, dtype=float)
    pmax = p.max(axis=1) if p.ndim == 2 else p
    if len(pmax) < 2:
        raise ValueError("need at least two slots")
    return np.minimum(pmax[1:], pmax[:-1])


def detect_transient_end(pmax_series, p_act: float, tol: float, start: int = 1) -> Optional[int]:
    """First ``t`` after which ``|pmax(t) - p_act| <= tol`` holds for every later slot.

    ``pmax_series[i]`` is taken to be the value at ``t = start + i``.  Returns
    ``None`` when the final recorded value is still outside the band.
    """
    x = np.asarray(pmax_series, dtype=float)
    ok = np.abs(x - p_act) <= tol
    if not ok.size or not ok[-1]:
        return None
    bad = np.flatnonzero(~ok)
    first = 0 if bad.size == 0 else bad[-1] + 1
    return start + int(first)


def tail_band(pmax_series, p_act: float, frac: float = 0.5) -> float:
    """Largest ``|pmax - p_act|`` over the final ``frac`` of the series."""
    x = np.asarray(pmax_series, dtype=float)
    tail = x[int(len(x) * (1 - frac)):]
    return float(np.max(np.abs(tail - p_act)))


@dataclass(frozen=True)
class SaturationReport:
    labels: Dict[int, str]
    regime: str
    window: Tuple[int, int]

    @property
    def region(self) -> Optional[Region]:
        if self.regime != "R1":
            return None
        u = 1 if self.labels[1] == "unsaturated" else 2
        return (u, 3 - u)


def classify_saturation(traj: Trajectory, window: Optional[Tuple[int, int]] = None,
                        atol: float = 1e-9) -> SaturationReport:
    """Label each upstream queue by whether every service in ``window`` left a residual queue.

    A queue is saturated when it exceeds its capacity at every activation in
    the window, so service is capacity-limited and vehicles stay behind.  A
    queue served at exactly ``q = c`` drains completely and is labelled
    unsaturated.  ``window`` is a half-open slot range and defaults to the
    second half of the run.  A queue never served in the window counts as
    saturated.
    """
    T = traj.T
    a, b = window if window is not None else (T // 2, T)
    if not 0 <= a < b <= T:
        raise ValueError("empty or out-of-range window")
    q, _, served = upstream_series(traj)
    caps = traj.spec.arrays.capacity[[traj.spec.index[Q1], traj.spec.index[Q2]]]
    labels = {}
    for i in (1, 2):
        ts = np.arange(a, b)[served[a:b] == i]
        at_cap = np.all(q[ts, i - 1] > caps[i - 1] + atol)
        labels[i] = "saturated" if at_cap else "unsaturated"
    n_unsat = sum(v == "unsaturated" for v in labels.values())
    regime = {1: "R1", 2: "R2", 0: "overloaded"}[n_unsat]
    return SaturationReport(labels, regime, (a, b))


@dataclass(frozen=True)
class JunctionDiagnostics:
    """Everything the steady-state checks need from one junction run."""

    params: JunctionParams
    region: Region
    p_act: float
    tol: float
    pmax: np.ndarray
    t0: Optional[int]
    bounds: SteadyStateBounds
    queues: np.ndarray
    served: np.ndarray

    def monotonicity_violations(self, atol: float = 1e-9) -> np.ndarray:
        """Slots ``t`` where ``pmax(t + 2) > pmax(t)``."""
        x = self.pmax
        scale = max(1.0, float(np.max(np.abs(x))))
        return np.flatnonzero(x[2:] > x[:-2] + atol * scale) + 1

    def max_bound_excess(self, guard: int = 2) -> float:
        """Largest violation of the steady-state bounds after ``t0 + guard`` (<= 0 when inside)."""
        if self.t0 is None:
            return float("inf")
        u, s = self.region
        q = self.queues[self.t0 + guard:]
        b = self.bounds
        return float(max(
            np.max(b.q_u_lo - q[:, u - 1]), np.max(q[:, u - 1] - b.q_u_hi),
            np.max(b.q_s_lo - q[:, s - 1]), np.max(q[:, s - 1] - b.q_s_hi),
        ))

    def consecutive_saturated(self) -> int:
        """Number of back-to-back services of the saturated queue after ``t0``."""
        if self.t0 is None:
            return -1
        s = self.region[1]
        a = self.served[self.t0:]
        return int(np.sum((a[1:] == s) & (a[:-1] == s)))


def diagnose(params: JunctionParams, T: int = 10_000, q0=None, tol: Optional[float] = None) -> JunctionDiagnostics:
    """Simulate and compute rolling max-priority, transient end and bounds.

    ``tol=None`` uses the band that the tail of the run itself settles into.
    The steady state also requires the saturated queue to have been served
    while nonempty: from an empty start the max-priority can sit at ``p_act`` while
    the saturated queue is still filling up.
    """
    region = _definite(params)
    traj = simulate_junction(params, T, q0)
    q, p, served = upstream_series(traj)
    pm = rolling_pmax(p)
    p_act = activation_priority(params, region[0])
    band = tail_band(pm, p_act) if tol is None else tol
    t0 = detect_transient_end(pm, p_act, band)
    first_s = np.flatnonzero((served == region[1]) & (q[:-1, region[1] - 1] > 0))
    if t0 is not None:
        t0 = None if not first_s.size else max(t0, int(first_s[0]))
    return JunctionDiagnostics(params, region, p_act, band, pm, t0,
                               steady_state_bounds(params), q, served)


# -- phase diagram ---------------------------------------------------------

@dataclass(frozen=True)
class PhaseCell:
    gamma_mode: str
    k: float
    Q: float
    closed_form: Optional[Region]
    simulated: Optional[Region] = None
    sim_regime: Optional[str] = None


def phase_diagram(k_values: Sequence[float], Q_values: Sequence[float], eta: float = 0.4,
                  c: float = 10.0, modes: Sequence[str] = (UNIFORM, INVERSE_CAPACITY),
                  simulated: bool = False, T: int = 4000) -> List[PhaseCell]:
    """Closed-form region (and optionally a simulated label) for every ``(k, Q)`` cell."""
    if len(k_values) == 0 or len(Q_values) == 0:
        raise ValueError("empty k or Q range")
    cells = []
    for mode in modes:
        for k in k_values:
            for Q in Q_values:
                p = JunctionParams(c, float(k), eta, float(Q), mode)
                cf = phase_region(p)
                sim = regime = None
                if simulated:
                    rep = classify_saturation(simulate_junction(p, T))
                    sim, regime = rep.region, rep.regime
                cells.append(PhaseCell(mode, float(k), float(Q), cf, sim, regime))
    return cells


def agreement_rate(cells: Sequence[PhaseCell], mode: Optional[str] = None) -> float:
    """Share of definite closed-form cells whose simulated label matches."""
    pool = [x for x in cells if x.closed_form is not None and (mode is None or x.gamma_mode == mode)]
    if not pool:
        return float("nan")
    return sum(x.simulated == x.closed_form for x in pool) / len(pool)
