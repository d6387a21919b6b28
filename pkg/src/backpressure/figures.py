"""Sweeps behind each benchmark figure, returning plot-ready rows.

Every emitter returns a list of dicts (one CSV row each) and runs each
policy on the same seed list, so the two backpressure variants always see
identical OD matrices and arrivals.  ``scale="desk"`` keeps runs short;
``scale="full"`` uses the larger batch and grid sizes.
"""

from __future__ import annotations

import csv
import inspect
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .engine import (Comparison, PolicyStats, Trajectory, incident_locality_stats, hop_groups,
                     link_queues, paired_seeds, per_link_log_ratio, simulate, total_time_spent)
from .policies import INVERSE_CAPACITY, Backpressure, FixedCycle, PolicyKind
from .scenarios import DemandConfig, GridConfig, Scenario, incident_scenario, peak_scenario

BP = Backpressure()
NEW = Backpressure(INVERSE_CAPACITY)

SCALES = {
    "desk": {"n_runs": 30, "T": 500, "rows": 20},
    "full": {"n_runs": 300, "T": 500, "rows": 50},
}

# demand level used for the layout sweeps (figures 5 and 6)
LAYOUT_RHO = 0.5
SCATTER_RHO = 1.0


def _run_seed(args):
    scenario, policies, seed = args
    spec, overlay = scenario.build()
    kw = scenario.run_kwargs()
    return [total_time_spent(simulate(spec, p, scenario.T, seed=seed, incident=overlay, **kw))
            for p in policies]


def grid_comparison(scenario: Scenario, policies: Sequence[PolicyKind], seeds: Sequence[int],
                    workers: int = 1) -> Comparison:
    """Total time spent per policy, one OD draw and one arrival stream per seed."""
    tasks = [(replace(scenario, demand=replace(scenario.demand, seed=sd)), policies, sd) for sd in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            vals = list(ex.map(_run_seed, tasks))
    else:
        vals = [_run_seed(t) for t in tasks]
    arr = np.array(vals)
    stats = {p.name: PolicyStats(p.name, arr[:, i]) for i, p in enumerate(policies)}
    return Comparison(stats, list(seeds))


def _ratio_row(comp: Comparison, **keys) -> dict:
    bp, new = comp.stats["bp"], comp.stats["new"]
    paired = comp.paired_ratios("bp", "new")
    return {**keys, "ratio": comp.ratio("bp", "new"),
            "ratio_paired_mean": float(paired.mean()),
            "ratio_paired_std": float(paired.std(ddof=1)) if len(paired) > 1 else 0.0,
            "bp_mean": bp.mean, "bp_std": bp.std, "new_mean": new.mean, "new_std": new.std,
            "n_runs": len(comp.seeds)}


def fig4_rho_sweep(rhos: Sequence[float] = (0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0),
                   n_runs: int = 30, T: int = 500, grid: Optional[GridConfig] = None,
                   base_seed: int = 0, workers: int = 1) -> List[dict]:
    grid = grid or GridConfig()
    seeds = paired_seeds(base_seed, n_runs)
    return [_ratio_row(grid_comparison(Scenario(grid, DemandConfig(rho), T=T), [BP, NEW], seeds, workers),
                       rho=rho) for rho in rhos]


def fig5_h_sweep(hs: Sequence[int] = (0, 1, 2, 3, 4, 5, 6, 8, 10), rho: float = LAYOUT_RHO,
                 n_runs: int = 30, T: int = 500, grid: Optional[GridConfig] = None,
                 base_seed: int = 0, workers: int = 1) -> List[dict]:
    grid = grid or GridConfig()
    seeds = paired_seeds(base_seed, n_runs)
    return [_ratio_row(grid_comparison(Scenario(replace(grid, arterial_spacing=h), DemandConfig(rho), T=T),
                                       [BP, NEW], seeds, workers), h=h, rho=rho) for h in hs]


def fig6_ratio_sweep(ratios: Sequence[float] = (1, 2, 4, 6, 8), rho: float = LAYOUT_RHO,
                     n_runs: int = 30, T: int = 500, grid: Optional[GridConfig] = None,
                     base_seed: int = 0, workers: int = 1) -> List[dict]:
    grid = grid or GridConfig()
    seeds = paired_seeds(base_seed, n_runs)
    return [_ratio_row(grid_comparison(Scenario(replace(grid, capacity_ratio=float(cr)), DemandConfig(rho), T=T),
                                       [BP, NEW], seeds, workers), capacity_ratio=cr, rho=rho) for cr in ratios]


def fig7_scatter(rho: float = SCATTER_RHO, n_runs: int = 5, T: int = 500,
                 grid: Optional[GridConfig] = None, base_seed: int = 0) -> List[dict]:
    """Per-movement log-ratio of mean queue, proposed over classical, for each run."""
    grid = grid or GridConfig()
    rows = []
    for sd in paired_seeds(base_seed, n_runs):
        sc = Scenario(grid, DemandConfig(rho, seed=sd), T=T)
        spec, _ = sc.build()
        kw = sc.run_kwargs()
        a = simulate(spec, NEW, T, seed=sd, **kw)
        b = simulate(spec, BP, T, seed=sd, **kw)
        ratios, classes, _ = per_link_log_ratio(a, b)
        for m, v in ratios.items():
            rows.append({"seed": sd, "movement": str(m), "link_class": classes[m], "log_ratio": v})
    return rows


def fig8_peak(scale: str = "desk", n_runs: Optional[int] = None, base_seed: int = 0,
              rows: Optional[int] = None, peak_T: int = 240, T: int = 360) -> List[dict]:
    """Mean cumulative time spent over time under the triangular peak profile."""
    cfg = SCALES[scale]
    n = n_runs or cfg["n_runs"]
    base = peak_scenario(rows=rows or cfg["rows"], peak_T=peak_T, T=T)
    rho = base.rho_series()
    cum = {p.name: np.zeros(T) for p in (BP, NEW)}
    for sd in paired_seeds(base_seed, n):
        sc = replace(base, demand=replace(base.demand, seed=sd))
        spec, _ = sc.build()
        for p in (BP, NEW):
            tr = simulate(spec, p, T, seed=sd, rho=rho)
            cum[p.name] += np.cumsum(tr.states[:-1].sum(axis=1)) / n
    return [{"t": t, "rho": float(rho[t]), "cum_bp": float(cum["bp"][t]), "cum_new": float(cum["new"][t])}
            for t in range(T)]


def incident_runs(scale: str = "desk", n_runs: Optional[int] = None, base_seed: int = 0,
                  rows: Optional[int] = None, **kw) -> Dict[str, List[Trajectory]]:
    cfg = SCALES[scale]
    n = n_runs or cfg["n_runs"]
    base = incident_scenario(rows=rows or cfg["rows"], **kw)
    out: Dict[str, List[Trajectory]] = {"fixed": [], "bp": [], "new": []}
    for sd in paired_seeds(base_seed, n):
        sc = replace(base, demand=replace(base.demand, seed=sd))
        spec, overlay = sc.build()
        for p in (FixedCycle(), BP, NEW):
            out[p.name].append(simulate(spec, p, sc.T, seed=sd, incident=overlay, **sc.run_kwargs()))
    return out


def fig9_incident(runs: Dict[str, List[Trajectory]]) -> List[dict]:
    """Maximum link queue by hop distance from the incident link, per run and policy."""
    rows = []
    for name, trajs in runs.items():
        for i, tr in enumerate(trajs):
            for group, v in incident_locality_stats(tr, tr.incident.link).items():
                rows.append({"run": i, "seed": tr.seed, "policy": name, "group": group, "max_queue": v})
    return rows


def fig10_incident(runs: Dict[str, List[Trajectory]]) -> List[dict]:
    """Mean (over runs) queue in the incident vicinity and cumulative network queue per slot."""
    rows = []
    for name, trajs in runs.items():
        tr0 = trajs[0]
        near = sorted({lk for g in hop_groups(tr0.spec, tr0.incident.link).values() for lk in g})
        vic = np.zeros(tr0.T + 1)
        cum = np.zeros(tr0.T)
        for tr in trajs:
            links, lq = link_queues(tr)
            cols = [links.index(x) for x in near if x in links]
            vic += lq[:, cols].sum(axis=1) / len(trajs)
            cum += np.cumsum(tr.states[:-1].sum(axis=1)) / len(trajs)
        for t in range(tr0.T):
            rows.append({"t": t, "policy": name, "vicinity_queue": float(vic[t]),
                         "cumulative_queue": float(cum[t]),
                         "incident_active": int(tr0.incident.t_start <= t < tr0.incident.t_end)})
    return rows


def write_rows(path, rows: List[dict]) -> None:
    if not rows:
        raise ValueError("nothing to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


FIGURE_FILES = {
    "fig4": ["fig4_rho_sweep.csv"],
    "fig5": ["fig5_h_sweep.csv"],
    "fig6": ["fig6_ratio_sweep.csv"],
    "fig7": ["fig7_scatter.csv"],
    "fig8": ["fig8_peak.csv"],
    "fig9": ["fig9_incident.csv", "fig10_incident.csv"],
}


def _default(fn, name):
    return inspect.signature(fn).parameters[name].default


def figure_config(figure: str, scale: str = "desk", n_runs: Optional[int] = None) -> dict:
    """Sizes and horizons a figure is generated with, for the run manifest."""
    cfg = SCALES[scale]
    n = n_runs or cfg["n_runs"]
    out = {"scale": scale, "n_runs": n, "T": cfg["T"], "grid": asdict(GridConfig())}
    if figure == "fig4":
        out["rho"] = list(_default(fig4_rho_sweep, "rhos"))
    elif figure == "fig5":
        out.update(rho=LAYOUT_RHO, h=list(_default(fig5_h_sweep, "hs")))
    elif figure == "fig6":
        out.update(rho=LAYOUT_RHO, capacity_ratio=list(_default(fig6_ratio_sweep, "ratios")))
    elif figure == "fig7":
        out.update(rho=SCATTER_RHO, n_runs=min(n, 5) if n_runs is None else n)
    elif figure == "fig8":
        sc = peak_scenario(rows=cfg["rows"])
        out.update(grid=asdict(sc.grid), T=sc.T, peak_T=sc.peak_T, rho_max=3.0)
    else:
        sc = incident_scenario(rows=cfg["rows"])
        out.update(grid=asdict(sc.grid), T=sc.T, rho=sc.demand.rho, incident=asdict(sc.incident))
    return out


def reproduce(figure: str, outdir, scale: str = "desk", base_seed: int = 0,
              n_runs: Optional[int] = None, workers: int = 1) -> List[Path]:
    """Run one figure's sweep and write its CSV file(s) into ``outdir``."""
    if figure not in FIGURE_FILES:
        raise KeyError(f"unknown figure {figure!r}; valid ids: {', '.join(FIGURE_FILES)}")
    if scale not in SCALES:
        raise KeyError(f"unknown scale {scale!r}; valid: {', '.join(SCALES)}")
    cfg = SCALES[scale]
    n = n_runs or cfg["n_runs"]
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    kw = dict(n_runs=n, T=cfg["T"], base_seed=base_seed)
    if figure == "fig4":
        tables = [fig4_rho_sweep(workers=workers, **kw)]
    elif figure == "fig5":
        tables = [fig5_h_sweep(workers=workers, **kw)]
    elif figure == "fig6":
        tables = [fig6_ratio_sweep(workers=workers, **kw)]
    elif figure == "fig7":
        tables = [fig7_scatter(n_runs=min(n, 5) if n_runs is None else n, T=cfg["T"], base_seed=base_seed)]
    elif figure == "fig8":
        tables = [fig8_peak(scale, n_runs=n, base_seed=base_seed)]
    else:
        runs = incident_runs(scale, n_runs=n, base_seed=base_seed)
        tables = [fig9_incident(runs), fig10_incident(runs)]
    paths = []
    for name, rows in zip(FIGURE_FILES[figure], tables):
        p = outdir / name
        write_rows(p, rows)
        paths.append(p)
    return paths
