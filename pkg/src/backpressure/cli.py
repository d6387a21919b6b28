"""Command-line entry point: ``backpressure <subcommand> ...``.

Every subcommand writing files also writes ``manifest.json`` next to them;
``backpressure replay manifest.json`` re-runs it with identical arguments.
Failures print one JSON line ``{"error": <category>, "message": ...}`` to
stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .engine import long_rows, simulate, summary, write_long_csv
from .figures import FIGURE_FILES, SCALES, figure_config, reproduce
from .junction import (Q1, Q2, JunctionParams, agreement_rate, analyze_junction, build_junction,
                       phase_diagram, rolling_pmax, upstream_series)
from .network import MovementId, NetworkSpec, SpecError
from .policies import INVERSE_CAPACITY, UNIFORM, policy_from_flag
from .scenarios import DemandConfig, GridConfig, Scenario, incident_scenario, peak_scenario

log = logging.getLogger("backpressure")

OUT_ENV = "BACKPRESSURE_OUT"

EXIT_CODES = {"validation": 2, "not_found": 3, "io": 4}

GAMMA_MODES = {"uniform": UNIFORM, "inverse": INVERSE_CAPACITY, "inverse_capacity": INVERSE_CAPACITY}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


@dataclass
class RunManifest:
    subcommand: str
    argv: List[str]
    config: dict
    seeds: List[int] = field(default_factory=list)
    version: str = __version__
    outputs: List[str] = field(default_factory=list)

    def write(self, outdir: Path, name: str = "manifest.json") -> Path:
        p = Path(outdir) / name
        p.write_text(json.dumps(asdict(self), indent=2, sort_keys=True))
        return p

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def _outdir(arg: Optional[str]) -> Path:
    p = Path(arg or os.environ.get(OUT_ENV, "out"))
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_json(path: str):
    p = Path(path)
    if not p.is_file():
        raise CliError("not_found", f"file not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError("validation", f"{path}: invalid JSON ({exc})") from None


def _junction_params(args) -> JunctionParams:
    try:
        p = JunctionParams(args.c, args.k, args.eta, args.Q, GAMMA_MODES[args.gamma])
    except ValueError as exc:
        raise CliError("validation", str(exc)) from None
    if p.k <= 1:
        raise CliError("validation", "degenerate k: the closed forms need k > 1")
    return p


# -- subcommands ------------------------------------------------------------

def cmd_analyze_junction(args) -> int:
    rep = analyze_junction(_junction_params(args)).to_dict()
    text = json.dumps(rep, indent=2)
    print(text)
    if args.out:
        out = Path(args.out)
        out.write_text(text)
        RunManifest("analyze-junction", args.argv, vars_clean(args), outputs=[str(out)]).write(
            out.parent, out.stem + ".manifest.json")
    return 0


def cmd_phase_diagram(args) -> int:
    if args.resolution < 1 or args.k_max < args.k_min or args.Q_max < args.Q_min:
        raise CliError("validation", "empty k or Q range")
    if args.k_min <= 1:
        raise CliError("validation", "k range must stay above 1")
    ks = np.linspace(args.k_min, args.k_max, args.resolution)
    Qs = np.linspace(args.Q_min, args.Q_max, args.resolution)
    try:
        cells = phase_diagram(ks, Qs, args.eta, args.c, simulated=args.mode == "simulated", T=args.T)
    except ValueError as exc:
        raise CliError("validation", str(exc)) from None
    outdir = _outdir(args.out)
    path = outdir / "phase_diagram.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gamma_mode", "k", "Q", "closed_form", "simulated", "sim_regime"])
        for c in cells:
            fmt = lambda r: "" if r is None else f"{r[0]}{r[1]}"
            w.writerow([c.gamma_mode, c.k, c.Q, fmt(c.closed_form) or "indeterminate",
                        fmt(c.simulated), c.sim_regime or ""])
    report = {"cells": len(cells)}
    for mode in (UNIFORM, INVERSE_CAPACITY):
        definite = [c for c in cells if c.gamma_mode == mode and c.closed_form is not None]
        report[f"definite_{mode}"] = len(definite)
        if args.mode == "simulated":
            report[f"agreement_{mode}"] = agreement_rate(cells, mode)
    print(json.dumps(report, indent=2))
    RunManifest("phase-diagram", args.argv, {**vars_clean(args), **report}, outputs=[str(path)]).write(outdir)
    return 0


def cmd_gen_scenario(args) -> int:
    try:
        grid = GridConfig(args.rows, args.cols, args.h, args.capacity_ratio, args.base_capacity)
        if args.kind == "junction":
            jp = JunctionParams(args.c, args.k, args.eta, args.Q, GAMMA_MODES[args.gamma])
            sc = None
        elif args.kind == "grid":
            sc = Scenario(grid, DemandConfig(args.rho, args.od_scale, args.seed), T=args.T)
        elif args.kind == "peak":
            sc = peak_scenario(args.rows, args.cols, args.h, seed=args.seed, T=args.T,
                               capacity_ratio=args.capacity_ratio, base_capacity=args.base_capacity)
        else:
            sc = incident_scenario(args.rows, args.cols, args.h, rho=args.rho, T=args.T, seed=args.seed,
                                   capacity_ratio=args.capacity_ratio, base_capacity=args.base_capacity)
    except ValueError as exc:
        raise CliError("validation", str(exc)) from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if sc is None:
        out.write_text(json.dumps({"kind": "junction", "params": asdict(jp), "T": args.T}, indent=2))
    else:
        sc.dump(out)
    outputs = [str(out)]
    if args.export_network:
        spec = build_junction(jp) if sc is None else sc.build()[0]
        spec.dump(args.export_network)
        outputs.append(args.export_network)
    print(json.dumps({"scenario": str(out), "kind": args.kind}))
    RunManifest("gen-scenario", args.argv, vars_clean(args), [args.seed], outputs=outputs).write(
        out.parent, out.stem + ".manifest.json")
    return 0


def _custom_gamma(path: Optional[str]):
    if path is None:
        return None
    raw = _load_json(path)
    out = {}
    for k, v in raw.items():
        if "->" not in k:
            raise CliError("validation", f"custom gamma key {k!r} is not of the form 'a->b'")
        a, b = k.split("->", 1)
        out[MovementId(a, b)] = float(v)
    return out


def _load_scenario(path: str, T_override: Optional[int]):
    """Returns ``(spec, T, run kwargs, scenario dict)`` for any supported scenario file."""
    d = _load_json(path)
    kind = d.get("kind", "network" if "movements" in d else "grid")
    try:
        if kind == "junction":
            p = JunctionParams(**d["params"])
            T = T_override or int(d.get("T", 2000))
            q0 = d.get("q0")
            init = None if q0 is None else {Q1: float(q0[0]), Q2: float(q0[1])}
            return build_junction(p), T, {"initial": init}, d
        if kind == "network":
            spec = NetworkSpec.from_dict(d)
            return spec, T_override or int(d.get("meta", {}).get("T", 500)), {}, d
        sc = Scenario.from_dict(d)
    except (ValueError, KeyError, TypeError, SpecError) as exc:
        raise CliError("validation", f"{path}: {exc}") from None
    if T_override:
        sc = Scenario(sc.grid, sc.demand, T_override, sc.profile, sc.peak_T, sc.incident)
    spec, overlay = sc.build()
    return spec, sc.T, {"incident": overlay, **sc.run_kwargs()}, d


def cmd_run(args) -> int:
    spec, T, kw, scen = _load_scenario(args.scenario, args.T)
    try:
        policy = policy_from_flag(args.policy, _custom_gamma(args.gamma))
        traj = simulate(spec, policy, T, seed=args.seed, **kw)
    except (ValueError, SpecError) as exc:
        raise CliError("validation", str(exc)) from None
    outdir = _outdir(args.out)
    outputs = []
    mpath = outdir / "metrics.csv"
    write_long_csv(mpath, long_rows(traj, run_id=str(args.seed)))
    spath = outdir / "summary.json"
    spath.write_text(json.dumps(summary(traj), indent=2))
    outputs += [str(mpath), str(spath)]
    if args.trace:
        tpath = outdir / "trace.csv"
        _write_trace(tpath, traj)
        outputs.append(str(tpath))
    print(json.dumps(summary(traj)))
    RunManifest("run", args.argv, {"scenario": scen, **vars_clean(args)}, [args.seed],
                outputs=outputs).write(outdir)
    return 0


def _write_trace(path: Path, traj) -> None:
    """Per-slot queues and priorities; on the 2x1 junction also the rolling max-priority."""
    spec = traj.spec
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if spec.meta.get("topology") == "2x1":
            q, p, served = upstream_series(traj)
            pm = rolling_pmax(p)
            w.writerow(["t", "q1", "q2", "p1", "p2", "pmax_rolling", "served"])
            for t in range(traj.T):
                w.writerow([t, q[t, 0], q[t, 1], p[t, 0], p[t, 1],
                            "" if t == 0 else pm[t - 1], served[t]])
        else:
            w.writerow(["t", "movement", "q", "priority", "active"])
            for t in range(traj.T):
                for i, m in enumerate(spec.movements):
                    w.writerow([t, str(m), traj.states[t, i], traj.priorities[t, i], traj.activations[t, i]])


def cmd_reproduce(args) -> int:
    if args.figure not in FIGURE_FILES:
        raise CliError("validation", f"unknown figure {args.figure!r}; valid ids: {', '.join(FIGURE_FILES)}")
    outdir = _outdir(args.out)
    paths = reproduce(args.figure, outdir, args.scale, args.seed, args.n_runs, args.workers)
    print(json.dumps({"figure": args.figure, "outputs": [str(p) for p in paths]}))
    config = {**vars_clean(args), "figure_config": figure_config(args.figure, args.scale, args.n_runs)}
    RunManifest("reproduce", args.argv, config, [args.seed],
                outputs=[str(p) for p in paths]).write(outdir)
    return 0


def cmd_replay(args) -> int:
    m = RunManifest.read(args.manifest) if Path(args.manifest).is_file() else None
    if m is None:
        raise CliError("not_found", f"manifest not found: {args.manifest}")
    if m.version != __version__:
        log.warning("manifest written by version %s, running %s", m.version, __version__)
    return main(m.argv)


def vars_clean(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func", "argv")}


# -- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="backpressure", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def junction_flags(p):
        p.add_argument("--c", type=float, default=10.0)
        p.add_argument("--eta", type=float, default=0.4)

    p = sub.add_parser("analyze-junction", help="closed-form steady state of the 2x1 junction")
    junction_flags(p)
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--Q", type=float, default=0.0)
    p.add_argument("--gamma", choices=list(GAMMA_MODES), default="uniform")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze_junction)

    p = sub.add_parser("phase-diagram", help="region labels over a (k, Q) grid")
    junction_flags(p)
    p.add_argument("--k-min", type=float, default=1.5)
    p.add_argument("--k-max", type=float, default=10.0)
    p.add_argument("--Q-min", type=float, default=0.0)
    p.add_argument("--Q-max", type=float, default=150.0)
    p.add_argument("--resolution", type=int, default=20)
    p.add_argument("--mode", choices=["closed", "simulated"], default="closed")
    p.add_argument("--T", type=int, default=4000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_phase_diagram)

    p = sub.add_parser("gen-scenario", help="write a scenario file (grid, peak, incident or 2x1 junction)")
    p.add_argument("--kind", choices=["grid", "peak", "incident", "junction"], default="grid")
    junction_flags(p)
    p.add_argument("--k", type=float, default=2.0)
    p.add_argument("--Q", type=float, default=0.0)
    p.add_argument("--gamma", choices=list(GAMMA_MODES), default="uniform")
    p.add_argument("--rows", type=int, default=10)
    p.add_argument("--cols", type=int, default=10)
    p.add_argument("--h", type=int, default=5)
    p.add_argument("--capacity-ratio", type=float, default=4.0)
    p.add_argument("--base-capacity", type=float, default=5.0)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--od-scale", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--T", type=int, default=500)
    p.add_argument("--out", required=True)
    p.add_argument("--export-network", help="also write the generated network JSON here")
    p.set_defaults(func=cmd_gen_scenario)

    p = sub.add_parser("run", help="simulate one scenario under one policy")
    p.add_argument("--scenario", required=True)
    p.add_argument("--policy", choices=["bp", "new", "fixed", "alt", "custom"], default="new")
    p.add_argument("--gamma", help="JSON map 'a->b' -> weight for --policy custom")
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("reproduce", help="emit the data behind one benchmark figure")
    p.add_argument("--figure", required=True)
    p.add_argument("--scale", choices=list(SCALES), default="desk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-runs", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("replay", help="re-run a subcommand from its manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    args.argv = argv
    if args.cmd == "run" and args.policy == "custom" and not args.gamma:
        return _fail(CliError("validation", "--policy custom needs --gamma custom.json"))
    try:
        return args.func(args)
    except CliError as exc:
        return _fail(exc)
    except (SpecError, ValueError) as exc:
        return _fail(CliError("validation", str(exc)))
    except OSError as exc:
        return _fail(CliError("io", str(exc)))


def _fail(exc: CliError) -> int:
    print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
    return EXIT_CODES.get(exc.category, 1)


if __name__ == "__main__":
    sys.exit(main())
