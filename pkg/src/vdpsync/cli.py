"""Command line entry point: ``vdpsync {cycle,optimize,simulate,sweep,plotdata}``.

Exit codes: 0 success, 2 configuration or usage error, 3 numeric or solver
failure, 4 I/O error.  Every command writes its files atomically, so a failed
run leaves nothing behind in the output directory.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import io
from .config import ConfigFile, content_hash, load_config, parse_config
from .dynamics import vdp_rhs
from .errors import ConfigError, DomainError, NumericError
from .gain_opt import GainSchedule, optimize_schedule
from .limit_cycle import CycleSample, integrate
from .simulate import (PHASE1, RunConfig, compute_cycle, default_initial_states, run_hybrid,
                       run_two_phase)

log = logging.getLogger("vdpsync")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
CACHE_ENV = "VDPSYNC_CACHE"
FIGURES = ("fig1a", "fig1b", "fig2", "fig4", "fig5", "fig6", "fig7")


# --------------------------------------------------------------------------
# offline artifacts with an on-disk cache


class Cache:
    """Content-addressed store for cycles and schedules (JSON files)."""

    def __init__(self, root: Path | None):
        self.root = root

    def _load(self, name: str, reader: Callable[[Path], Any]):
        if self.root is None:
            return None
        path = self.root / name
        if not path.exists():
            return None
        try:
            return reader(path)
        except (OSError, ValueError, KeyError) as exc:
            log.warning("ignoring unreadable cache entry %s (%s)", path, exc)
            return None

    def _store(self, name: str, writer: Callable[[Any, Path], None], obj) -> None:
        if self.root is None:
            return
        with io.atomic_outputs(self.root) as out:
            writer(obj, out.path(name))

    def cycle(self, cfg: RunConfig) -> CycleSample:
        key = content_hash({"kind": "cycle", **cycle_key(cfg)})
        name = f"cycle-{key}.json"
        cyc = self._load(name, io.read_cycle_json)
        if cyc is None:
            cyc = compute_cycle(cfg)
            self._store(name, io.write_cycle_json, cyc)
        else:
            log.info("cycle loaded from cache (%s)", name)
        return cyc

    def schedule(self, cfg: RunConfig) -> GainSchedule:
        key = content_hash({"kind": "schedule", **schedule_key(cfg)})
        name = f"schedule-{key}.json"
        sch = self._load(name, io.read_schedule_json)
        if sch is None:
            cyc = self.cycle(cfg)
            log.info("optimizing %d samples on %d edges (omega=%g)", cfg.f, cfg.graph.m, cfg.omega)
            sch = optimize_schedule(cyc, cfg.osc, cfg.graph, cfg.omega, cfg.solver, cfg.workers)
            self._store(name, io.write_schedule_json, sch)
        else:
            log.info("schedule loaded from cache (%s)", name)
        return sch


def cycle_key(cfg: RunConfig) -> dict:
    return {"mu": list(cfg.osc.mu), "f": cfg.f, "settle_time": cfg.settle_time, "tol": cfg.cycle_tol}


def schedule_key(cfg: RunConfig) -> dict:
    return {
        **cycle_key(cfg),
        "n": cfg.graph.n,
        "edges": [list(e) for e in cfg.graph.edges],
        "omega": cfg.omega,
        "solver": cfg.solver.to_dict(),
    }


def resolve_cache(arg: str | None, conf: ConfigFile) -> Cache:
    root = arg or os.environ.get(CACHE_ENV) or conf.output.cache
    return Cache(Path(root) if root else None)


# --------------------------------------------------------------------------
# commands


def cmd_cycle(conf: ConfigFile, out_dir: Path, cache: Cache, args) -> int:
    cfg = conf.run_config()
    cyc = cache.cycle(cfg)
    with io.atomic_outputs(out_dir) as out:
        io.write_cycle_json(cyc, out.path("cycle.json"))
        io.write_cycle_csv(cyc, out.path("cycle.csv"))
    print(f"T = {cyc.T:.6f}  dt = {cyc.dt:.6f}  f = {cyc.f}")
    return EXIT_OK


def _print_schedule(sch: GainSchedule) -> None:
    for (i, j), avg in zip(sch.graph.edges, sch.edge_averages()):
        print(f"edge {i}<-{j}: period-averaged gain {avg:.3f}")
    print(f"overall average gain {sch.average_gain():.3f}, largest gain {sch.betas.max():.3f}")
    bad = np.flatnonzero(~np.asarray(sch.converged))
    if len(bad):
        print(f"warning: solver tolerance not reached at samples {bad.tolist()}", file=sys.stderr)


def cmd_optimize(conf: ConfigFile, out_dir: Path, cache: Cache, args) -> int:
    cfg = conf.run_config()
    sch = cache.schedule(cfg)
    with io.atomic_outputs(out_dir) as out:
        io.write_schedule_json(sch, out.path("schedule.json"))
        io.write_schedule_csv(sch, out.path("schedule.csv"))
    _print_schedule(sch)
    return EXIT_OK


def _simulate(cfg: RunConfig, cache: Cache, schedule: GainSchedule | None = None):
    if cfg.n_periods == 0:
        cyc = schedule.cycle if schedule is not None else cache.cycle(cfg)
        return run_two_phase(cfg, cycle=cyc)
    if schedule is None:
        schedule = cache.schedule(cfg)
    runner = run_hybrid if cfg.hybrid is not None else run_two_phase
    return runner(cfg, schedule=schedule)


def cmd_simulate(conf: ConfigFile, out_dir: Path, cache: Cache, args) -> int:
    cfg = conf.run_config()
    schedule = io.read_schedule(Path(args.schedule)) if args.schedule else None
    if schedule is not None:
        cfg = dataclasses.replace(cfg, f=schedule.f, omega=schedule.omega)
    trace, summary = _simulate(cfg, cache, schedule)
    with io.atomic_outputs(out_dir) as out:
        io.write_trace_csv(trace, out.path("trace.csv"))
        io.write_summary_json(summary, out.path("summary.json"), {"config": conf.model_dump(mode="json")})
    print(f"phase one ended at t = {summary.t_switch:.4f}; phase two ran {summary.duration:.4f}")
    print(f"average gain {summary.average_gain:.3f}; max pairwise deviation {summary.max_dev:.4f} "
          f"({summary.max_dev_at_samples:.4f} at sample times)")
    if cfg.hybrid is not None:
        print(f"re-sync events {summary.resync_events}; strong-coupling fraction {summary.strong_fraction:.4f}")
    return EXIT_OK


SWEEP_COLUMNS = ["parameter", "value", "status", "average_gain", "max_beta", "mean_beta",
                 "max_dev", "max_dev_at_samples"]


def _sweep_config(conf: ConfigFile, parameter: str, value) -> RunConfig:
    try:
        if parameter == "omega":
            return conf.run_config(omega=float(value))
        if parameter == "f":
            if float(value) != int(value):
                raise ValueError
            return conf.run_config(f=int(value))
    except (TypeError, ValueError):
        raise ConfigError(f"sweep value {value!r} does not fit parameter {parameter!r}") from None
    if parameter == "topology":
        if value not in ("chain", "complete"):
            raise ConfigError(f"unknown topology {value!r}")
        return conf.run_config(graph=conf.coupling_graph(kind=str(value)))
    raise ConfigError(f"unknown sweep parameter {parameter!r}")


def cmd_sweep(conf: ConfigFile, out_dir: Path, cache: Cache, args) -> int:
    parameter = args.parameter or conf.sweep.parameter
    values = conf.sweep.values
    configs = [_sweep_config(conf, parameter, v) for v in values]  # config errors abort early
    rows, betas = [], {}
    for value, cfg in zip(values, configs):
        row = {"parameter": parameter, "value": value}
        try:
            sch = cache.schedule(cfg)
            betas[str(value)] = sch.betas
            row.update(status="ok", average_gain=sch.average_gain(), max_beta=float(sch.betas.max()),
                       mean_beta=float(sch.betas.mean()))
            if not args.no_simulate:
                _, summary = _simulate(dataclasses.replace(cfg, hybrid=None), cache, sch)
                row.update(max_dev=summary.max_dev, max_dev_at_samples=summary.max_dev_at_samples)
        except NumericError as exc:
            log.error("%s=%s failed: %s", parameter, value, exc)
            row["status"] = f"error: {exc}"
        rows.append(row)
        print("  ".join(f"{k}={row.get(k, '')}" for k in SWEEP_COLUMNS))
    if all(r["status"] != "ok" for r in rows):
        return EXIT_NUMERIC
    with io.atomic_outputs(out_dir) as out:
        with open(out.path("sweep.csv"), "w", newline="") as fh:
            w = csv.DictWriter(fh, SWEEP_COLUMNS, restval="")
            w.writeheader()
            w.writerows(rows)
        out.path("sweep.json").write_text(json.dumps(rows, indent=1))
        if betas:
            _write_columns(out.path("sweep_betas.csv"), {
                "l": np.arange(max(len(b) for b in betas.values())),
                **{f"beta_{k}": b for k, b in betas.items()},
            })
    return EXIT_OK


# --------------------------------------------------------------------------
# plot data


def _write_columns(path: Path, cols: dict[str, Sequence]) -> None:
    """Columns of possibly unequal length; short ones are padded with blanks."""
    names = list(cols)
    length = max(len(c) for c in cols.values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for k in range(length):
            w.writerow([io._f(cols[c][k]) if k < len(cols[c]) else "" for c in names])


PLOT_STUB = '''"""Plot {fig} from {data}; needs only matplotlib and the CSV next to this file."""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
with open(here / "{data}", newline="") as fh:
    rows = list(csv.DictReader(fh))
cols = {{k: [float(r[k]) for r in rows if r[k] != ""] for k in rows[0]}}
fig, ax = plt.subplots()
for x, y in {pairs!r}:
    ax.plot(cols[x], cols[y], label=y, lw=0.8)
ax.set_xlabel({xlabel!r})
ax.set_ylabel({ylabel!r})
ax.legend(fontsize="small")
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else here / "{fig}.png", dpi=150)
'''


def _phase_plane(trace, mask) -> dict[str, np.ndarray]:
    if not mask.any():
        raise DomainError("trace holds no records for this figure")
    cols = {}
    for i in range(trace.graph.n):
        cols[f"x{i}_1"] = trace.states[mask, 2 * i]
        cols[f"x{i}_2"] = trace.states[mask, 2 * i + 1]
    cols["s_1"], cols["s_2"] = trace.ref[mask, 0], trace.ref[mask, 1]
    return cols


def _pairs_phase(n: int) -> list[tuple[str, str]]:
    return [(f"x{i}_1", f"x{i}_2") for i in range(n)]


def _uncoupled(conf: ConfigFile, duration: float = 30.0, dt: float = 1e-2) -> dict[str, np.ndarray]:
    osc = conf.oscillator_set()
    x0 = conf.x0()
    x0 = default_initial_states(osc) if x0 is None else x0
    cols = {}
    for i, mu in enumerate(osc.mu):
        tr = integrate(lambda x, m=mu: vdp_rhs(x, m), x0[2 * i : 2 * i + 2], (0.0, duration), dt)
        cols[f"x{i}_1"], cols[f"x{i}_2"] = tr.states[:, 0], tr.states[:, 1]
    return cols


def cmd_plotdata(conf: ConfigFile, out_dir: Path, cache: Cache, args) -> int:
    fig = args.figure
    inputs = [Path(p) for p in (args.input or [])]
    if fig != "fig1a" and not inputs:
        raise ConfigError(f"{fig} needs --input")
    if fig == "fig1a":
        cols = _uncoupled(conf)
        pairs, labels = _pairs_phase(conf.oscillator_set().n), ("x_1", "x_2")
    elif fig in ("fig2", "fig7"):
        schedules = [io.read_schedule(p) for p in inputs]
        if fig == "fig2":
            sch = schedules[0]
            cols = {"t": sch.cycle.phi_t}
            for e, (i, j) in enumerate(sch.graph.edges):
                cols[f"k_{i}_{j}"] = sch.gains[:, e, :].mean(axis=1)
            pairs = [("t", c) for c in cols if c != "t"]
            labels = ("t", "gain")
        else:
            cols = {}
            for p, sch in zip(inputs, schedules):
                cols[f"t_{p.stem}"] = sch.cycle.phi_t
                cols[f"beta_{p.stem}"] = sch.betas
            pairs = [(f"t_{p.stem}", f"beta_{p.stem}") for p in inputs]
            labels = ("t", "largest gain")
    else:
        trace = io.read_trace_csv(inputs[0])
        mask = trace.modes == PHASE1 if fig == "fig1b" else trace.modes != PHASE1
        cols = _phase_plane(trace, mask)
        pairs, labels = _pairs_phase(trace.graph.n) + [("s_1", "s_2")], ("x_1", "x_2")
    data = f"{fig}.csv"
    with io.atomic_outputs(out_dir) as out:
        _write_columns(out.path(data), cols)
        out.path(f"plot_{fig}.py").write_text(
            PLOT_STUB.format(fig=fig, data=data, pairs=pairs, xlabel=labels[0], ylabel=labels[1]))
    print(f"wrote {out_dir / data}")
    return EXIT_OK


COMMANDS = {
    "cycle": cmd_cycle,
    "optimize": cmd_optimize,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "plotdata": cmd_plotdata,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vdpsync", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON configuration file (defaults if omitted)")
    common.add_argument("--out", help="output directory (default: output.dir from the config)")
    common.add_argument("--cache", help=f"cache directory for cycles and schedules (env {CACHE_ENV})")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("cycle", parents=[common], help="blended limit cycle and its samples")
    sub.add_parser("optimize", parents=[common], help="optimized gain schedule")
    sp = sub.add_parser("simulate", parents=[common], help="phase one plus phase two (or hybrid)")
    sp.add_argument("--schedule", help="use this schedule file instead of optimizing")
    sw = sub.add_parser("sweep", parents=[common], help="compare omega, f or topology values")
    sw.add_argument("--parameter", choices=("omega", "f", "topology"))
    sw.add_argument("--no-simulate", action="store_true", help="schedules only, no deviation column")
    pd = sub.add_parser("plotdata", parents=[common], help="per-figure data files and a plot script")
    pd.add_argument("--figure", required=True, choices=FIGURES)
    pd.add_argument("--input", action="append", help="trace or schedule file (repeat for fig7)")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    try:
        conf = load_config(args.config) if args.config else parse_config({}, "<defaults>")
        out_dir = Path(args.out or conf.output.dir)
        cache = resolve_cache(args.cache, conf)
        return COMMANDS[args.command](conf, out_dir, cache, args)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
