"""File formats for cycles, gain schedules, traces and run summaries.

Floats are written with ``repr`` so a write/read round trip is bit-exact.
"""

from __future__ import annotations

import csv
import functools
import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DomainError
from .gain_opt import GainSchedule
from .graph import CouplingGraph
from .limit_cycle import CycleSample
from .simulate import RunSummary, SimulationTrace

SCHEDULE_FORMAT = "vdpsync.schedule"
CYCLE_FORMAT = "vdpsync.cycle"
FORMAT_VERSION = 1


def _f(x: float) -> str:
    return repr(float(x))


def _reader(fn):
    """Report malformed file content as DomainError, naming the file."""

    @functools.wraps(fn)
    def wrapper(path, *args, **kwargs):
        try:
            return fn(path, *args, **kwargs)
        except DomainError:
            raise
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise DomainError(f"{path}: malformed {fn.__name__.split('_')[1]} file ({exc!r})") from None

    return wrapper


# --------------------------------------------------------------------------
# atomic output


@contextmanager
def atomic_outputs(out_dir: Path) -> Iterator["OutputSet"]:
    """Collect files in temporaries and move them into place only on success."""
    out = OutputSet(Path(out_dir))
    try:
        yield out
    except BaseException:
        out.discard()
        raise
    out.commit()


class OutputSet:
    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self._pending: list[tuple[Path, Path]] = []

    def path(self, name: str) -> Path:
        """Temporary path that becomes ``out_dir / name`` on commit."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=self.out_dir)
        os.close(fd)
        self._pending.append((Path(tmp), self.out_dir / name))
        return Path(tmp)

    def commit(self) -> None:
        for tmp, final in self._pending:
            os.replace(tmp, final)
        self._pending.clear()

    def discard(self) -> None:
        for tmp, _ in self._pending:
            tmp.unlink(missing_ok=True)
        self._pending.clear()

    @property
    def names(self) -> list[str]:
        return [final.name for _, final in self._pending]


# --------------------------------------------------------------------------
# cycle


def cycle_header(cycle: CycleSample) -> dict:
    return {
        "format": CYCLE_FORMAT,
        "version": FORMAT_VERSION,
        "T": cycle.T,
        "dt": cycle.dt,
        "f": cycle.f,
        "mu_mean": cycle.mu_mean,
        "step": cycle.step,
        "s0_anchor": [float(v) for v in cycle.s0_anchor],
    }


def cycle_to_dict(cycle: CycleSample) -> dict:
    d = cycle_header(cycle)
    d["phi_t"] = [float(v) for v in cycle.phi_t]
    d["phi_s"] = [[float(a), float(b)] for a, b in cycle.phi_s]
    return d


def cycle_from_dict(d: dict) -> CycleSample:
    if d.get("format") != CYCLE_FORMAT:
        raise DomainError(f"not a cycle document (format={d.get('format')!r})")
    return CycleSample(
        T=float(d["T"]),
        dt=float(d["dt"]),
        f=int(d["f"]),
        phi_t=np.array(d["phi_t"], dtype=np.float64),
        phi_s=np.array(d["phi_s"], dtype=np.float64).reshape(-1, 2),
        s0_anchor=np.array(d["s0_anchor"], dtype=np.float64),
        mu_mean=float(d["mu_mean"]),
        step=float(d["step"]),
    )


def write_cycle_json(cycle: CycleSample, path: Path) -> None:
    Path(path).write_text(json.dumps(cycle_to_dict(cycle), indent=1))


@_reader
def read_cycle_json(path: Path) -> CycleSample:
    return cycle_from_dict(json.loads(Path(path).read_text()))


def write_cycle_csv(cycle: CycleSample, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["l", "t", "s_1", "s_2"])
        for l, (t, s) in enumerate(zip(cycle.phi_t, cycle.phi_s)):
            w.writerow([l, _f(t), _f(s[0]), _f(s[1])])


# --------------------------------------------------------------------------
# schedule


def schedule_header(s: GainSchedule) -> dict:
    return {
        "format": SCHEDULE_FORMAT,
        "version": FORMAT_VERSION,
        "n": s.graph.n,
        "f": s.f,
        "T": s.cycle.T,
        "dt": s.cycle.dt,
        "omega": s.omega,
        "graph_hash": s.graph.digest(),
        "edges": [list(e) for e in s.graph.edges],
        "mu_mean": s.cycle.mu_mean,
        "step": s.cycle.step,
        "s0_anchor": [float(v) for v in s.cycle.s0_anchor],
    }


def schedule_to_dict(s: GainSchedule) -> dict:
    samples = []
    for l in range(s.f):
        samples.append({
            "l": l,
            "t": float(s.cycle.phi_t[l]),
            "state": [float(v) for v in s.cycle.phi_s[l]],
            "alpha": float(s.alphas[l]),
            "beta": float(s.betas[l]),
            "converged": bool(s.converged[l]),
            "gains": [[float(a), float(b)] for a, b in s.gains[l]],
        })
    return {"header": schedule_header(s), "samples": samples}


def schedule_from_dict(d: dict) -> GainSchedule:
    h = d.get("header", {})
    if h.get("format") != SCHEDULE_FORMAT:
        raise DomainError(f"not a schedule document (format={h.get('format')!r})")
    if h.get("version") != FORMAT_VERSION:
        raise DomainError(f"unsupported schedule version {h.get('version')!r}")
    g = CouplingGraph(h["n"], h["edges"])
    if g.digest() != h["graph_hash"]:
        raise DomainError("graph hash mismatch in schedule header")
    samples = sorted(d["samples"], key=lambda r: r["l"])
    f = int(h["f"])
    if len(samples) != f:
        raise DomainError(f"schedule declares f={f} but holds {len(samples)} samples")
    cycle = CycleSample(
        T=float(h["T"]),
        dt=float(h["dt"]),
        f=f,
        phi_t=np.array([r["t"] for r in samples], dtype=np.float64),
        phi_s=np.array([r["state"] for r in samples], dtype=np.float64),
        s0_anchor=np.array(h["s0_anchor"], dtype=np.float64),
        mu_mean=float(h["mu_mean"]),
        step=float(h["step"]),
    )
    return GainSchedule(
        graph=g,
        gains=np.array([r["gains"] for r in samples], dtype=np.float64),
        alphas=np.array([r["alpha"] for r in samples], dtype=np.float64),
        betas=np.array([r["beta"] for r in samples], dtype=np.float64),
        omega=float(h["omega"]),
        cycle=cycle,
        converged=np.array([bool(r.get("converged", True)) for r in samples]),
    )


def write_schedule_json(s: GainSchedule, path: Path) -> None:
    Path(path).write_text(json.dumps(schedule_to_dict(s), indent=1))


@_reader
def read_schedule_json(path: Path) -> GainSchedule:
    return schedule_from_dict(json.loads(Path(path).read_text()))


SCHEDULE_COLUMNS = ["l", "t", "s_1", "s_2", "alpha", "beta", "converged", "edge_i", "edge_j", "k_1", "k_2"]


def write_schedule_csv(s: GainSchedule, path: Path) -> None:
    """One row per edge per sample; the header travels in ``# key: json`` comment lines."""
    with open(path, "w", newline="") as fh:
        for key, val in schedule_header(s).items():
            fh.write(f"# {key}: {json.dumps(val)}\n")
        w = csv.writer(fh)
        w.writerow(SCHEDULE_COLUMNS)
        for l in range(s.f):
            st = s.cycle.phi_s[l]
            for e, (i, j) in enumerate(s.graph.edges):
                w.writerow([l, _f(s.cycle.phi_t[l]), _f(st[0]), _f(st[1]), _f(s.alphas[l]),
                            _f(s.betas[l]), int(s.converged[l]), i, j,
                            _f(s.gains[l, e, 0]), _f(s.gains[l, e, 1])])


@_reader
def read_schedule_csv(path: Path) -> GainSchedule:
    header: dict = {}
    rows: list[dict] = []
    with open(path, newline="") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                header[key.strip()] = json.loads(val)
            else:
                lines.append(line)
        rows = list(csv.DictReader(lines))
    samples: dict[int, dict] = {}
    g = CouplingGraph(header["n"], header["edges"])
    for r in rows:
        l = int(r["l"])
        rec = samples.setdefault(l, {
            "l": l, "t": float(r["t"]), "state": [float(r["s_1"]), float(r["s_2"])],
            "alpha": float(r["alpha"]), "beta": float(r["beta"]),
            "converged": bool(int(r["converged"])), "gains": [[0.0, 0.0] for _ in range(g.m)],
        })
        e = g.edge_index((int(r["edge_i"]), int(r["edge_j"])))
        rec["gains"][e] = [float(r["k_1"]), float(r["k_2"])]
    return schedule_from_dict({"header": header, "samples": list(samples.values())})


def read_schedule(path: Path) -> GainSchedule:
    path = Path(path)
    if path.suffix == ".csv":
        return read_schedule_csv(path)
    return read_schedule_json(path)


# --------------------------------------------------------------------------
# traces and summaries


def trace_columns(g: CouplingGraph) -> list[str]:
    cols = ["time", "mode", "sample"]
    cols += [f"x{i}_{d}" for i in range(g.n) for d in (1, 2)]
    cols += ["s_1", "s_2", "V", "max_dev"]
    cols += [f"k_{i}_{j}_{d}" for (i, j) in g.edges for d in (1, 2)]
    return cols


def write_trace_csv(trace: SimulationTrace, path: Path) -> None:
    g = trace.graph
    V, md = trace.V, trace.max_dev
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trace_columns(g))
        for k in range(len(trace)):
            row = [_f(trace.times[k]), str(trace.modes[k]), int(trace.sample_index[k])]
            row += [_f(v) for v in trace.states[k]]
            row += [_f(trace.ref[k, 0]), _f(trace.ref[k, 1]), _f(V[k]), _f(md[k])]
            row += [_f(v) for v in trace.gains[k].reshape(-1)]
            w.writerow(row)


@_reader
def read_trace_csv(path: Path, g: CouplingGraph | None = None) -> SimulationTrace:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            cols = next(reader)
        except StopIteration:
            raise DomainError(f"{path}: empty trace file") from None
        rows = list(reader)
    if not rows:
        raise DomainError(f"{path}: trace has no records")
    if g is None:
        n = sum(1 for c in cols if c.startswith("x") and c.endswith("_1"))
        edges = [tuple(int(v) for v in c.split("_")[1:3]) for c in cols if c.startswith("k_") and c.endswith("_1")]
        g = CouplingGraph(n, edges)
    if cols != trace_columns(g):
        raise DomainError(f"{path}: unexpected trace columns")
    n, m = g.n, g.m
    times = np.array([float(r[0]) for r in rows])
    modes = np.array([r[1] for r in rows], dtype="<U6")
    sample = np.array([int(r[2]) for r in rows], dtype=np.int64)
    num = np.array([[float(v) for v in r[3:]] for r in rows])
    states = num[:, : 2 * n]
    ref = num[:, 2 * n : 2 * n + 2]
    gains = num[:, 2 * n + 4 :].reshape(-1, m, 2)
    return SimulationTrace(g, times, states, ref, modes, gains, sample)


def write_summary_json(summary: RunSummary, path: Path, extra: dict | None = None) -> None:
    d = summary.to_dict()
    if extra:
        d.update(extra)
    Path(path).write_text(json.dumps(d, indent=1))
