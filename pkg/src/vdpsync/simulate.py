"""Online phases: strong static coupling, then the periodic gain schedule.

The blended reference ``s(t)`` is integrated alongside the network as an
extra, uncoupled oscillator with the mean damping, so one RK4 loop advances
both and every reported deviation compares states at identical times.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .dynamics import OscillatorSet, stacked_rhs
from .errors import DivergenceError, DomainError, PhaseOneTimeout
from .gain_opt import GainSchedule, SolverOptions, optimize_schedule, sync_metric
from .graph import CouplingGraph, build_LK, laplacian
from .limit_cycle import (
    CycleSample,
    DEFAULT_SETTLE_TIME,
    Trajectory,
    crosses_section,
    find_limit_cycle,
    flow,
    refine_crossing,
    sample_cycle,
)

logger = logging.getLogger(__name__)
FloatArray = NDArray[np.float64]

PHASE1, PHASE2, RESYNC = "phase1", "phase2", "resync"
MIN_SUBSTEPS = 10
BLOWUP_LIMIT = 1e6


HYBRID_SIGNALS = ("pairwise", "reference")


@dataclass(frozen=True)
class HybridOptions:
    """Fallback to static coupling when the error signal exceeds ``error_threshold``.

    ``signal`` selects the monitored error: ``"pairwise"`` is
    ``max_{i<j} ||x_i - x_j||``; ``"reference"`` is ``max_i ||x_i - s_ref||``.
    """

    error_threshold: float = 0.5
    resync_epsilon: float | None = None  # defaults to the phase-one epsilon
    signal: str = "pairwise"

    def __post_init__(self) -> None:
        if not self.error_threshold > 0:
            raise DomainError(f"error_threshold must be > 0, got {self.error_threshold}")
        if self.resync_epsilon is not None and not self.resync_epsilon > 0:
            raise DomainError(f"resync_epsilon must be > 0, got {self.resync_epsilon}")
        if self.signal not in HYBRID_SIGNALS:
            raise DomainError(f"signal must be one of {HYBRID_SIGNALS}, got {self.signal!r}")

    def error(self, x: FloatArray, s: FloatArray) -> float:
        if self.signal == "pairwise":
            return pairwise_max_deviation(x)
        return reference_deviation(x, s)


@dataclass(frozen=True)
class RunConfig:
    osc: OscillatorSet
    graph: CouplingGraph
    x0: FloatArray | None = None
    k_c: float = 200.0
    epsilon: float = 0.1
    f: int = 400
    omega: float = 0.01
    dt: float | None = None
    n_periods: int = 20
    hybrid: HybridOptions | None = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    phase_one_budget: float = 50.0  # in periods
    record_per_period: int = 400
    settle_time: float = DEFAULT_SETTLE_TIME
    cycle_tol: float = 1e-6
    workers: int = 1

    def __post_init__(self) -> None:
        if self.graph.n != self.osc.n:
            raise DomainError(f"graph has {self.graph.n} nodes, oscillator set has {self.osc.n}")
        if not self.k_c >= 0:
            raise DomainError(f"k_c must be >= 0, got {self.k_c}")
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be > 0, got {self.epsilon}")
        if int(self.f) < 2:
            raise DomainError(f"f must be >= 2, got {self.f}")
        if not self.omega >= 0:
            raise DomainError(f"omega must be >= 0, got {self.omega}")
        if self.n_periods < 0:
            raise DomainError("n_periods must be >= 0")
        if self.x0 is not None:
            x0 = np.asarray(self.x0, dtype=np.float64).reshape(-1)
            if x0.shape != (2 * self.osc.n,) or not np.all(np.isfinite(x0)):
                raise DomainError(f"x0 must hold {2 * self.osc.n} finite values")
            if not np.any(x0 != 0):
                raise DomainError("not all initial states may be zero")
            object.__setattr__(self, "x0", x0)

    @property
    def resync_epsilon(self) -> float:
        if self.hybrid is None or self.hybrid.resync_epsilon is None:
            return self.epsilon
        return self.hybrid.resync_epsilon


def default_initial_states(osc: OscillatorSet, settle_time: float = DEFAULT_SETTLE_TIME) -> FloatArray:
    """Each oscillator settled from ``[2, 0]`` onto its own (uncoupled) cycle."""
    mu = osc.as_array()
    start = np.tile([2.0, 0.0], osc.n)
    return flow(lambda x: stacked_rhs(x, mu), start, settle_time, 1e-2)


def pairwise_max_deviation(x: FloatArray) -> float:
    """``max_{i<j} ||x_i - x_j||`` for a flat global state."""
    p = x.reshape(-1, 2)
    d = p[:, None, :] - p[None, :, :]
    return float(np.sqrt((d * d).sum(axis=2)).max())


def reference_deviation(x: FloatArray, s: FloatArray) -> float:
    """``max_i ||x_i - s||``."""
    return float(np.sqrt(((x.reshape(-1, 2) - s) ** 2).sum(axis=1)).max())


@dataclass
class SimulationTrace:
    """Records taken on a uniform sub-grid of the integration steps.

    ``gains[k]`` is the gain set active on the step that starts at ``times[k]``;
    ``sample_index`` is the schedule entry (``-1`` when static coupling is on).
    """

    graph: CouplingGraph
    times: FloatArray
    states: FloatArray
    ref: FloatArray
    modes: NDArray[np.str_]
    gains: FloatArray
    sample_index: NDArray[np.int64]

    def __post_init__(self) -> None:
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise DomainError("trace times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def V(self) -> FloatArray:
        P = sync_metric(self.graph.n)
        return np.einsum("ti,ij,tj->t", self.states, P, self.states)

    @property
    def max_dev(self) -> FloatArray:
        return np.array([pairwise_max_deviation(x) for x in self.states])

    @property
    def ref_dev(self) -> FloatArray:
        n = self.graph.n
        d = self.states.reshape(len(self), n, 2) - self.ref[:, None, :]
        return np.sqrt((d * d).sum(axis=2)).max(axis=1)

    @classmethod
    def concat(cls, parts: Sequence["SimulationTrace"]) -> "SimulationTrace":
        parts = [p for p in parts if len(p)]
        g = parts[0].graph
        return cls(
            graph=g,
            times=np.concatenate([p.times for p in parts]),
            states=np.concatenate([p.states for p in parts]),
            ref=np.concatenate([p.ref for p in parts]),
            modes=np.concatenate([p.modes for p in parts]),
            gains=np.concatenate([p.gains for p in parts]),
            sample_index=np.concatenate([p.sample_index for p in parts]),
        )

    def trajectory(self) -> Trajectory:
        return Trajectory(self.times, self.states)


class _Recorder:
    def __init__(self, graph: CouplingGraph):
        self.graph = graph
        self.rows: list[tuple] = []

    def add(self, t, z, mode, gains, l):
        self.rows.append((t, z.copy(), mode, gains, l))

    def trace(self) -> SimulationTrace:
        g = self.graph
        if not self.rows:
            return SimulationTrace(g, np.empty(0), np.empty((0, 2 * g.n)), np.empty((0, 2)),
                                   np.empty(0, dtype="<U6"), np.empty((0, g.m, 2)),
                                   np.empty(0, dtype=np.int64))
        t, z, mode, gains, l = zip(*self.rows)
        Z = np.stack(z)
        return SimulationTrace(
            graph=g,
            times=np.array(t),
            states=Z[:, :-2],
            ref=Z[:, -2:],
            modes=np.array(mode, dtype="<U6"),
            gains=np.stack(gains),
            sample_index=np.array(l, dtype=np.int64),
        )


class _Plant:
    """Augmented system ``[x; s]``: network under linear coupling plus uncoupled reference."""

    def __init__(self, osc: OscillatorSet, graph: CouplingGraph):
        self.n = osc.n
        self.graph = graph
        self.mu = np.append(osc.as_array(), osc.mean_mu)
        self.size = 2 * self.n + 2
        self._lap = graph.laplacian_kron()

    def coupling(self, gains: FloatArray) -> FloatArray:
        M = np.zeros((self.size, self.size))
        M[: 2 * self.n, : 2 * self.n] = build_LK(self.graph, gains)
        return M

    def static_coupling(self, k_c: float) -> FloatArray:
        M = np.zeros((self.size, self.size))
        M[: 2 * self.n, : 2 * self.n] = k_c * self._lap
        return M

    def field(self, M: FloatArray):
        mu = self.mu
        return lambda z: stacked_rhs(z, mu) - M @ z

    @staticmethod
    def step(rhs, z: FloatArray, h: float) -> FloatArray:
        k1 = rhs(z)
        k2 = rhs(z + 0.5 * h * k1)
        k3 = rhs(z + 0.5 * h * k2)
        k4 = rhs(z + h * k3)
        return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check(z: FloatArray, t: float) -> None:
    if not np.all(np.isfinite(z)) or np.abs(z).max() > BLOWUP_LIMIT:
        raise DivergenceError(t, f"network state diverged at t={t:.6g}")


@dataclass(frozen=True)
class _Grid:
    h: float
    m: int  # integration steps per sampling interval
    record_every: int


RK4_STABLE = 2.0  # |h * lambda| kept well inside the RK4 stability region


def coupling_radius(g: CouplingGraph, gains: FloatArray) -> float:
    """Spectral radius of the block Laplacian, largest over a stack of gain sets."""
    gains = np.asarray(gains, dtype=np.float64).reshape(-1, g.m, 2)
    return max(float(np.abs(np.linalg.eigvals(build_LK(g, k))).max()) for k in gains)


def _grid(cycle: CycleSample, dt: float | None, record_per_period: int, stiffness: float = 0.0) -> _Grid:
    """Integration step dividing the sampling interval at least ``MIN_SUBSTEPS`` times.

    ``stiffness`` (largest eigenvalue magnitude of the linear part) tightens the
    step for explicit-RK4 stability.
    """
    dt_max = cycle.T / 4000 if dt is None else float(dt)
    if stiffness > 0:
        dt_max = min(dt_max, RK4_STABLE / stiffness)
    m = max(MIN_SUBSTEPS, math.ceil(cycle.dt / dt_max - 1e-9))
    h = cycle.dt / m
    per_period = cycle.f * m
    every = max(1, round(per_period / max(1, record_per_period)))
    return _Grid(h=h, m=m, record_every=every)


def _stiffness(osc: OscillatorSet, g: CouplingGraph, k_c: float | None, schedule=None) -> float:
    rho = 0.0
    if k_c is not None:
        rho = k_c * float(np.abs(np.linalg.eigvals(laplacian(g))).max())
    if schedule is not None:
        rho = max(rho, coupling_radius(g, schedule.gains))
    return rho + 3.0 * max(osc.mu)


def _network_mean(z: FloatArray, n: int) -> FloatArray:
    return z[: 2 * n].reshape(-1, 2).mean(axis=0)


def _strong_coupling(plant, z, t, k_c, eps, anchor, grid, budget, rec, mode):
    """Static coupling until synchronized, then until the network reaches the anchor.

    ``z = [x; s]`` with ``s`` the blended reference. Synchronization is
    tested at sampling instants (``max_i ||x_i - s|| <= eps``); afterwards
    the run stops at the first downward section crossing of the network mean
    at which every ``x_i`` lies within ``eps`` of ``anchor``.
    Returns ``(t_cross, z_cross)``.
    """
    n = plant.n
    rhs = plant.field(plant.static_coupling(k_c))
    uniform = np.full((plant.graph.m, 2), float(k_c))
    mean_x2 = lambda v: float(v[1 : 2 * n : 2].mean())  # noqa: E731
    t_start, j = t, 0
    synced = False
    while t - t_start < budget:
        if j % grid.record_every == 0:
            rec.add(t, z, mode, uniform, -1)
        if not synced and j % grid.m == 0:
            synced = reference_deviation(z[: 2 * n], z[2 * n :]) <= eps
        zn = plant.step(rhs, z, grid.h)
        _check(zn, t + grid.h)
        if synced and crosses_section(_network_mean(z, n), _network_mean(zn, n)):
            tau, zc = refine_crossing(rhs, z, grid.h, component=mean_x2)
            if reference_deviation(zc[: 2 * n], anchor) <= eps:
                return t + tau, zc
        z = zn
        j += 1
        t = t_start + j * grid.h
    raise PhaseOneTimeout(f"no synchronization within {budget:.6g} time units (k_c={k_c})")


def phase_one(cfg: RunConfig, cycle: CycleSample, x0: ArrayLike | None = None, grid: _Grid | None = None):
    """Strong static coupling from ``x(0)`` until synchronized at the anchor.

    The reference starts at the mean initial state. Returns
    ``(trace, handoff_state, t_switch)``.
    """
    plant = _Plant(cfg.osc, cfg.graph)
    x0 = initial_states(cfg) if x0 is None else np.asarray(x0, dtype=np.float64)
    if grid is None:
        grid = _grid(cycle, cfg.dt, cfg.record_per_period, _stiffness(cfg.osc, cfg.graph, cfg.k_c))
    z = np.concatenate([x0, x0.reshape(-1, 2).mean(axis=0)])
    rec = _Recorder(cfg.graph)
    t_switch, zc = _strong_coupling(plant, z, 0.0, cfg.k_c, cfg.epsilon, cycle.s0_anchor, grid,
                                    cfg.phase_one_budget * cycle.T, rec, PHASE1)
    return rec.trace(), zc[: 2 * plant.n], t_switch


def initial_states(cfg: RunConfig) -> FloatArray:
    return cfg.x0 if cfg.x0 is not None else default_initial_states(cfg.osc, cfg.settle_time)


def _run_schedule(cfg, plant, schedule, handoff, t_switch, grid, hybrid, rec):
    """Phase two from ``t_switch``; with ``hybrid`` set, re-synchronize on error breaches.

    Returns ``(resync_events, strong_coupling_time)``.
    """
    n, f, cycle = plant.n, schedule.f, schedule.cycle
    couplings = [plant.field(plant.coupling(schedule.gains[l])) for l in range(f)]
    t_final = t_switch + cfg.n_periods * cycle.T
    z = np.concatenate([np.asarray(handoff, dtype=np.float64), cycle.s0_anchor])
    t0, t = t_switch, t_switch
    total = cfg.n_periods * f  # sampling intervals left in this segment
    done, l = 0, 0
    events, strong_time = 0, 0.0
    while done < total:
        rhs, gains = couplings[l], schedule.gains[l]
        base = done * grid.m
        for j in range(grid.m):
            if (base + j) % grid.record_every == 0:
                rec.add(t0 + (base + j) * grid.h, z, PHASE2, gains, l)
            z = plant.step(rhs, z, grid.h)
        done += 1
        t = t0 + done * grid.m * grid.h
        _check(z, t)
        l = (l + 1) % f
        if hybrid is None or done >= total:
            continue
        if hybrid.error(z[: 2 * n], z[2 * n :]) > hybrid.error_threshold:
            events += 1
            # the reference restarts at the network mean, as at the start of phase one
            zr = np.concatenate([z[: 2 * n], z[: 2 * n].reshape(-1, 2).mean(axis=0)])
            tc, zc = _strong_coupling(plant, zr, t, cfg.k_c, cfg.resync_epsilon, cycle.s0_anchor,
                                      grid, cfg.phase_one_budget * cycle.T, rec, RESYNC)
            strong_time += tc - t
            # resume at sample 0 with the reference back on the anchor
            z = np.concatenate([zc[: 2 * n], cycle.s0_anchor])
            t0 = t = tc
            total = max(0, int(math.floor((t_final - tc) / cycle.dt + 1e-9)))
            done, l = 0, 0
    rec.add(t, z, PHASE2, schedule.gains[l], l)
    return events, strong_time


def phase_two(handoff: ArrayLike, schedule: GainSchedule, n_periods: int, osc: OscillatorSet,
              g: CouplingGraph, t_switch: float = 0.0, dt: float | None = None,
              record_per_period: int = 400) -> SimulationTrace:
    """Zero-order-hold application of the schedule for ``n_periods`` periods.

    Gains switch every sampling interval and wrap to sample 0 after the last one.
    """
    cfg = RunConfig(osc=osc, graph=g, f=schedule.f, omega=schedule.omega, n_periods=n_periods,
                    dt=dt, record_per_period=record_per_period)
    plant = _Plant(osc, g)
    grid = _grid(schedule.cycle, dt, record_per_period, _stiffness(osc, g, None, schedule))
    rec = _Recorder(g)
    _run_schedule(cfg, plant, schedule, handoff, t_switch, grid, None, rec)
    return rec.trace()


# --------------------------------------------------------------------------
# full runs and metrics


@dataclass
class RunSummary:
    T: float
    f: int
    omega: float
    t_switch: float
    duration: float
    edge_average_gains: list[float]
    average_gain: float
    max_dev_per_period: list[float]
    max_dev: float
    max_dev_at_samples: float
    V_at_periods: list[float]
    largest_gain_first_period: list[float]
    resync_events: int
    strong_fraction: float

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def compute_cycle(cfg: RunConfig) -> CycleSample:
    lc = find_limit_cycle(cfg.osc, settle_time=cfg.settle_time, tol=cfg.cycle_tol)
    return sample_cycle(lc.anchor, lc.period, cfg.f, cfg.osc)


def compute_metrics(trace: SimulationTrace, cycle: CycleSample, omega: float = math.nan) -> RunSummary:
    """Aggregate a trace; everything after the first non-phase-one record counts as phase two.

    Gain averages are over the records after the switch (uniformly spaced in
    time), first per diagonal entry and edge, then over entries and edges.
    """
    if len(trace) == 0:
        raise DomainError("empty trace")
    post = trace.modes != PHASE1
    T = cycle.T
    if post.any():
        first = int(np.argmax(post))
        t_switch = float(trace.times[first])
    else:
        first, t_switch = len(trace), float(trace.times[-1])
    md = trace.max_dev
    V = trace.V
    times = trace.times[first:]
    duration = float(times[-1] - t_switch) if len(times) else 0.0
    if len(times):
        gains = trace.gains[first:]
        edge_avg = gains.mean(axis=(0, 2))
        period = np.floor((times - t_switch) / T + 1e-9).astype(int)
        n_per = max(1, int(round(duration / T))) if duration > 0 else 1
        period = np.minimum(period, n_per - 1)
        per_max = [float(md[first:][period == k].max()) for k in range(n_per) if np.any(period == k)]
        V_per = []
        for k in range(n_per + 1):
            i = int(np.argmin(np.abs(times - (t_switch + k * T))))
            V_per.append(float(V[first + i]))
        modes = trace.modes[first:]
        on_sample = (modes == PHASE2) & _on_sample_grid(times, t_switch, cycle.dt, trace)
        # a re-sync starts at the sampling instant whose error breached the threshold
        on_sample[1:] |= (modes[1:] == RESYNC) & (modes[:-1] != RESYNC)
        at_samples = float(md[first:][on_sample].max()) if on_sample.any() else float(md[first:].max())
        idx = trace.sample_index[first:]
        largest = []
        for l in range(cycle.f):
            rows = np.flatnonzero(idx == l)
            if len(rows):
                largest.append(float(gains[rows[0]].max()))
        resync = trace.modes[first:] == RESYNC
        events = int(np.sum(resync[1:] & ~resync[:-1]) + (1 if len(resync) and resync[0] else 0))
        dts = np.diff(times)
        strong_time = float(dts[resync[:-1]].sum()) if len(dts) else 0.0
        strong_fraction = strong_time / duration if duration > 0 else 0.0
    else:
        edge_avg = np.zeros(trace.graph.m)
        per_max, V_per, largest = [], [], []
        at_samples = float(md[-1])
        events, strong_fraction = 0, 0.0
    return RunSummary(
        T=T,
        f=cycle.f,
        omega=float(omega),
        t_switch=t_switch,
        duration=duration,
        edge_average_gains=[float(v) for v in edge_avg],
        average_gain=float(np.mean(edge_avg)) if len(edge_avg) else 0.0,
        max_dev_per_period=per_max,
        max_dev=float(md[first:].max()) if len(times) else float(md.max()),
        max_dev_at_samples=at_samples,
        V_at_periods=V_per,
        largest_gain_first_period=largest,
        resync_events=events,
        strong_fraction=strong_fraction,
    )


def _on_sample_grid(times, t0, delta, trace) -> NDArray[np.bool_]:
    """Rows whose time sits on a sampling instant of the current schedule segment."""
    # a record starts a sampling interval when its sample index differs from the previous row
    idx = trace.sample_index[len(trace) - len(times):]
    starts = np.ones(len(idx), dtype=bool)
    starts[1:] = idx[1:] != idx[:-1]
    return starts & (idx >= 0)


def _run(cfg: RunConfig, cycle: CycleSample | None, schedule: GainSchedule | None,
         hybrid: HybridOptions | None) -> tuple[SimulationTrace, RunSummary]:
    cycle = cycle if cycle is not None else (schedule.cycle if schedule is not None else compute_cycle(cfg))
    if schedule is None and cfg.n_periods > 0:
        schedule = optimize_schedule(cycle, cfg.osc, cfg.graph, cfg.omega, cfg.solver, cfg.workers)
    if schedule is not None:
        if schedule.graph != cfg.graph:
            raise DomainError("schedule was built for a different graph")
        cycle = schedule.cycle
    plant = _Plant(cfg.osc, cfg.graph)
    grid = _grid(cycle, cfg.dt, cfg.record_per_period,
                 _stiffness(cfg.osc, cfg.graph, cfg.k_c, schedule))
    x0 = initial_states(cfg)
    p1, handoff, t_switch = phase_one(cfg, cycle, x0, grid)
    parts = [p1]
    if cfg.n_periods > 0:
        rec = _Recorder(cfg.graph)
        _run_schedule(cfg, plant, schedule, handoff, t_switch, grid, hybrid, rec)
        parts.append(rec.trace())
    else:
        # phase-one-only run: close the trace with the handoff state
        rec = _Recorder(cfg.graph)
        z = np.concatenate([handoff, cycle.s0_anchor])
        rec.add(t_switch, z, PHASE1, np.full((cfg.graph.m, 2), float(cfg.k_c)), -1)
        parts.append(rec.trace())
    trace = SimulationTrace.concat(parts)
    return trace, compute_metrics(trace, cycle, cfg.omega)


def run_two_phase(cfg: RunConfig, cycle: CycleSample | None = None,
                  schedule: GainSchedule | None = None) -> tuple[SimulationTrace, RunSummary]:
    """Offline cycle and schedule (unless given), then phase one and phase two."""
    return _run(cfg, cycle, schedule, None)


def run_hybrid(cfg: RunConfig, cycle: CycleSample | None = None,
               schedule: GainSchedule | None = None) -> tuple[SimulationTrace, RunSummary]:
    """Two-phase run that falls back to static coupling whenever the
    ``cfg.hybrid`` error signal exceeds its threshold at a sampling instant."""
    if cfg.hybrid is None:
        raise DomainError("run_hybrid needs cfg.hybrid")
    return _run(cfg, cycle, schedule, cfg.hybrid)
