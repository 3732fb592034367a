"""Run configuration files (YAML or JSON) and their translation to library objects."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .dynamics import OscillatorSet
from .errors import ConfigError, DomainError
from .gain_opt import SolverOptions
from .graph import CouplingGraph, chain_graph, complete_graph
from .simulate import HybridOptions, RunConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class OscillatorsSection(_Strict):
    mu: list[float] = Field(default_factory=lambda: [0.5, 3.0, 6.0, 10.0], min_length=2)

    @field_validator("mu")
    @classmethod
    def _positive(cls, v: list[float]) -> list[float]:
        if any(not (m > 0) for m in v):
            raise ValueError("every mu must be > 0")
        return v


class GraphSection(_Strict):
    kind: Literal["chain", "complete", "edges"] = "chain"
    n: Optional[int] = None
    edges: Optional[list[tuple[int, int]]] = None

    @model_validator(mode="after")
    def _edges_given(self) -> "GraphSection":
        if self.kind == "edges" and not self.edges:
            raise ValueError("kind 'edges' needs an explicit edge list")
        if self.kind != "edges" and self.edges is not None:
            raise ValueError(f"edge list given but kind is {self.kind!r}")
        return self


class CouplingSection(_Strict):
    k_c: float = Field(200.0, ge=0)
    epsilon: float = Field(0.1, gt=0)


class ScheduleSection(_Strict):
    f: int = Field(400, ge=2)
    omega: float = Field(0.01, ge=0)


class CycleSection(_Strict):
    settle_time: float = Field(100.0, gt=0)
    tol: float = Field(1e-6, gt=0)


class HybridSection(_Strict):
    error_threshold: float = Field(0.5, gt=0)
    resync_epsilon: Optional[float] = Field(None, gt=0)
    signal: Literal["pairwise", "reference"] = "pairwise"


class SimulationSection(_Strict):
    n_periods: int = Field(20, ge=0)
    dt: Optional[float] = Field(None, gt=0)
    record_per_period: int = Field(400, ge=1)
    phase_one_budget: float = Field(50.0, gt=0)
    hybrid: Optional[HybridSection] = None


class SolverSection(_Strict):
    method: Literal["barrier", "subgradient"] = "barrier"
    gap_tol: float = Field(1e-8, gt=0)
    t_growth: float = Field(20.0, gt=1)
    newton_tol: float = Field(1e-7, gt=0)
    max_newton: int = Field(200, ge=1)
    max_stages: int = Field(60, ge=1)
    gain_cap: float = Field(1e4, gt=0)
    subgrad_iters: int = Field(20000, ge=1)


class SweepSection(_Strict):
    parameter: Literal["omega", "f", "topology"] = "omega"
    values: list[Union[float, int, str]] = Field(default_factory=lambda: [0.001, 0.01, 0.1, 1.0])


class OutputSection(_Strict):
    dir: str = "out"
    cache: Optional[str] = None


class ConfigFile(_Strict):
    oscillators: OscillatorsSection = Field(default_factory=OscillatorsSection)
    graph: GraphSection = Field(default_factory=GraphSection)
    initial_states: Union[None, Literal["cycle", "random"], list[tuple[float, float]]] = None
    seed: int = 0
    coupling: CouplingSection = Field(default_factory=CouplingSection)
    schedule: ScheduleSection = Field(default_factory=ScheduleSection)
    cycle: CycleSection = Field(default_factory=CycleSection)
    simulation: SimulationSection = Field(default_factory=SimulationSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    output: OutputSection = Field(default_factory=OutputSection)
    workers: int = Field(1, ge=1)

    # -- conversion -------------------------------------------------------

    def oscillator_set(self) -> OscillatorSet:
        return OscillatorSet(self.oscillators.mu)

    def coupling_graph(self, kind: str | None = None) -> CouplingGraph:
        n = self.graph.n or len(self.oscillators.mu)
        kind = kind or self.graph.kind
        if kind == "chain":
            return chain_graph(n)
        if kind == "complete":
            return complete_graph(n)
        if kind == "edges":
            return CouplingGraph(n, self.graph.edges or [])
        raise DomainError(f"unknown graph kind {kind!r}")

    def solver_options(self) -> SolverOptions:
        return SolverOptions(**self.solver.model_dump())

    def x0(self) -> np.ndarray | None:
        n = len(self.oscillators.mu)
        if self.initial_states in (None, "cycle"):
            return None
        if self.initial_states == "random":
            rng = np.random.default_rng(self.seed)
            return rng.uniform(-2.0, 2.0, size=2 * n)
        x = np.asarray(self.initial_states, dtype=np.float64)
        if x.shape != (n, 2):
            raise DomainError(f"initial_states must list {n} pairs, got shape {x.shape}")
        return x.reshape(-1)

    def run_config(self, **overrides: Any) -> RunConfig:
        sim = self.simulation
        hybrid = None
        if sim.hybrid is not None:
            hybrid = HybridOptions(**sim.hybrid.model_dump())
        kw = dict(
            osc=self.oscillator_set(),
            graph=self.coupling_graph(),
            x0=self.x0(),
            k_c=self.coupling.k_c,
            epsilon=self.coupling.epsilon,
            f=self.schedule.f,
            omega=self.schedule.omega,
            dt=sim.dt,
            n_periods=sim.n_periods,
            hybrid=hybrid,
            solver=self.solver_options(),
            phase_one_budget=sim.phase_one_budget,
            record_per_period=sim.record_per_period,
            settle_time=self.cycle.settle_time,
            cycle_tol=self.cycle.tol,
            workers=self.workers,
        )
        kw.update(overrides)
        return RunConfig(**kw)


def _format_errors(exc: ValidationError, source: str) -> str:
    lines = [f"{source}: invalid configuration"]
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"  {loc}: {err['msg']}")
    return "\n".join(lines)


def parse_config(data: Any, source: str = "<config>") -> ConfigFile:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        cfg = ConfigFile.model_validate(data)
        cfg.coupling_graph()
        cfg.oscillator_set()
        cfg.x0()
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, source)) from None
    except DomainError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def load_config(path: str | Path) -> ConfigFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read configuration ({exc.strerror})") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed configuration: {exc}") from None
    return parse_config(data, str(path))


def content_hash(payload: dict) -> str:
    """Stable hash of a JSON-serializable payload (cache keys)."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:24]
