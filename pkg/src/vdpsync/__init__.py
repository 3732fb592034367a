"""Synchronization of heterogeneous Van der Pol oscillator networks.

Strong static coupling first drives the network onto the limit cycle of the
blended (averaged) dynamics; afterwards a periodic, edge-wise gain schedule,
optimized offline along that cycle, keeps it there with much smaller gains.
"""

from .dynamics import OscillatorSet, blended_rhs, coupled_rhs_scheduled, coupled_rhs_static, linearize, vdp_rhs
from .errors import (ConfigError, DivergenceError, DomainError, IntegrationBlowup, NoCycleError,
                     NonConvergenceError, NumericError, PhaseOneTimeout, SampleOptimizationError,
                     VdpSyncError)
from .gain_opt import (GainSchedule, SolverOptions, grid_oracle, optimize_gains_at_sample,
                       optimize_schedule, sync_metric, value_function)
from .graph import CouplingGraph, EdgeGainSet, build_LK, chain_graph, complete_graph, laplacian
from .limit_cycle import CycleSample, LimitCycle, find_limit_cycle, integrate, sample_cycle
from .simulate import (HybridOptions, RunConfig, RunSummary, SimulationTrace, phase_one, phase_two,
                       run_hybrid, run_two_phase)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "CouplingGraph", "CycleSample", "DivergenceError", "DomainError", "EdgeGainSet",
    "GainSchedule", "HybridOptions", "IntegrationBlowup", "LimitCycle", "NoCycleError",
    "NonConvergenceError", "NumericError", "OscillatorSet", "PhaseOneTimeout", "RunConfig",
    "RunSummary", "SampleOptimizationError", "SimulationTrace", "SolverOptions", "VdpSyncError",
    "blended_rhs", "build_LK", "chain_graph", "complete_graph", "coupled_rhs_scheduled",
    "coupled_rhs_static", "find_limit_cycle", "grid_oracle", "integrate", "laplacian", "linearize",
    "optimize_gains_at_sample", "optimize_schedule", "phase_one", "phase_two", "run_hybrid",
    "run_two_phase", "sample_cycle", "sync_metric", "value_function", "vdp_rhs",
]
