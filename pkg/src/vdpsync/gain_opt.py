"""Lyapunov-based edge-gain optimization along the blended limit cycle.

For every cycle sample the oscillators are linearized and the gains solve::

    minimize    alpha + omega * beta
    subject to  S(K) = (A - L_K)^T P + P (A - L_K)  <=  alpha * I
                0 <= K_ij <= beta * I_2          (diagonal K_ij, every edge)

With ``P`` fixed and ``L_K`` affine in the gain entries this is a small
semidefinite program. It is solved here by a log-barrier path-following
Newton method (``method="barrier"``, default) or by projected subgradient
descent on ``lambda_max(S(K)) + omega * max(K)`` (``method="subgradient"``).
The affine terms ``b`` of the linearization are dropped from the design.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .dynamics import OscillatorSet, linearize
from .errors import DomainError, SampleOptimizationError
from .graph import CouplingGraph, EdgeGainSet, as_gain_array, build_LK, edge_basis
from .limit_cycle import CycleSample

logger = logging.getLogger(__name__)
FloatArray = NDArray[np.float64]

FEASIBILITY_MARGIN = 1e-9


def sync_metric(n: int) -> FloatArray:
    """``P = (n I_n - 1 1^T) kron I_2``; ``x^T P x`` sums squared pairwise distances."""
    if n < 2:
        raise DomainError(f"need n >= 2, got {n}")
    return np.kron(n * np.eye(n) - np.ones((n, n)), np.eye(2))


def value_function(x: ArrayLike, P: FloatArray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (P.shape[0],):
        raise DomainError(f"state shape {x.shape} does not match P {P.shape}")
    return float(x @ P @ x)


def block_diag_A(A_blocks: Sequence[ArrayLike]) -> FloatArray:
    n = len(A_blocks)
    A = np.zeros((2 * n, 2 * n))
    for i, Ai in enumerate(A_blocks):
        Ai = np.asarray(Ai, dtype=np.float64)
        if Ai.shape != (2, 2):
            raise DomainError(f"A block {i} has shape {Ai.shape}")
        A[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = Ai
    if not np.all(np.isfinite(A)):
        raise DomainError("non-finite entry in A blocks")
    return A


def _sym(S: FloatArray) -> FloatArray:
    return 0.5 * (S + S.T)


def lyapunov_form(
    A_blocks: Sequence[ArrayLike], gains, g: CouplingGraph, P: FloatArray
) -> FloatArray:
    """Symmetrized ``(A - L_K)^T P + P (A - L_K)``."""
    if len(A_blocks) != g.n:
        raise DomainError(f"{len(A_blocks)} A blocks for a graph with {g.n} nodes")
    M = block_diag_A(A_blocks) - build_LK(g, gains)
    return _sym(M.T @ P + P @ M)


def affine_lyapunov_data(
    A_blocks: Sequence[ArrayLike], g: CouplingGraph, P: FloatArray
) -> tuple[FloatArray, FloatArray]:
    """``S0`` and ``G`` with ``S(k) = S0 - sum_q k_q G[q]`` (``k`` flattened ``(m, 2)`` gains)."""
    if len(A_blocks) != g.n:
        raise DomainError(f"{len(A_blocks)} A blocks for a graph with {g.n} nodes")
    A = block_diag_A(A_blocks)
    S0 = _sym(A.T @ P + P @ A)
    E = edge_basis(g)
    G = np.einsum("qji,jk->qik", E, P) + np.einsum("ij,qjk->qik", P, E)
    G = 0.5 * (G + G.transpose(0, 2, 1))
    return S0, G


def lambda_max(S: FloatArray) -> float:
    return float(np.linalg.eigvalsh(S)[-1])


# --------------------------------------------------------------------------
# solvers


@dataclass(frozen=True)
class SolverOptions:
    method: str = "barrier"
    gap_tol: float = 1e-8
    t_growth: float = 20.0
    newton_tol: float = 1e-7
    max_newton: int = 200
    max_stages: int = 60
    gain_cap: float = 1e4
    subgrad_iters: int = 20000

    def __post_init__(self) -> None:
        if self.method not in ("barrier", "subgradient"):
            raise DomainError(f"unknown solver method {self.method!r}")
        if not (self.gain_cap > 0 and self.gap_tol > 0 and self.t_growth > 1):
            raise DomainError("invalid solver options")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SolveResult:
    """Gain vector ``k`` plus the tight ``alpha``/``beta`` it induces."""

    k: FloatArray
    alpha: float
    beta: float
    objective: float
    converged: bool
    gap: float
    iterations: int


def objective_value(S0: FloatArray, G: FloatArray, k: FloatArray, omega: float) -> float:
    S = S0 - np.tensordot(k, G, axes=1)
    return lambda_max(_sym(S)) + omega * (float(k.max()) if k.size else 0.0)


def _finish(S0, G, k, omega, converged, gap, iterations) -> SolveResult:
    k = np.maximum(np.asarray(k, dtype=np.float64), 0.0)
    alpha = lambda_max(_sym(S0 - np.tensordot(k, G, axes=1)))
    beta = float(k.max()) if k.size else 0.0
    return SolveResult(k, alpha, beta, alpha + omega * beta, converged, gap, iterations)


def _witness(S0: FloatArray, G: FloatArray, omega: float) -> SolveResult:
    return _finish(S0, G, np.zeros(G.shape[0]), omega, True, math.inf, 0)


def solve_barrier(S0: FloatArray, G: FloatArray, omega: float, opts: SolverOptions) -> SolveResult:
    """Path-following log-barrier method on ``z = (k, alpha, beta)``.

    Barrier: ``-logdet(alpha I - S(k)) - sum log k - sum log(beta - k) - log(cap - beta)``.
    On exit ``objective - optimum <= gap`` for the capped problem.
    """
    p, N = G.shape[0], S0.shape[0]
    cap = opts.gain_cap
    basis = np.concatenate([G, np.eye(N)[None]], axis=0)  # dM/dk_q, dM/dalpha
    theta = N + 2 * p + 1

    k = np.full(p, min(1.0, 0.25 * cap))
    beta = min(2.0 * k.max() + 1.0, 0.5 * (k.max() + cap)) if p else 1.0
    alpha = lambda_max(_sym(S0 - np.tensordot(k, G, axes=1))) + 1.0
    c = np.zeros(p + 2)
    c[p], c[p + 1] = 1.0, omega

    def matrix(k, alpha):
        return alpha * np.eye(N) - S0 + np.tensordot(k, G, axes=1)

    def phi(z):
        k, alpha, beta = z[:p], z[p], z[p + 1]
        if p and (np.any(k <= 0) or np.any(beta - k <= 0)) or beta >= cap:
            return math.inf
        try:
            C = np.linalg.cholesky(matrix(k, alpha))
        except np.linalg.LinAlgError:
            return math.inf
        return -2.0 * np.log(np.diag(C)).sum() - np.log(k).sum() - np.log(beta - k).sum() - math.log(cap - beta)

    z = np.concatenate([k, [alpha, beta]])
    t = 1.0
    iterations = 0
    converged = False
    for _ in range(opts.max_stages):
        for _ in range(opts.max_newton):
            k, alpha, beta = z[:p], z[p], z[p + 1]
            C = np.linalg.cholesky(matrix(k, alpha))
            Ci = np.linalg.inv(C)
            X = Ci @ basis @ Ci.T
            Xf = X.reshape(p + 1, -1)
            grad = t * c
            grad[: p + 1] -= np.trace(X, axis1=1, axis2=2)
            H = np.zeros((p + 2, p + 2))
            H[: p + 1, : p + 1] = Xf @ Xf.T
            u = 1.0 / k
            w = 1.0 / (beta - k)
            grad[:p] += -u + w
            grad[p + 1] += -w.sum() + 1.0 / (cap - beta)
            H[np.arange(p), np.arange(p)] += u * u + w * w
            H[:p, p + 1] -= w * w
            H[p + 1, :p] -= w * w
            H[p + 1, p + 1] += (w * w).sum() + 1.0 / (cap - beta) ** 2
            try:
                dz = -np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                dz = -np.linalg.lstsq(H, grad, rcond=None)[0]
            dec = float(-grad @ dz)
            iterations += 1
            if dec / 2.0 <= opts.newton_tol:
                break
            # largest step keeping every barrier argument positive
            dX = np.tensordot(dz[: p + 1], X, axes=1)
            smax = 1.0 / max(float(np.linalg.eigvalsh(-_sym(dX))[-1]), 1e-300)
            dk, db = dz[:p], dz[p + 1]
            for num, den in ((k, dk), (beta - k, db - dk), (np.array([cap - beta]), np.array([-db]))):
                neg = den < 0
                if np.any(neg):
                    smax = min(smax, float((-num[neg] / den[neg]).min()))
            s = min(1.0, 0.99 * smax)
            phi0 = phi(z)
            slope = t * float(c @ dz)
            while s > 1e-14:
                zn = z + s * dz
                if s * slope + (phi(zn) - phi0) <= -0.25 * s * dec:
                    break
                s *= 0.5
            else:
                break
            z = zn
        gap = theta / t
        if gap <= opts.gap_tol * max(1.0, abs(float(c @ z))):
            converged = True
            break
        t *= opts.t_growth
    res = _finish(S0, G, z[:p], omega, converged, theta / t, iterations)
    return res


def _project_box_epigraph(y: FloatArray, b: float, cap: float) -> tuple[FloatArray, float]:
    """Euclidean projection of ``(y, b)`` onto ``{(k, beta): 0 <= k <= beta <= cap}``."""
    y0 = np.maximum(y, 0.0)
    # beta solves beta = (b + sum_{y_q > beta} y_q) / (1 + #{y_q > beta})
    srt = np.sort(y0)[::-1]
    csum = 0.0
    beta = max(b, 0.0)
    for r in range(len(srt) + 1):
        cand = (b + csum) / (1 + r)
        upper = srt[r - 1] if r > 0 else math.inf
        lower = srt[r] if r < len(srt) else -math.inf
        if lower <= cand <= upper or r == len(srt):
            beta = cand
            break
        csum += srt[r]
    beta = min(max(beta, 0.0), cap)
    return np.minimum(y0, beta), beta


def solve_subgradient(S0: FloatArray, G: FloatArray, omega: float, opts: SolverOptions) -> SolveResult:
    """Projected subgradient on ``(k, beta)`` with eigenvector subgradients.

    Step sizes follow ``R / sqrt(j+1)`` normalized by the subgradient norm;
    the best iterate in exact objective is returned.
    """
    p = G.shape[0]
    k = np.zeros(p)
    beta = 0.0
    best = _witness(S0, G, omega)
    radius = min(opts.gain_cap, 1.0 + float(np.abs(S0).max()) * 10.0)
    for j in range(opts.subgrad_iters):
        S = _sym(S0 - np.tensordot(k, G, axes=1))
        w, V = np.linalg.eigh(S)
        v = V[:, -1]
        gk = -np.einsum("i,qij,j->q", v, G, v)
        gb = omega
        norm = math.sqrt(float(gk @ gk) + gb * gb)
        if norm == 0:
            break
        step = radius / (norm * math.sqrt(j + 1.0))
        k, beta = _project_box_epigraph(k - step * gk, beta - step * gb, opts.gain_cap)
        val = w[-1] + omega * beta
        if val < best.objective:
            best = _finish(S0, G, k, omega, False, math.inf, j + 1)
    cur = _finish(S0, G, k, omega, False, math.inf, opts.subgrad_iters)
    if cur.objective < best.objective:
        best = cur
    return SolveResult(best.k, best.alpha, best.beta, best.objective, False, math.inf, opts.subgrad_iters)


def solve_affine_problem(
    S0: FloatArray, G: FloatArray, omega: float, opts: SolverOptions | None = None
) -> SolveResult:
    """Minimize ``lambda_max(S0 - sum k_q G_q) + omega * max(k)`` over ``k >= 0``."""
    opts = opts or SolverOptions()
    if not (np.isfinite(omega) and omega >= 0):
        raise DomainError(f"omega must be >= 0, got {omega}")
    if not (np.all(np.isfinite(S0)) and np.all(np.isfinite(G))):
        raise DomainError("non-finite problem data")
    witness = _witness(S0, G, omega)
    if G.shape[0] == 0:
        return witness
    if opts.method == "barrier":
        res = solve_barrier(S0, G, omega, opts)
    else:
        res = solve_subgradient(S0, G, omega, opts)
    if witness.objective < res.objective:
        return SolveResult(witness.k, witness.alpha, witness.beta, witness.objective,
                           res.converged, res.gap, res.iterations)
    return res


@dataclass(frozen=True)
class SampleSolution:
    gains: EdgeGainSet
    alpha: float
    beta: float
    objective: float
    converged: bool
    gap: float


def optimize_gains_at_sample(
    A_blocks: Sequence[ArrayLike],
    g: CouplingGraph,
    P: FloatArray,
    omega: float,
    opts: SolverOptions | None = None,
) -> SampleSolution:
    S0, G = affine_lyapunov_data(A_blocks, g, P)
    res = solve_affine_problem(S0, G, omega, opts)
    if not res.converged:
        logger.warning("gain optimization did not converge (gap bound %.3g)", res.gap)
    return SampleSolution(
        gains=EdgeGainSet(g, res.k.reshape(g.m, 2)),
        alpha=res.alpha,
        beta=res.beta,
        objective=res.objective,
        converged=res.converged,
        gap=res.gap,
    )


# --------------------------------------------------------------------------
# exhaustive grid oracle

GRID_MAX_ENTRIES = 4


def _alias_groups(G: FloatArray) -> list[list[int]]:
    """Partition entries whose coefficient matrices coincide exactly."""
    groups: list[list[int]] = []
    for q in range(G.shape[0]):
        for grp in groups:
            if np.array_equal(G[grp[0]], G[q]):
                grp.append(q)
                break
        else:
            groups.append([q])
    return groups


def grid_search(
    S0: FloatArray,
    G: FloatArray,
    omega: float,
    grid_max: float,
    grid_step: float,
    max_classes: int = 5_000_000,
    chunk: int = 200_000,
) -> SolveResult:
    """Exact minimum over the grid ``{0, step, ..., grid_max}^p``.

    Entries sharing one coefficient matrix only enter ``S`` through their sum,
    so the grid is enumerated by group sums: for a group of size ``r`` and sum
    ``j`` steps the smallest achievable largest entry is ``ceil(j / r)`` steps.
    Every grid point belongs to exactly one enumerated class.
    """
    p = G.shape[0]
    if p > GRID_MAX_ENTRIES:
        raise DomainError(f"grid oracle limited to {GRID_MAX_ENTRIES} gain entries, got {p}")
    if grid_max < 0 or grid_step <= 0:
        raise DomainError("grid_max must be >= 0 and grid_step > 0")
    top = int(math.floor(grid_max / grid_step + 1e-9))
    groups = _alias_groups(G)
    sizes = np.array([len(grp) for grp in groups])
    counts = [int(r) * top + 1 for r in sizes]
    total = math.prod(counts)
    if total > max_classes:
        raise DomainError(f"grid has {total} classes, above the limit {max_classes}")
    Gg = np.stack([G[grp[0]] for grp in groups])
    best_val, best_flat = math.inf, 0
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        idx = np.stack(np.unravel_index(flat, counts), axis=1)  # group sums in steps
        S = S0[None] - np.tensordot(idx * grid_step, Gg, axes=1)
        lam = np.linalg.eigvalsh(0.5 * (S + S.transpose(0, 2, 1)))[:, -1]
        peak = np.max(-(-idx // sizes), axis=1) * grid_step
        val = lam + omega * peak
        j = int(np.argmin(val))
        if val[j] < best_val:
            best_val, best_flat = float(val[j]), int(flat[j])
    sums = np.unravel_index(best_flat, counts)
    k = np.zeros(p)
    for grp, r, j in zip(groups, sizes, sums):
        base, extra = divmod(int(j), int(r))
        for pos, q in enumerate(grp):
            k[q] = (base + (1 if pos < extra else 0)) * grid_step
    return _finish(S0, G, k, omega, True, 0.0, 0)


def grid_oracle(
    A_blocks: Sequence[ArrayLike],
    g: CouplingGraph,
    P: FloatArray,
    omega: float,
    grid_max: float = 300.0,
    grid_step: float = 0.5,
) -> SampleSolution:
    S0, G = affine_lyapunov_data(A_blocks, g, P)
    res = grid_search(S0, G, omega, grid_max, grid_step)
    return SampleSolution(EdgeGainSet(g, res.k.reshape(g.m, 2)), res.alpha, res.beta,
                          res.objective, True, 0.0)


# --------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class GainSchedule:
    """Periodic gain schedule: one gain set per cycle sample."""

    graph: CouplingGraph
    gains: FloatArray  # (f, m, 2)
    alphas: FloatArray
    betas: FloatArray
    omega: float
    cycle: CycleSample
    converged: FloatArray = field(default=None)

    def __post_init__(self) -> None:
        f = self.cycle.f
        if self.gains.shape != (f, self.graph.m, 2):
            raise DomainError(f"gain array shape {self.gains.shape} != ({f}, {self.graph.m}, 2)")
        if len(self.alphas) != f or len(self.betas) != f:
            raise DomainError("alphas/betas length must equal f")
        if self.converged is None:
            object.__setattr__(self, "converged", np.ones(f, dtype=bool))

    @property
    def f(self) -> int:
        return self.cycle.f

    def gain_set(self, l: int) -> EdgeGainSet:
        return EdgeGainSet(self.graph, self.gains[l % self.f])

    def edge_averages(self) -> FloatArray:
        """Per-edge gain averaged over the period and over both diagonal entries."""
        return self.gains.mean(axis=(0, 2))

    def average_gain(self) -> float:
        return float(self.edge_averages().mean())

    def largest_gain(self) -> FloatArray:
        """Largest gain over all edges at each sample."""
        return self.gains.max(axis=(1, 2))

    def check_feasible(self, A_sequence: Sequence[Sequence[FloatArray]] | None = None,
                       margin: float = 1e-7) -> bool:
        if np.any(self.betas < 0) or np.any(self.gains < 0):
            return False
        if np.any(self.gains.max(axis=(1, 2)) > self.betas + margin):
            return False
        if A_sequence is not None:
            P = sync_metric(self.graph.n)
            for l, A_blocks in enumerate(A_sequence):
                S = lyapunov_form(A_blocks, self.gains[l], self.graph, P)
                if self.alphas[l] < lambda_max(S) - margin:
                    return False
        return True


def linearized_blocks(cycle: CycleSample, osc: OscillatorSet) -> list[list[FloatArray]]:
    """``A_{i,l}`` for every sample ``l`` and oscillator ``i``."""
    return [[linearize(s, mu).A for mu in osc.mu] for s in cycle.phi_s]


def _solve_one(args) -> tuple[int, SolveResult]:
    l, A_blocks, g, P, omega, opts = args
    try:
        S0, G = affine_lyapunov_data(A_blocks, g, P)
        return l, solve_affine_problem(S0, G, omega, opts)
    except Exception as exc:  # noqa: BLE001 - re-raised with the sample index
        raise SampleOptimizationError(l, exc) from exc


def optimize_schedule(
    cycle: CycleSample,
    osc: OscillatorSet,
    g: CouplingGraph,
    omega: float,
    opts: SolverOptions | None = None,
    workers: int = 1,
) -> GainSchedule:
    """Solve the per-sample problem at every cycle sample; results in sample order."""
    opts = opts or SolverOptions()
    if g.n != osc.n:
        raise DomainError(f"graph has {g.n} nodes but there are {osc.n} oscillators")
    P = sync_metric(g.n)
    blocks = linearized_blocks(cycle, osc)
    jobs = [(l, blocks[l], g, P, omega, opts) for l in range(cycle.f)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(_solve_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = dict(map(_solve_one, jobs))
    ordered = [results[l] for l in range(cycle.f)]
    gains = np.stack([r.k.reshape(g.m, 2) for r in ordered])
    bad = [l for l, r in enumerate(ordered) if not r.converged]
    if bad:
        logger.warning("%d of %d samples did not reach the gap tolerance", len(bad), cycle.f)
    return GainSchedule(
        graph=g,
        gains=gains,
        alphas=np.array([r.alpha for r in ordered]),
        betas=np.array([r.beta for r in ordered]),
        omega=float(omega),
        cycle=cycle,
        converged=np.array([r.converged for r in ordered]),
    )
