"""Van der Pol vector fields: local, blended, and diffusively coupled.

Local dynamics of oscillator ``i``::

    dx1/dt = x2
    dx2/dt = -x1 + mu_i (1 - x1^2) x2

Global states stack the local 2-vectors as ``[x_1; ...; x_n]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DomainError

if TYPE_CHECKING:
    from .graph import CouplingGraph

FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class OscillatorSet:
    """Damping parameters of ``n >= 2`` heterogeneous oscillators."""

    mu: tuple[float, ...]

    def __init__(self, mu: Sequence[float]):
        mu = tuple(float(m) for m in mu)
        if len(mu) < 2:
            raise DomainError(f"need at least 2 oscillators, got {len(mu)}")
        if not all(np.isfinite(m) and m > 0 for m in mu):
            raise DomainError(f"every mu must be finite and > 0, got {mu}")
        object.__setattr__(self, "mu", mu)

    @property
    def n(self) -> int:
        return len(self.mu)

    @property
    def mean_mu(self) -> float:
        return float(np.mean(self.mu))

    def as_array(self) -> FloatArray:
        return np.asarray(self.mu, dtype=np.float64)


@dataclass(frozen=True)
class LinearizedLocal:
    """Affine model ``dx/dt = A x + b`` valid near the expansion point."""

    A: FloatArray
    b: FloatArray


def _local(state: ArrayLike) -> FloatArray:
    s = np.asarray(state, dtype=np.float64)
    if s.shape != (2,):
        raise DomainError(f"local state must have shape (2,), got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise DomainError(f"non-finite local state {s}")
    return s


def _check_mu(mu: float) -> float:
    mu = float(mu)
    if not (np.isfinite(mu) and mu > 0):
        raise DomainError(f"mu must be finite and > 0, got {mu}")
    return mu


def vdp_rhs(state: ArrayLike, mu: float) -> FloatArray:
    """Right-hand side of a single Van der Pol oscillator."""
    x1, x2 = _local(state)
    mu = _check_mu(mu)
    return np.array([x2, -x1 + mu * (1.0 - x1 * x1) * x2])


def vdp_jacobian(state: ArrayLike, mu: float) -> FloatArray:
    x1, x2 = _local(state)
    mu = _check_mu(mu)
    return np.array([[0.0, 1.0], [-1.0 - 2.0 * mu * x1 * x2, mu * (1.0 - x1 * x1)]])


def linearize(s: ArrayLike, mu: float) -> LinearizedLocal:
    """First-order Taylor model of the local dynamics around ``s``.

    ``b`` is chosen so that ``A @ s + b`` reproduces ``vdp_rhs(s, mu)``.
    """
    s = _local(s)
    A = vdp_jacobian(s, mu)
    b = vdp_rhs(s, mu) - A @ s
    return LinearizedLocal(A=A, b=b)


def blended_rhs(state: ArrayLike, osc: OscillatorSet) -> FloatArray:
    """Node-averaged vector field; a Van der Pol field with the mean damping."""
    return vdp_rhs(state, osc.mean_mu)


def stacked_rhs(x: FloatArray, mu: FloatArray) -> FloatArray:
    """Uncoupled stack ``f(x)`` for a flat global state (no validation, hot path)."""
    x1 = x[0::2]
    x2 = x[1::2]
    out = np.empty_like(x)
    out[0::2] = x2
    out[1::2] = -x1 + mu * (1.0 - x1 * x1) * x2
    return out


def _global(x: ArrayLike, n: int) -> FloatArray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (2 * n,):
        raise DomainError(f"global state must have shape ({2 * n},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite global state")
    return x


def _check_graph(osc: OscillatorSet, g: CouplingGraph) -> None:
    if g.n != osc.n:
        raise DomainError(f"graph has {g.n} nodes but there are {osc.n} oscillators")


def coupled_rhs_static(
    x: ArrayLike, osc: OscillatorSet, g: CouplingGraph, k_c: float
) -> FloatArray:
    """``f(x) - k_c (L kron I_2) x`` for uniform diffusive coupling."""
    _check_graph(osc, g)
    x = _global(x, osc.n)
    if not (np.isfinite(k_c) and k_c >= 0):
        raise DomainError(f"k_c must be >= 0, got {k_c}")
    return stacked_rhs(x, osc.as_array()) - k_c * (g.laplacian_kron() @ x)


def coupled_rhs_scheduled(x: ArrayLike, osc: OscillatorSet, g: CouplingGraph, gains) -> FloatArray:
    """Nonlinear dynamics under edge-wise diagonal gains.

    ``gains`` is anything :func:`vdpsync.graph.as_gain_array` accepts.
    """
    from .graph import build_LK

    _check_graph(osc, g)
    x = _global(x, osc.n)
    return stacked_rhs(x, osc.as_array()) - build_LK(g, gains) @ x
