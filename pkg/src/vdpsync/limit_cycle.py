"""Fixed-step RK4 integration and limit-cycle detection for the blended oscillator.

Period detection uses the Poincare section ``{x2 = 0, x1 > 0}`` crossed
downwards (``x2`` going from positive to non-positive), which for a Van der
Pol oscillator is the point of maximal ``x1`` on the cycle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .dynamics import OscillatorSet, stacked_rhs
from .errors import DomainError, IntegrationBlowup, NoCycleError, NonConvergenceError

FloatArray = NDArray[np.float64]
Rhs = Callable[[FloatArray], FloatArray]

DEFAULT_X0 = (2.0, 0.0)
DEFAULT_SETTLE_TIME = 100.0
DEFAULT_TOL = 1e-6
SETTLE_DT = 1e-2
STEPS_PER_PERIOD = 4000
BISECTION_ITERS = 60


@dataclass(frozen=True)
class Trajectory:
    times: FloatArray
    states: FloatArray

    def __post_init__(self) -> None:
        if len(self.times) != len(self.states):
            raise DomainError("times and states differ in length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise DomainError("trajectory times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def final(self) -> FloatArray:
        return self.states[-1]


@dataclass(frozen=True)
class LimitCycle:
    """Anchor state on the section plus the detected period."""

    anchor: FloatArray
    period: float
    dt: float
    periods: tuple[float, ...] = ()


@dataclass(frozen=True)
class CycleSample:
    """Uniform samples of one period of the blended limit cycle."""

    T: float
    dt: float
    f: int
    phi_t: FloatArray
    phi_s: FloatArray
    s0_anchor: FloatArray
    mu_mean: float
    step: float

    @property
    def sub_steps(self) -> int:
        """Integration steps per sampling interval."""
        return int(round(self.dt / self.step))


def rk4_step(rhs: Rhs, x: FloatArray, h: float) -> FloatArray:
    k1 = rhs(x)
    k2 = rhs(x + 0.5 * h * k1)
    k3 = rhs(x + 0.5 * h * k2)
    k4 = rhs(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _steps(duration: float, dt: float) -> tuple[int, float]:
    """Number of steps and the length of the (possibly shortened) last step."""
    n = max(1, math.ceil(duration / dt - 1e-9))
    return n, duration - (n - 1) * dt


def integrate(rhs: Rhs, x0: ArrayLike, t_span: tuple[float, float], dt: float) -> Trajectory:
    """Classical RK4 with fixed step ``dt``; the last step is shortened to hit ``t_end``.

    ``rhs`` maps a state to its time derivative (autonomous systems only).
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not dt > 0:
        raise DomainError(f"dt must be > 0, got {dt}")
    if not t1 > t0:
        raise DomainError(f"t_end must exceed t_start, got {t_span}")
    x = np.array(x0, dtype=np.float64)
    n, last = _steps(t1 - t0, dt)
    times = np.empty(n + 1)
    states = np.empty((n + 1,) + x.shape)
    times[0], states[0] = t0, x
    for k in range(n):
        h = dt if k < n - 1 else last
        x = rk4_step(rhs, x, h)
        t = t1 if k == n - 1 else t0 + (k + 1) * dt
        if not np.all(np.isfinite(x)):
            raise IntegrationBlowup(t)
        times[k + 1], states[k + 1] = t, x
    return Trajectory(times, states)


def flow(rhs: Rhs, x0: ArrayLike, duration: float, dt: float) -> FloatArray:
    """Final state of :func:`integrate` without storing the trajectory."""
    x = np.array(x0, dtype=np.float64)
    if duration <= 0:
        return x
    n, last = _steps(duration, dt)
    for k in range(n):
        x = rk4_step(rhs, x, dt if k < n - 1 else last)
        if not np.all(np.isfinite(x)):
            raise IntegrationBlowup((k + 1) * dt)
    return x


def crosses_section(prev: FloatArray, cur: FloatArray) -> bool:
    """Downward crossing of ``x2 = 0`` on the ``x1 > 0`` half plane between two steps."""
    return prev[1] > 0.0 and cur[1] <= 0.0 and cur[0] > 0.0


def refine_crossing(
    rhs: Rhs, x: FloatArray, h: float, component: int | Callable[[FloatArray], float] = 1
) -> tuple[float, FloatArray]:
    """Bisect for the sub-step ``tau`` in ``(0, h]`` where a coordinate hits zero.

    ``component`` is a state index or a scalar function of the state. The
    state inside the bracketing step is evaluated with a single RK4 step of
    length ``tau`` from ``x``.
    """
    value = component if callable(component) else (lambda z, c=component: z[c])
    lo, hi = 0.0, h
    for _ in range(BISECTION_ITERS):
        mid = 0.5 * (lo + hi)
        if value(rk4_step(rhs, x, mid)) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, h):
            break
    # the upper end keeps the coordinate <= 0, so the crossing is not re-detected
    return hi, rk4_step(rhs, x, hi)


def find_periodic_orbit(
    rhs: Rhs,
    x0: ArrayLike = DEFAULT_X0,
    settle_time: float = DEFAULT_SETTLE_TIME,
    tol: float = DEFAULT_TOL,
    dt: float | None = None,
    max_periods: int = 12,
    max_time: float = 1e4,
) -> LimitCycle:
    """Relax a planar autonomous system onto its cycle and measure the period.

    The settle runs at a coarse step; the fine step defaults to the coarse
    period estimate divided by ``STEPS_PER_PERIOD``.
    """
    if not settle_time > 0:
        raise DomainError(f"settle_time must be > 0, got {settle_time}")
    x = np.array(x0, dtype=np.float64)
    if x.shape != (2,) or not np.any(x != 0):
        raise DomainError(f"initial state must be a nonzero 2-vector, got {x}")
    coarse = SETTLE_DT if dt is None else min(SETTLE_DT, dt)
    x = flow(rhs, x, settle_time, coarse)

    def next_crossing(x: FloatArray, h: float, budget: float) -> tuple[float, FloatArray]:
        t = 0.0
        while t < budget:
            nxt = rk4_step(rhs, x, h)
            if not np.all(np.isfinite(nxt)):
                raise IntegrationBlowup(t + h)
            if crosses_section(x, nxt):
                tau, xc = refine_crossing(rhs, x, h)
                return t + tau, xc
            x = nxt
            t += h
        raise NoCycleError(f"no section crossing within t={budget:g}")

    # coarse period estimate fixes the fine step
    _, x = next_crossing(x, coarse, max_time)
    if dt is None:
        t_est, _ = next_crossing(x, coarse, max_time)
        dt = t_est / STEPS_PER_PERIOD
    budget = max_time
    _, x = next_crossing(x, dt, budget)
    periods: list[float] = []
    for _ in range(max_periods + 1):
        prev = x
        T, x = next_crossing(x, dt, budget)
        if x[0] < 1e-9:
            raise NoCycleError(f"orbit collapsed onto the origin (anchor x1={x[0]:.3g})")
        periods.append(T)
        budget = 3.0 * T
        # a decaying spiral also has constant return times; the anchor must repeat too
        same_anchor = abs(x[0] - prev[0]) <= 1e-3 * x[0]
        if len(periods) >= 2 and abs(periods[-1] - periods[-2]) < tol and same_anchor:
            return LimitCycle(anchor=x, period=periods[-1], dt=dt, periods=tuple(periods))
    raise NonConvergenceError(f"successive periods never agreed within {tol}: {periods[-3:]}")


def blended_field(osc: OscillatorSet) -> Rhs:
    mu = np.array([osc.mean_mu])
    return lambda s: stacked_rhs(s, mu)


def find_limit_cycle(
    osc: OscillatorSet,
    settle_time: float = DEFAULT_SETTLE_TIME,
    tol: float = DEFAULT_TOL,
    dt: float | None = None,
    x0: ArrayLike = DEFAULT_X0,
) -> LimitCycle:
    """Limit cycle of the blended (mean-damping) dynamics."""
    return find_periodic_orbit(blended_field(osc), x0, settle_time, tol, dt)


def sample_cycle(
    anchor: ArrayLike, T: float, f: int, osc: OscillatorSet, dt: float | None = None
) -> CycleSample:
    """Sample ``f`` equally spaced states of the blended cycle starting at ``anchor``.

    The integration step is ``dt_sample / m`` with the smallest integer ``m``
    that keeps the step at or below ``dt`` (default ``T / STEPS_PER_PERIOD``).
    """
    f = int(f)
    if f < 2:
        raise DomainError(f"need f >= 2 samples, got {f}")
    if not T > 0:
        raise DomainError(f"period must be > 0, got {T}")
    dt = T / STEPS_PER_PERIOD if dt is None else float(dt)
    delta = T / f
    m = max(1, math.ceil(delta / dt - 1e-9))
    h = delta / m
    rhs = blended_field(osc)
    s = np.array(anchor, dtype=np.float64)
    phi_s = np.empty((f, 2))
    phi_s[0] = s
    for l in range(1, f):
        for _ in range(m):
            s = rk4_step(rhs, s, h)
        phi_s[l] = s
    return CycleSample(
        T=float(T),
        dt=delta,
        f=f,
        phi_t=np.arange(f) * delta,
        phi_s=phi_s,
        s0_anchor=np.array(anchor, dtype=np.float64),
        mu_mean=osc.mean_mu,
        step=h,
    )
