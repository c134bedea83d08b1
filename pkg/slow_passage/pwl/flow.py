"""Exact flows of piecewise-linear systems.

Inside a region the flow of ``u' = A u + b`` is written in the real Jordan basis
``P = [v_slow, Re w, Im w]`` of ``A``::

    xi' = lambda xi + g0
    zeta' = K zeta + g,      K = [[alpha, beta], [-beta, alpha]]

with ``(xi, zeta) = P^-1 u`` and ``(g0, g) = P^-1 b``. The slow coordinate uses
``expm1(lambda t) / lambda`` so a singular matrix (``lambda = 0``) needs no special
case. Switching events are located by dense sampling of the closed form followed
by bracketed root refinement.
"""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import numpy.typing as npt
from scipy.optimize import brentq

from slow_passage.errors import DegenerateSpectrumError, EventBudgetError
from slow_passage.pwl.constants import ModelKind, Termination
from slow_passage.pwl.eigen import EigenStructure, eigenstructure
from slow_passage.pwl.system import FloatArray, PwlSystem, RegionSpec, as_state
from slow_passage.utils.constants import (
    EVENT_BUDGET,
    EVENT_XTOL,
    MAX_SAMPLE_STEP,
    SCAN_CHUNK,
    STABILITY_BOUNDARY_TOL,
)

logger = logging.getLogger(__name__)

# Vectorized guard: maps sample states (n, 3) to values, an event fires when a value drops below 0
Monitor = Callable[[FloatArray], FloatArray]


@dataclass(frozen=True)
class ArcCoefficients:
    """Constants of the closed-form solution along one arc."""

    lambda_slow: float
    alpha: float
    beta: float
    slow_initial: float
    slow_forcing: float
    focus_amplitude: float
    focus_phase: float


@dataclass(frozen=True, eq=False)
class AffineFlow:
    region: RegionSpec
    eigen: EigenStructure
    basis: FloatArray
    basis_inv: FloatArray
    slow_forcing: float
    focus_center: FloatArray
    clock_rate: float | None

    @classmethod
    def from_region(cls, region: RegionSpec) -> "AffineFlow":
        A, b = region.A, region.b
        clock_rate: float | None = None
        if not np.any(A[2]):
            if abs(4.0 - region.slope**2) < STABILITY_BOUNDARY_TOL:
                raise DegenerateSpectrumError("slope at stability boundary", region=region.id, slope=region.slope)
            clock_rate = float(b[2])

        eigen = eigenstructure(A)
        basis = np.column_stack([eigen.v_slow, eigen.plane_basis[0], eigen.plane_basis[1]])
        basis_inv = np.linalg.inv(basis)
        forcing = basis_inv @ b
        K_inv = np.array([[eigen.alpha, -eigen.beta], [eigen.beta, eigen.alpha]]) / (
            eigen.alpha**2 + eigen.beta**2
        )
        return cls(
            region=region,
            eigen=eigen,
            basis=basis,
            basis_inv=basis_inv,
            slow_forcing=float(forcing[0]),
            focus_center=-(K_inv @ forcing[1:]),
            clock_rate=clock_rate,
        )

    @property
    def sample_step(self) -> float:
        return min(MAX_SAMPLE_STEP, math.pi / (4.0 * self.eigen.beta))

    def jordan_coordinates(self, p: FloatArray) -> FloatArray:
        return self.basis_inv @ p

    def evaluate(self, p: FloatArray, t: float | FloatArray) -> FloatArray:
        """Exact solution through ``p`` at time(s) ``t``; returns shape ``(3,)`` or ``(n, 3)``."""
        times = np.asarray(t, dtype=float)
        xi = self.basis_inv @ p
        lam, alpha, beta = self.eigen.lambda_slow, self.eigen.alpha, self.eigen.beta

        if lam == 0.0:
            slow = xi[0] + self.slow_forcing * times
        else:
            slow = xi[0] * np.exp(lam * times) + self.slow_forcing * np.expm1(lam * times) / lam

        zeta = xi[1:] - self.focus_center
        growth = np.exp(alpha * times)
        cos, sin = np.cos(beta * times), np.sin(beta * times)
        first = growth * (cos * zeta[0] + sin * zeta[1]) + self.focus_center[0]
        second = growth * (-sin * zeta[0] + cos * zeta[1]) + self.focus_center[1]

        states = np.multiply.outer(slow, self.basis[:, 0])
        states += np.multiply.outer(first, self.basis[:, 1])
        states += np.multiply.outer(second, self.basis[:, 2])
        if self.clock_rate is not None:
            states[..., 2] = p[2] + self.clock_rate * times
        return states

    def coefficients(self, p: FloatArray) -> ArcCoefficients:
        xi = self.basis_inv @ p
        zeta = xi[1:] - self.focus_center
        return ArcCoefficients(
            lambda_slow=self.eigen.lambda_slow,
            alpha=self.eigen.alpha,
            beta=self.eigen.beta,
            slow_initial=float(xi[0]),
            slow_forcing=self.slow_forcing,
            focus_amplitude=float(np.hypot(zeta[0], zeta[1])),
            focus_phase=float(math.atan2(zeta[1], zeta[0])),
        )


@lru_cache(maxsize=256)
def region_flow(region: RegionSpec) -> AffineFlow:
    return AffineFlow.from_region(region)


def local_flow(region: RegionSpec, p: npt.ArrayLike, t: float) -> FloatArray:
    """Exact solution of the region's affine ODE at time ``t`` from ``p`` at time 0.

    The region's slab is ignored: the affine field is extended to all of R^3.
    """
    return region_flow(region).evaluate(as_state(p), float(t))


@dataclass(frozen=True, eq=False)
class TrajectoryArc:
    region_id: str
    region_index: int
    t_entry: float
    t_exit: float
    state_entry: FloatArray
    state_exit: FloatArray
    coeffs: ArcCoefficients
    is_final: bool = False
    flow: AffineFlow | None = field(default=None, repr=False)

    @property
    def duration(self) -> float:
        return self.t_exit - self.t_entry

    def state_at(self, t: float | FloatArray) -> FloatArray:
        if self.flow is None:
            raise ValueError("Arc carries no flow")
        return self.flow.evaluate(self.state_entry, np.asarray(t, dtype=float) - self.t_entry)


@dataclass(frozen=True, eq=False)
class Trajectory:
    arcs: tuple[TrajectoryArc, ...]
    terminated_by: Termination
    samples: FloatArray | None = None
    sample_regions: tuple[str, ...] = ()

    @property
    def t_end(self) -> float:
        return self.arcs[-1].t_exit

    @property
    def final_state(self) -> FloatArray:
        return self.arcs[-1].state_exit

    @property
    def events(self) -> int:
        return len(self.arcs) - 1

    def arc_at(self, t: float) -> TrajectoryArc:
        for arc in self.arcs:
            if t <= arc.t_exit:
                return arc
        return self.arcs[-1]

    def state_at(self, t: float) -> FloatArray:
        return self.arc_at(t).state_at(t)

    def sample(self, dt: float) -> tuple[FloatArray, tuple[str, ...]]:
        """Polyline ``(t, x, y, z)`` at spacing ``dt`` plus the region label of each row."""
        if dt <= 0:
            raise ValueError(f"Sampling step must be positive, got {dt}")
        times = np.arange(0.0, self.t_end + 0.5 * dt, dt)
        times = times[times <= self.t_end]
        rows = np.empty((times.size, 4))
        labels: list[str] = []
        start = 0
        for arc in self.arcs:
            stop = int(np.searchsorted(times, arc.t_exit, side="right"))
            if stop > start:
                chunk = times[start:stop]
                rows[start:stop, 0] = chunk
                rows[start:stop, 1:] = arc.state_at(chunk)
                labels.extend([arc.region_id] * (stop - start))
                start = stop
        return rows[:start], tuple(labels)


def _bracket_root(func: Callable[[float], float], lo: float, hi: float, xtol: float) -> float:
    if func(lo) <= 0.0:
        return lo
    return float(brentq(func, lo, hi, xtol=xtol, maxiter=200))


def _first_event(
    flow: AffineFlow,
    p: FloatArray,
    horizon: float,
    monitor: Monitor | None,
    xtol: float,
) -> tuple[float, str] | None:
    """Earliest time in ``(0, horizon]`` at which the orbit leaves the slab or trips the monitor.

    Returns the event time and its kind (``lower``, ``upper``, ``monitor`` or
    ``overflow`` when the closed form stops being representable), or None.
    """
    region = flow.region
    names: list[str] = []
    if math.isfinite(region.lower_x):
        names.append("lower")
    if math.isfinite(region.upper_x):
        names.append("upper")
    if monitor is not None:
        names.append("monitor")

    def guards(states: FloatArray) -> FloatArray:
        columns = []
        for name in names:
            if name == "lower":
                columns.append(states[:, 0] - region.lower_x)
            elif name == "upper":
                columns.append(region.upper_x - states[:, 0])
            else:
                columns.append(monitor(states))  # type: ignore[misc]
        if not columns:
            return np.zeros((states.shape[0], 0))
        return np.column_stack(columns)

    if monitor is not None and monitor(p[None, :])[0] < 0.0:
        return 0.0, "monitor"

    step = flow.sample_step
    t_prev = 0.0
    prev = guards(p[None, :])[0]
    while t_prev < horizon:
        times = t_prev + step * np.arange(1, SCAN_CHUNK + 1)
        times = np.append(times[times < horizon], min(horizon, t_prev + step * (SCAN_CHUNK + 1)))
        states = flow.evaluate(p, times)
        values = guards(states)

        finite = np.all(np.isfinite(states), axis=1) & np.all(np.isfinite(values), axis=1)
        overflow = not np.all(finite)
        if overflow:
            cut = int(np.argmin(finite))
            logger.warning(f"Closed form overflowed in region {region.id} at t = {times[cut]:.6g}")
            times, values = times[:cut], values[:cut]

        crossed = np.nonzero(np.any(values < 0.0, axis=1))[0]
        if crossed.size:
            j = int(crossed[0])
            lo = t_prev if j == 0 else float(times[j - 1])
            lo_values = prev if j == 0 else values[j - 1]
            hi = float(times[j])
            best: tuple[float, str] | None = None
            for g in np.nonzero(values[j] < 0.0)[0]:
                g_index = int(g)

                def scalar(t: float, g_index: int = g_index) -> float:
                    return float(guards(flow.evaluate(p, np.array([t])))[0, g_index])

                start = lo
                candidate = lo
                if lo_values[g_index] <= 0.0:
                    # Started on the plane: look for a point strictly inside before bracketing
                    inside = [float(t) for t in np.linspace(lo, hi, 65)[1:-1] if scalar(float(t)) > 0.0]
                    if inside:
                        start = inside[0]
                        candidate = _bracket_root(scalar, start, hi, xtol)
                else:
                    candidate = _bracket_root(scalar, start, hi, xtol)
                if best is None or candidate < best[0]:
                    best = (candidate, names[g_index])
            return best

        if overflow:
            return (float(times[-1]) if times.size else t_prev), "overflow"
        t_prev = float(times[-1])
        prev = values[-1]
    return None


def integrate(
    system: PwlSystem,
    p0: npt.ArrayLike,
    t_max: float,
    dt_sample: float | None = None,
    monitor: Monitor | None = None,
    xtol: float = EVENT_XTOL,
    max_events: int = EVENT_BUDGET,
) -> Trajectory:
    """Integrate a PWL system exactly by chaining closed-form arcs.

    Args:
        system: The piecewise-linear system.
        p0: Initial state.
        t_max: Integration horizon.
        dt_sample: Optional spacing of a sampled polyline.
        monitor: Optional vectorized guard; integration stops when it drops below 0.
        xtol: Absolute time tolerance of event refinement.
        max_events: Maximum number of switching events.

    Returns:
        Trajectory: the arcs, how the integration ended and the optional samples.

    Raises:
        EventBudgetError: when more than ``max_events`` switchings occur.
    """
    if not t_max > 0 or not math.isfinite(t_max):
        raise ValueError(f"t_max must be positive and finite, got {t_max}")
    p = as_state(p0)
    t = 0.0
    index = system.locate(p)
    arcs: list[TrajectoryArc] = []
    terminated_by = Termination.HORIZON

    while True:
        if len(arcs) > max_events:
            raise EventBudgetError("event budget exceeded", events=len(arcs), t=t)
        region = system.regions[index]
        flow = region_flow(region)
        event = _first_event(flow, p, t_max - t, monitor, xtol)

        if event is None:
            exit_state = flow.evaluate(p, t_max - t)
            arcs.append(
                TrajectoryArc(region.id, index, t, t_max, p, exit_state, flow.coefficients(p), is_final=True, flow=flow)
            )
            break

        dt, kind = event
        exit_state = flow.evaluate(p, dt)
        if kind in ("monitor", "overflow"):
            arcs.append(
                TrajectoryArc(region.id, index, t, t + dt, p, exit_state, flow.coefficients(p), is_final=True, flow=flow)
            )
            terminated_by = Termination(kind)
            break

        boundary = region.lower_x if kind == "lower" else region.upper_x
        exit_state = exit_state.copy()
        exit_state[0] = boundary
        arcs.append(TrajectoryArc(region.id, index, t, t + dt, p, exit_state, flow.coefficients(p), flow=flow))
        logger.debug(f"Left region {region.id} through x = {boundary} at t = {t + dt:.12g}")

        t += dt
        p = exit_state
        index = system.locate(p)
        if t >= t_max:
            # Crossing exactly at the horizon: close with an empty final arc
            final = system.regions[index]
            final_flow = region_flow(final)
            arcs.append(TrajectoryArc(final.id, index, t, t, p, p, final_flow.coefficients(p), is_final=True, flow=final_flow))
            break

    trajectory = Trajectory(arcs=tuple(arcs), terminated_by=terminated_by)
    if dt_sample:
        samples, labels = trajectory.sample(dt_sample)
        trajectory = Trajectory(arcs=trajectory.arcs, terminated_by=terminated_by, samples=samples, sample_regions=labels)
    return trajectory


@dataclass(frozen=True)
class FastSubsystem:
    """Layer problem ``x' = f(x) - y, y' = x - z`` with ``z`` frozen."""

    z: float
    breakpoints: tuple[float, ...]
    slopes: tuple[float, ...]
    intercepts: tuple[float, ...]
    equilibrium: tuple[float, float]
    region_id: str
    stability: str
    non_hyperbolic: bool

    def f(self, x: float) -> float:
        i = int(np.searchsorted(np.array(self.breakpoints), x, side="right"))
        return self.slopes[i] * x + self.intercepts[i]

    def field(self, x: float, y: float) -> tuple[float, float]:
        return self.f(x) - y, x - self.z


def fast_subsystem(system: PwlSystem, z: float) -> FastSubsystem:
    """Planar PWL layer problem of a two- or three-region system at frozen ``z``."""
    if system.kind not in (ModelKind.TWO_REGION, ModelKind.THREE_REGION):
        raise ValueError(f"Fast subsystem is defined for two- and three-region systems, got {system.kind.value}")
    slopes = tuple(region.slope for region in system.regions)
    intercepts = tuple(float(region.offset[0]) for region in system.regions)
    breakpoints = system.boundaries

    # The x-nullcline meets y' = 0 at x = z
    index = system.region_index(z)
    x_eq = z
    y_eq = slopes[index] * x_eq + intercepts[index]
    on_switch = any(abs(z - b) <= 1e-12 * max(1.0, abs(b)) for b in breakpoints)

    if on_switch:
        stability = "non-hyperbolic"
    else:
        trace = slopes[index]
        kind = "focus" if abs(trace) < 2.0 else "node"
        stability = f"{'stable' if trace < 0 else 'unstable'} {kind}"
    return FastSubsystem(
        z=z,
        breakpoints=breakpoints,
        slopes=slopes,
        intercepts=intercepts,
        equilibrium=(x_eq, y_eq),
        region_id=system.regions[index].id,
        stability=stability,
        non_hyperbolic=on_switch,
    )
