"""Entry and exit of orbits through tubes around the slow manifolds.

An orbit is seeded at distance ``delta`` from the attracting slow manifold at a
chosen ``z``-level, integrated exactly until it first crosses into the repelling
region and then until its distance to the repelling slow manifold exceeds
``delta`` again. The exit level is read on the manifold (the ``z`` of the
comparison point), not on the orbit.
"""

import logging
import math
from collections.abc import Sequence

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy import linalg, stats

from slow_passage import threads as worker_threads
from slow_passage.errors import AdmissibilityError, OutOfRegionError
from slow_passage.models import SlowFastModel
from slow_passage.pwl.constants import ModelKind, Termination
from slow_passage.pwl.flow import Trajectory, integrate, region_flow
from slow_passage.pwl.manifolds import SlowManifoldRay, attracting_manifold, repelling_manifold, theta_bracket
from slow_passage.pwl.system import FloatArray, PwlSystem
from slow_passage.utils.constants import (
    DEFAULT_DELTA,
    EVENT_XTOL,
    PLATEAU_FLATNESS,
    TIME_BUDGET_FACTOR,
)
from slow_passage.utils.general import parallel_map

logger = logging.getLogger(__name__)

# Extra fast time allowed for the repelling growth, in units of 1/alpha
GROWTH_ALLOWANCE = 50.0
SEED_TOL = 1e-9
# Signal to perturbation amplitude ratio below which a pair counts as part of the plateau knee
KNEE_RATIO = 100.0
PHASE_SAMPLES = 256


class ReferenceLevels(BaseModel):
    """Levels the way-in and way-out coordinates are measured from, and the sign of the slow drift."""

    z_in_ref: float
    z_out_ref: float
    drift: int


class WayInWayOutPoint(BaseModel):
    z_in: float
    z_out: float
    t_cross: float
    t_exit: float
    residual: float


class WayInWayOutCurve(BaseModel):
    points: list[WayInWayOutPoint]
    delta: float = Field(gt=0.0)
    model: str
    epsilon: float
    params: dict[str, float]
    references: ReferenceLevels
    work_precision: float | None = None
    dropped: list[float] = []
    # Rotation rate of the attracting focus and growth rate of the repelling one, for drifts z = z0 + eps t
    entry_frequency: float | None = None
    exit_growth: float | None = None

    @model_validator(mode="after")
    def _check(self) -> "WayInWayOutCurve":
        levels = [point.z_in for point in self.points]
        if levels != sorted(levels):
            raise ValueError("way-in/way-out pairs must be sorted by z_in")
        if not all(math.isfinite(point.z_out) for point in self.points):
            raise ValueError("way-in/way-out exit levels must be finite")
        return self

    @property
    def pairs(self) -> list[tuple[float, float]]:
        return [(point.z_in, point.z_out) for point in self.points]

    def relative(self) -> tuple[FloatArray, FloatArray]:
        """Entry distance before ``p_a`` and exit distance past the exit reference, both along the drift."""
        refs = self.references
        z_in = np.array([point.z_in for point in self.points])
        z_out = np.array([point.z_out for point in self.points])
        return refs.drift * (refs.z_in_ref - z_in), refs.drift * (z_out - refs.z_out_ref)


class AsymptoteFit(BaseModel):
    slope: float | None
    intercept: float | None
    plateau: float | None
    expected_slope: float | None = None
    expected_intercept: float | None = None
    offset: float | None = None
    linear_points: int = 0
    plateau_points: int = 0


class DelayEstimate(BaseModel):
    epsilon: float
    z_d: float
    z_out: float
    t_exit: float
    lower: float | None = None
    upper: float | None = None
    asymptote: tuple[float, float] | None = None
    plateau: float | None = None


class DelaySweepRow(BaseModel):
    epsilon: float
    z_d: float
    lower: float | None
    upper: float | None
    fit: float


class DelaySweep(BaseModel):
    rows: list[DelaySweepRow]
    u1: float
    u2: float
    relative_residual: float


class PrecisionRow(BaseModel):
    precision: float
    theta_min: float | None
    theta_max: float | None
    plateau: float | None
    exit_time: float | None


class BufferLevels(BaseModel):
    a_minus_mu: float
    attracting_exit: float
    repelling_entry: float


def reference_levels(system: PwlSystem) -> ReferenceLevels:
    if system.kind in (ModelKind.DK, ModelKind.MODIFIED_DK):
        z_hopf = system.params["z_hopf"]
        return ReferenceLevels(z_in_ref=z_hopf, z_out_ref=z_hopf, drift=-1)

    z_in_ref = float(attracting_manifold(system).base[2])
    if system.kind is ModelKind.TWO_REGION:
        z_out_ref = 0.0
    elif system.kind is ModelKind.BUFFER:
        z_out_ref = system.params["mu"]
    else:
        z_out_ref = float(repelling_manifold(system).base[2])
    return ReferenceLevels(z_in_ref=z_in_ref, z_out_ref=z_out_ref, drift=1)


def time_budget(system: PwlSystem, dz: float) -> float:
    """Fast time allowed for one phase of a passage covering ``dz`` in the slow variable."""
    if system.epsilon <= 0:
        raise AdmissibilityError("way-in/way-out needs eps > 0", epsilon=system.epsilon)
    growth = abs(region_flow(system.region_by_id(system.repelling_region)).eigen.alpha)
    budget = TIME_BUDGET_FACTOR * (1.0 + abs(dz)) / system.epsilon
    if growth > 0:
        budget += GROWTH_ALLOWANCE / growth
    return budget


def entry_seed(system: PwlSystem, z_in: float, delta: float, ray: SlowManifoldRay | None = None) -> FloatArray:
    """Point at distance ``delta`` from the attracting manifold, offset from its ray point at level ``z_in``."""
    ray = ray or attracting_manifold(system)
    tau = ray.tau_at_z(z_in)
    if not ray.contains_tau(tau):
        raise OutOfRegionError("out of region", reason="entry level outside the attracting manifold", z_in=z_in)
    seed = ray.point(tau) + delta * ray.in_plane_direction()
    distance = float(ray.distances(seed)[0][0])
    if abs(distance - delta) > SEED_TOL * max(1.0, delta):
        logger.warning(f"Seed at z = {z_in} sits at distance {distance:.12g} instead of {delta}")
    return seed


def _pass(
    system: PwlSystem,
    seed: FloatArray,
    z_in: float,
    delta: float,
    work_precision: float | None,
    budget: float | None,
) -> WayInWayOutPoint | None:
    # One passage: cross into the repelling region, then leave the delta-tube around its manifold
    refs = reference_levels(system)
    dz = refs.drift * (refs.z_in_ref - z_in)
    horizon = budget or time_budget(system, dz)
    boundary = system.region_by_id(system.repelling_region).lower_x
    xtol = max(work_precision, EVENT_XTOL) if work_precision else EVENT_XTOL

    crossing = integrate(system, seed, horizon, monitor=lambda states: boundary - states[:, 0], xtol=xtol)
    if crossing.terminated_by is not Termination.MONITOR:
        logger.warning(f"Orbit from z = {z_in:.12g} never entered region {system.repelling_region}; pair dropped")
        return None

    ray = repelling_manifold(system)
    start = crossing.final_state.copy()
    if work_precision:
        start += work_precision * ray.in_plane_direction()
    far_end = ray.param_range[1]

    def leaving(states: FloatArray) -> FloatArray:
        distance, tau, _ = ray.distances(states)
        return np.minimum(delta - distance, far_end - tau)

    escape = integrate(system, start, time_budget(system, dz) if budget is None else budget, monitor=leaving)
    if escape.terminated_by is not Termination.MONITOR:
        logger.warning(f"Orbit from z = {z_in:.12g} stayed near the repelling manifold; pair dropped")
        return None

    distance, _, z_hat = ray.distances(escape.final_state)
    return WayInWayOutPoint(
        z_in=z_in,
        z_out=float(z_hat[0]),
        t_cross=crossing.t_end,
        t_exit=crossing.t_end + escape.t_end,
        residual=abs(float(distance[0]) - delta),
    )


def way_in_way_out(
    system: PwlSystem,
    delta: float,
    z_grid: Sequence[float],
    work_precision: float | None = None,
    budget: float | None = None,
    threads: int | None = None,
) -> WayInWayOutCurve:
    """Way-in/way-out pairs ``(z_in, z_out)`` over a grid of entry levels.

    Args:
        system: Slow-fast PWL system with an attracting and a repelling region.
        delta: Tube radius.
        z_grid: Entry levels on the attracting manifold.
        work_precision: Event tolerance and size of the perturbation applied
            when the orbit crosses into the repelling region.
        budget: Fast-time horizon per phase; derived from eps when omitted.
        threads: Worker threads; defaults to ``SLOW_PASSAGE_THREADS``.

    Returns:
        WayInWayOutCurve: pairs sorted by ``z_in``; entries whose orbit never
        enters or never leaves are listed in ``dropped``.
    """
    if delta <= 0:
        raise AdmissibilityError(f"delta must be positive, got {delta}")
    levels = sorted(float(z) for z in z_grid)
    if not levels:
        raise AdmissibilityError("z grid is empty")
    ray = attracting_manifold(system)
    logger.info(f"Computing {len(levels)} way-in/way-out pairs with delta = {delta}")

    def one(z_in: float) -> WayInWayOutPoint | None:
        try:
            seed = entry_seed(system, z_in, delta, ray)
        except OutOfRegionError:
            logger.warning(f"Entry level z = {z_in:.12g} is outside the attracting manifold; pair dropped")
            return None
        return _pass(system, seed, z_in, delta, work_precision, budget)

    results = parallel_map(one, levels, threads=worker_threads if threads is None else threads)
    entry_frequency = exit_growth = None
    if system.kind.has_affine_clock:
        entry_frequency = region_flow(system.region_by_id(system.attracting_region)).eigen.beta
        exit_growth = region_flow(system.region_by_id(system.repelling_region)).eigen.alpha
    return WayInWayOutCurve(
        points=[point for point in results if point is not None],
        delta=delta,
        model=system.kind.value,
        epsilon=system.epsilon,
        params=dict(system.params),
        references=reference_levels(system),
        work_precision=work_precision,
        dropped=[z for z, point in zip(levels, results, strict=True) if point is None],
        entry_frequency=entry_frequency,
        exit_growth=exit_growth,
    )


def two_region_bounds(m: float, k: float, epsilon: float) -> tuple[float, float]:
    """Lower and upper bounds of the two-region maximal delay for a unit tube."""
    root = math.sqrt(4.0 - k * k)
    lower = -(2.0 * epsilon / k) * math.log(2.0 * math.sqrt(2.0) * (m + k) * epsilon / root) + m * epsilon
    upper = -(2.0 * epsilon / k) * math.log((m + k) * epsilon / (2.0 * root)) + m * epsilon
    return lower, upper


def maximal_delay(system: PwlSystem, delta: float = DEFAULT_DELTA, budget: float | None = None) -> DelayEstimate:
    """Delay of the orbit through ``p_a``, the attracting manifold's crossing of its boundary.

    Raises:
        OutOfRegionError: when that orbit never leaves the repelling tube within the budget.
    """
    refs = reference_levels(system)
    p_a = attracting_manifold(system).base
    point = _pass(system, p_a, float(p_a[2]), delta, None, budget)
    if point is None:
        raise OutOfRegionError("out of region", reason="orbit through p_a did not leave the repelling tube")

    z_d = refs.drift * (point.z_out - refs.z_out_ref)
    lower = upper = None
    if system.kind is ModelKind.TWO_REGION:
        lower, upper = two_region_bounds(system.params["m"], system.params["k"], system.epsilon)
        if not lower < z_d < upper:
            logger.warning(f"Maximal delay {z_d:.6g} outside the bounds ({lower:.6g}, {upper:.6g})")
    return DelayEstimate(
        epsilon=system.epsilon,
        z_d=z_d,
        z_out=point.z_out,
        t_exit=point.t_exit,
        lower=lower,
        upper=upper,
    )


def asymptote_fit(curve: WayInWayOutCurve, flatness: float = PLATEAU_FLATNESS) -> AsymptoteFit:
    """Line through the pre-plateau part of the curve and the plateau value, in relative coordinates.

    The plateau is the mean of the trailing run of points whose successive
    differences stay below ``flatness`` times the range of exit values. When
    the curve knows its rates, pairs within ``ln(KNEE_RATIO)`` growth times of
    the plateau are left out, and the fit carries harmonics of the entry angle
    next to the line. Theil-Sen screens outliers first. ``offset`` is the
    intercept with the slope held at ``m/k``.
    """
    if len(curve.points) < 10:
        raise AdmissibilityError(f"asymptote fit needs at least 10 pairs, got {len(curve.points)}")
    u, v = curve.relative()
    order = np.argsort(u)
    u, v = u[order], v[order]

    expected_slope = expected_intercept = None
    params = curve.params
    if "m" in params and "k" in params and curve.model in (ModelKind.TWO_REGION.value, ModelKind.THREE_REGION.value):
        expected_slope = params["m"] / params["k"]
        if "rho" in params:
            expected_intercept = -(2.0 * curve.epsilon / params["k"]) * math.log(abs(params["rho"] / params["mu"]))

    spread = float(np.ptp(v))
    if spread == 0.0:
        return AsymptoteFit(
            slope=0.0,
            intercept=float(v[0]),
            plateau=float(v[0]),
            expected_slope=expected_slope,
            expected_intercept=expected_intercept,
            linear_points=len(v),
            plateau_points=len(v),
        )

    flat = np.abs(np.diff(v)) < flatness * spread
    run = 0
    for is_flat in flat[::-1]:
        if not is_flat:
            break
        run += 1
    plateau_points = run + 1 if run >= 2 else 0
    plateau = float(np.mean(v[-plateau_points:])) if plateau_points else None

    u_lin, v_lin = u[: len(u) - plateau_points], v[: len(v) - plateau_points]
    if plateau is not None and curve.exit_growth:
        # The knee: exits already steered by the perturbation applied at the crossing
        margin = curve.epsilon / abs(curve.exit_growth) * math.log(KNEE_RATIO)
        keep = v_lin <= plateau - margin
        u_lin, v_lin = u_lin[keep], v_lin[keep]

    slope = intercept = offset = None
    used = 0
    if len(u_lin) >= 3:
        theil = stats.theilslopes(v_lin, u_lin)
        residuals = v_lin - (theil.slope * u_lin + theil.intercept)
        scale = 1.4826 * float(np.median(np.abs(residuals)))
        inliers = np.abs(residuals) <= 3.0 * scale + 1e-12 * spread
        if inliers.sum() < 3:
            inliers = np.ones_like(u_lin, dtype=bool)
        u_in, v_in = u_lin[inliers], v_lin[inliers]
        waves = _entry_waves(u_in, curve.entry_frequency, curve.epsilon)
        if len(u_in) < waves.shape[1] + 2 + 3:
            waves = waves[:, :0]
        ones = np.ones_like(u_in)
        (slope, intercept, *_), *_ = linalg.lstsq(np.column_stack([u_in, ones, waves]), v_in)
        slope, intercept, used = float(slope), float(intercept), len(u_in)
        if expected_slope is not None:
            (offset, *_), *_ = linalg.lstsq(np.column_stack([ones, waves]), v_in - expected_slope * u_in)
            offset = float(offset)
    else:
        logger.warning("No linear segment before the plateau")

    return AsymptoteFit(
        slope=slope,
        intercept=intercept,
        plateau=plateau,
        expected_slope=expected_slope,
        expected_intercept=expected_intercept,
        offset=offset,
        linear_points=used,
        plateau_points=plateau_points,
    )


def _entry_waves(u: FloatArray, frequency: float | None, epsilon: float) -> FloatArray:
    # The seed's log-amplitude on arrival depends on twice the entry rotation angle
    if not frequency or epsilon <= 0:
        return np.empty((len(u), 0))
    angle = 2.0 * frequency * u / epsilon
    return np.column_stack([np.cos(angle), np.sin(angle), np.cos(2.0 * angle), np.sin(2.0 * angle)])


def _rotations(block: FloatArray, alpha: float, beta: float, vectors: FloatArray, phases: FloatArray) -> FloatArray:
    # exp(B t) v with the growth exp(alpha t) removed, at rotation angles beta t
    turned = vectors @ (block - alpha * np.eye(2)).T / beta
    return np.cos(phases)[:, None, None] * vectors[None] + np.sin(phases)[:, None, None] * turned[None]


def seeded_offset(system: PwlSystem, samples: int = PHASE_SAMPLES) -> float:
    """Intercept of the way-in/way-out asymptote for orbits seeded as in :func:`entry_seed`.

    Deviations from the connecting orbit stay horizontal and follow the fast
    2x2 blocks of the regions they cross. Their log-amplitude gain between the
    seed and the exit, averaged over the entry and exit rotation phases, shifts
    the line ``z_out = (m/k) z_in`` by ``-(eps/alpha_r)`` times that average.

    Raises:
        AdmissibilityError: for anything but a three-region system.
        OutOfRegionError: when the orbit through ``p_a`` never reaches the repelling region.
    """
    if system.kind is not ModelKind.THREE_REGION:
        raise AdmissibilityError(f"seeded offset needs a three-region system, got {system.kind.value}")
    attracting_spec = system.region_by_id(system.attracting_region)
    repelling_spec = system.region_by_id(system.repelling_region)
    attracting, repelling = region_flow(attracting_spec).eigen, region_flow(repelling_spec).eigen
    ray = attracting_manifold(system)

    boundary = repelling_spec.lower_x
    connection = integrate(system, ray.base, time_budget(system, 0.0), monitor=lambda states: boundary - states[:, 0])
    if connection.terminated_by is not Termination.MONITOR:
        raise OutOfRegionError("out of region", reason="orbit through p_a never reached the repelling region")
    carry = np.eye(2)
    for arc in connection.arcs:
        if arc.region_id != system.repelling_region:
            carry = linalg.expm(system.region_by_id(arc.region_id).A[:2, :2] * arc.duration) @ carry

    phases = np.linspace(0.0, 2.0 * math.pi, samples, endpoint=False)
    seed = ray.in_plane_direction()[None, :2]
    arrivals = _rotations(attracting_spec.A[:2, :2], attracting.alpha, attracting.beta, seed, phases)[:, 0] @ carry.T
    exits = _rotations(repelling_spec.A[:2, :2], repelling.alpha, repelling.beta, arrivals, phases)
    gain = float(np.mean(np.log(np.linalg.norm(exits, axis=-1))))
    offset = -(system.epsilon / repelling.alpha) * gain
    logger.debug(f"Seeded asymptote offset {offset:.6g} from a mean log-gain of {gain:.6g}")
    return offset


def delay_vs_epsilon(
    model: SlowFastModel,
    eps_grid: Sequence[float],
    delta: float = DEFAULT_DELTA,
    threads: int | None = None,
) -> DelaySweep:
    """Maximal delay over a grid of eps and its fit ``z_d = u1 eps + u2 eps ln(eps)``.

    The fit is least squares on ``z_d / eps``, so every decade of eps weighs the
    same instead of the largest values deciding ``u2``.
    """
    epsilons = [float(e) for e in eps_grid]
    if len(epsilons) < 3:
        raise AdmissibilityError(f"delay sweep needs at least 3 values of eps, got {len(epsilons)}")
    if any(e <= 0 for e in epsilons):
        raise AdmissibilityError("eps grid must be positive")
    logger.info(f"Sweeping the maximal delay over {len(epsilons)} values of eps")

    def one(eps: float) -> DelayEstimate:
        return maximal_delay(model.with_epsilon(eps).build(), delta)

    estimates = parallel_map(one, epsilons, threads=worker_threads if threads is None else threads)
    eps_arr = np.array(epsilons)
    delays = np.array([estimate.z_d for estimate in estimates])
    design = np.column_stack([eps_arr, eps_arr * np.log(eps_arr)])
    (u1, u2), *_ = linalg.lstsq(design / eps_arr[:, None], delays / eps_arr)
    fitted = design @ np.array([u1, u2])
    norm = float(np.linalg.norm(delays)) or 1.0

    rows = [
        DelaySweepRow(epsilon=e.epsilon, z_d=e.z_d, lower=e.lower, upper=e.upper, fit=float(f))
        for e, f in zip(estimates, fitted, strict=True)
    ]
    return DelaySweep(rows=rows, u1=float(u1), u2=float(u2), relative_residual=float(np.linalg.norm(fitted - delays)) / norm)


def precision_diagnosis(
    system: PwlSystem,
    precisions: Sequence[float],
    delta: float = DEFAULT_DELTA,
    z_grid: Sequence[float] | None = None,
) -> list[PrecisionRow]:
    """Plateau of the way-in/way-out curve and the amplitude bracket it implies, per working precision.

    The time spent past the switching plane inverts to a bracket of the
    amplitude the orbit carried when it crossed into the repelling region;
    the bracket should match the working precision in order of magnitude.
    """
    if system.kind not in (ModelKind.TWO_REGION, ModelKind.THREE_REGION):
        raise AdmissibilityError(f"precision diagnosis needs a two- or three-region system, got {system.kind.value}")
    k = system.params["k"]
    refs = reference_levels(system)
    rows: list[PrecisionRow] = []
    for precision in precisions:
        if precision <= 0:
            raise AdmissibilityError(f"working precision must be positive, got {precision}")
        if z_grid is None:
            p_a = attracting_manifold(system).base
            single = _pass(system, p_a, float(p_a[2]), delta, precision, None)
            points = [single] if single is not None else []
        else:
            points = way_in_way_out(system, delta, z_grid, work_precision=precision).points
        if not points:
            logger.warning(f"No orbit left the repelling tube at precision {precision:g}")
            rows.append(PrecisionRow(precision=precision, theta_min=None, theta_max=None, plateau=None, exit_time=None))
            continue
        exit_time = float(np.median([point.t_exit - point.t_cross for point in points]))
        theta_min, theta_max = theta_bracket(exit_time, k)
        rows.append(
            PrecisionRow(
                precision=precision,
                theta_min=theta_min,
                theta_max=theta_max,
                plateau=float(np.mean([refs.drift * (point.z_out - refs.z_out_ref) for point in points])),
                exit_time=exit_time,
            )
        )
        logger.info(f"Precision {precision:g}: theta in ({theta_min:.3g}, {theta_max:.3g})")
    return rows


def buffer_levels(system: PwlSystem) -> BufferLevels:
    """Buffer value ``a - mu`` and where the two manifolds meet their boundaries, relative to ``mu``."""
    if system.kind is not ModelKind.BUFFER:
        raise AdmissibilityError(f"buffer levels need a buffer system, got {system.kind.value}")
    mu = system.params["mu"]
    return BufferLevels(
        a_minus_mu=system.params["a"] - mu,
        attracting_exit=float(attracting_manifold(system).base[2]) - mu,
        repelling_entry=float(repelling_manifold(system).base[2]) - mu,
    )


def burst_alternations(trajectory: Trajectory, quiet_min_duration: float = 50.0) -> int:
    """Number of switches between quiescent arcs (longer than ``quiet_min_duration``) and runs of short oscillation arcs."""
    labels = [arc.t_exit - arc.t_entry > quiet_min_duration for arc in trajectory.arcs if arc.t_exit > arc.t_entry]
    return sum(1 for previous, current in zip(labels, labels[1:], strict=False) if previous != current)
