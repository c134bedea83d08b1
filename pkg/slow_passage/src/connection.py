"""Conditions under which attracting and repelling slow manifolds connect."""

import logging
import math
from collections.abc import Callable

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ValidationError
from scipy.optimize import approx_fprime

from slow_passage.errors import (
    AdmissibilityError,
    ConnectionFailedError,
    ConvergenceError,
    DegenerateSpectrumError,
    PwlError,
)
from slow_passage.models import BufferModel, DkModel, ModifiedDkModel, ThreeRegionModel, ThreeRegionParams
from slow_passage.pwl.constants import Criticality, SpectralType, Termination
from slow_passage.pwl.eigen import NEUTRAL_ALPHA_TOL
from slow_passage.pwl.flow import AffineFlow, integrate, region_flow
from slow_passage.pwl.manifolds import attracting_manifold, repelling_manifold
from slow_passage.pwl.system import FloatArray, RegionSpec
from slow_passage.utils.constants import (
    ADMISSIBILITY_MARGIN,
    CONNECTION_TOL,
    DK_A,
    DK_B,
    NEWTON_MAX_ITER,
    SHOOTING_TOL,
    VERIFICATION_TOL,
)

logger = logging.getLogger(__name__)

# Equalities between boundaries or slopes are decided at this relative tolerance
EQUALITY_TOL = 1e-12
# Sign rule behind the criticality label, reported next to it
HOPF_CONVENTION = "subcritical iff l - m > 0 (l > 0) or l + k > 0 (l < 0)"


class ConnectionSolution(BaseModel):
    rho: float
    mu: float
    epsilon: float
    m: float
    k: float
    l: float
    n: float
    t_hat: float
    residual: float
    monotone: bool


class SignRelations(BaseModel):
    case: str
    statement: str
    l: float
    m: float
    k: float
    holds: bool


class HopfClassification(BaseModel):
    location: float
    criticality: Criticality
    sign_datum: float | None
    rationale: str
    convention: str = HOPF_CONVENTION


class BufferConnection(BaseModel):
    a: float
    epsilon: float
    m: float
    k: float
    tau: float
    rho: float
    mu: float
    residual: float
    iterations: int
    seed: float
    alphas: dict[str, float]
    spectral_types: dict[str, SpectralType]


class DkConnectionReport(BaseModel):
    equilibrium: tuple[float, float, float]
    connect: bool
    gap: float
    det_lambda: float
    attracting_point: tuple[float, float, float]
    repelling_point: tuple[float, float, float]


class ShootingSolution(BaseModel):
    epsilon: float
    eta: float
    I: float  # noqa: E741
    s: float
    rho: float
    mu: float
    t: float
    residual: float
    iterations: int


def three_region_slopes(rho: float, mu: float, epsilon: float) -> tuple[float, float]:
    """Slopes ``(m, k)`` that connect the slow manifolds of the three-region system.

    With ``L = ln|rho/mu|`` and ``t_hat = sqrt(L^2 + pi^2)`` the central slope is
    ``l = 2 L / t_hat`` and ``k + m = (mu - rho)/eps - t_hat``.
    """
    if not rho < 0.0 < mu:
        raise AdmissibilityError(f"region ordering violated: need rho < 0 < mu, got {rho}, {mu}")
    if epsilon <= 0:
        raise AdmissibilityError(f"epsilon must be positive, got {epsilon}")
    log_ratio = math.log(abs(rho / mu))
    t_hat = math.hypot(log_ratio, math.pi)
    slope_sum = (mu - rho) / epsilon - t_hat
    l = 2.0 * log_ratio / t_hat  # noqa: E741
    k = l - slope_sum * rho / (mu - rho)
    return slope_sum - k, k


def solve_three_region(rho: float, mu: float, epsilon: float) -> ConnectionSolution:
    """Solve and verify the three-region connection for given boundaries.

    Raises:
        AdmissibilityError: ``slopes out of admissible range``.
        ConnectionFailedError: when flowing ``p_a`` for ``t_hat`` misses ``p_r``.
    """
    m, k = three_region_slopes(rho, mu, epsilon)
    if not (ADMISSIBILITY_MARGIN < m < 2 - ADMISSIBILITY_MARGIN and ADMISSIBILITY_MARGIN < k < 2 - ADMISSIBILITY_MARGIN):
        raise AdmissibilityError("slopes out of admissible range", m=m, k=k, rho=rho, mu=mu, epsilon=epsilon)

    model = ThreeRegionModel(rho=rho, mu=mu, m=m, k=k, epsilon=epsilon)
    system = model.build()
    t_hat = (mu - rho) / epsilon - (k + m)

    p_a = attracting_manifold(system).base
    p_r = repelling_manifold(system).base
    central = region_flow(system.region_by_id("C"))
    residual = float(np.linalg.norm(central.evaluate(p_a, t_hat) - p_r))
    if residual > VERIFICATION_TOL:
        raise ConnectionFailedError("connection verification failed", residual=residual)

    path = central.evaluate(p_a, np.linspace(0.0, t_hat, 2001))[:, 0]
    monotone = bool(np.all(np.diff(path) >= -1e-12))
    if not monotone:
        logger.warning(f"Central x is not monotone on [0, {t_hat:.6g}] for rho = {rho}, mu = {mu}")

    return ConnectionSolution(
        rho=rho,
        mu=mu,
        epsilon=epsilon,
        m=m,
        k=k,
        l=model.l,
        n=model.n,
        t_hat=t_hat,
        residual=residual,
        monotone=monotone,
    )


def boundaries_for_slopes(m: float, k: float, epsilon: float, guess: tuple[float, float]) -> tuple[float, float]:
    """Boundaries ``(rho, mu)`` whose connecting slopes are ``(m, k)``, by Newton iteration."""
    target = np.array([m, k])
    x = np.array(guess, dtype=float)

    def residual(v: FloatArray) -> FloatArray:
        return np.array(three_region_slopes(float(v[0]), float(v[1]), epsilon)) - target

    for iteration in range(NEWTON_MAX_ITER):
        value = residual(x)
        if np.linalg.norm(value) < CONNECTION_TOL:
            logger.info(f"Boundaries for m = {m}, k = {k} found after {iteration} iterations")
            return float(x[0]), float(x[1])
        jacobian = approx_fprime(x, residual, 1e-8 * np.maximum(1.0, np.abs(x)) * epsilon)
        if abs(np.linalg.det(jacobian)) < 1e-14:
            raise ConvergenceError("continuation stalled: singular slope Jacobian", last=x)
        x = x - np.linalg.solve(jacobian, value)
    raise ConvergenceError("continuation stalled", last=x, residual=float(np.linalg.norm(residual(x))))


def sign_relations(rho: float, mu: float, epsilon: float) -> SignRelations:
    """Which ordering of ``l``, ``k`` and ``m`` the boundaries impose, checked on the solved slopes."""
    m, k = three_region_slopes(rho, mu, epsilon)
    l = 2.0 * math.log(abs(rho / mu)) / math.hypot(math.log(abs(rho / mu)), math.pi)  # noqa: E741
    scale = max(abs(rho), abs(mu))

    if abs(mu + rho) <= EQUALITY_TOL * scale:
        case, statement = "c", "mu = -rho: l = 0 and k = m"
        holds = abs(l) <= EQUALITY_TOL and abs(k - m) <= 1e-9 * max(1.0, abs(k))
    elif mu < -rho:
        case, statement = "a", "mu < -rho: l > 0 and k > m"
        holds = l > 0 and k > m
    else:
        case, statement = "b", "mu > -rho: l < 0 and k < m"
        holds = l < 0 and k < m
    if not holds:
        logger.warning(f"Sign relation ({case}) fails for rho = {rho}, mu = {mu}: l = {l}, m = {m}, k = {k}")
    return SignRelations(case=case, statement=statement, l=l, m=m, k=k, holds=holds)


def classify_hopf_like(params: ThreeRegionParams) -> HopfClassification:
    """Location and criticality of the Hopf-like bifurcation of the three-region layer problem.

    The focus changes stability where the nullcline slope changes sign: at
    ``z = rho`` when ``l > 0`` and at ``z = mu`` when ``l < 0``.

    Raises:
        AdmissibilityError: ``no criterion`` when the sign datum vanishes.
    """
    l, m, k = params.l, params.m, params.k  # noqa: E741
    if abs(l) <= EQUALITY_TOL:
        return HopfClassification(
            location=params.mu,
            criticality=Criticality.NONE,
            sign_datum=None,
            rationale="l = 0: the central focus is a center and no Hopf-like bifurcation is guaranteed",
        )
    if l > 0:
        location, datum, label = params.rho, l - m, "l - m"
    else:
        location, datum, label = params.mu, l + k, "l + k"
    if abs(datum) <= EQUALITY_TOL:
        raise AdmissibilityError("no criterion", sign_datum=datum, l=l, m=m, k=k)
    criticality = Criticality.SUBCRITICAL if datum > 0 else Criticality.SUPERCRITICAL
    return HopfClassification(
        location=location,
        criticality=criticality,
        sign_datum=datum,
        rationale=f"{label} = {datum:.6g} {'>' if datum > 0 else '<'} 0",
    )


def classify_two_region(m: float, k: float) -> HopfClassification:
    """Criticality of the two-region Hopf-like bifurcation at ``z = 0``: the cone of cycles is stable iff ``k < m``."""
    datum = k - m
    if abs(datum) <= EQUALITY_TOL:
        return HopfClassification(location=0.0, criticality=Criticality.NONE, sign_datum=0.0, rationale="k = m: degenerate cone", convention="stable cone iff k < m")
    return HopfClassification(
        location=0.0,
        criticality=Criticality.SUPERCRITICAL if datum < 0 else Criticality.SUBCRITICAL,
        sign_datum=datum,
        rationale=f"k - m = {datum:.6g}",
        convention="stable cone iff k < m",
    )


def buffer_seed(a: float) -> FloatArray:
    """Zero-epsilon solution ``(m, k, tau)`` of the scaled buffer connection equations."""
    if a in (0.0, 1.0):
        raise AdmissibilityError(f"buffer abscissa must differ from 0 and 1, got {a}")
    slope = a * math.pi / (2.0 * (1.0 - a))
    return np.array([slope, slope, math.pi])


def buffer_seed_jacobian(a: float) -> FloatArray:
    """Limit as eps -> 0 of the Jacobian of the scaled buffer equations at the seed."""
    slope = buffer_seed(a)[0]
    return np.array(
        [
            [2.0 * a - 1.0, -1.0, a],
            [0.0, 0.0, a * slope],
            [a - 1.0, a - 1.0, a],
        ]
    )


def buffer_residual(x: npt.ArrayLike, a: float, epsilon: float) -> FloatArray:
    """``(u_C(tau; p_a) - p_r) / eps`` for ``x = (m, k, tau)``."""
    m, k, tau = (float(v) for v in np.asarray(x, dtype=float))
    try:
        system = BufferModel(a=a, m=m, k=k, epsilon=epsilon).build()
    except ValidationError as e:
        raise ConvergenceError("continuation stalled: iterate left the admissible slopes", m=m, k=k) from e
    p_a = attracting_manifold(system).base
    p_r = repelling_manifold(system).base
    landed = region_flow(system.region_by_id("C")).evaluate(p_a, tau)
    return (landed - p_r) / epsilon


def buffer_jacobian(x: npt.ArrayLike, a: float, epsilon: float, step: float = 1e-7) -> FloatArray:
    point = np.asarray(x, dtype=float)
    return np.asarray(approx_fprime(point, buffer_residual, step, a, epsilon))


def _newton(
    func: Callable[[FloatArray], FloatArray],
    x0: FloatArray,
    tol: float,
    step: float,
    label: str,
) -> tuple[FloatArray, int]:
    x = x0.copy()
    value = func(x)
    for iteration in range(1, NEWTON_MAX_ITER + 1):
        jacobian = np.asarray(approx_fprime(x, func, step * np.maximum(1.0, np.abs(x))))
        scale = float(np.prod(np.linalg.norm(jacobian, axis=0))) or 1.0
        if abs(np.linalg.det(jacobian)) < 1e-10 * scale:
            raise ConvergenceError(f"{label}: near-singular Jacobian", last=x)
        delta = np.linalg.solve(jacobian, -value)
        # Backtrack while the residual grows
        damping = 1.0
        for _ in range(12):
            trial = x + damping * delta
            try:
                trial_value = func(trial)
            except PwlError:
                trial_value = None
            if trial_value is not None and np.linalg.norm(trial_value) <= max(np.linalg.norm(value), tol):
                break
            damping /= 2.0
        else:
            raise ConvergenceError(f"{label}: line search failed", last=x, residual=float(np.linalg.norm(value)))
        x, value = trial, trial_value
        if np.linalg.norm(value) < tol or np.linalg.norm(damping * delta) < 1e-15 * max(1.0, float(np.linalg.norm(x))):
            return x, iteration
    raise ConvergenceError(f"{label}: no convergence in {NEWTON_MAX_ITER} iterations", last=x, residual=float(np.linalg.norm(value)))


def solve_buffer_connection(a: float, epsilon: float, steps: int = 10) -> BufferConnection:
    """Slopes connecting the slow manifolds at a buffer point, by Newton continuation in eps.

    Starting from the zero-epsilon seed ``m = k = a pi / (2 (1 - a))``, ``tau = pi``
    the scaled equations are solved at ``eps / steps, 2 eps / steps, ..., eps``.

    Raises:
        ConvergenceError: ``continuation stalled`` or a near-singular Jacobian.
        DegenerateSpectrumError: when the solution lacks the buffer spectral configuration.
    """
    if epsilon <= 0:
        raise AdmissibilityError(f"epsilon must be positive, got {epsilon}")
    seed = buffer_seed(a)
    seed_det = float(np.linalg.det(buffer_seed_jacobian(a)))
    x = seed.copy()
    total_iterations = 0

    for step_index in range(1, steps + 1):
        eps_j = epsilon * step_index / steps

        def scaled(v: FloatArray, eps_j: float = eps_j) -> FloatArray:
            return buffer_residual(v, a, eps_j)

        try:
            x, iterations = _newton(scaled, x, CONNECTION_TOL / eps_j * 1e-2, 1e-7, "continuation stalled")
        except ConvergenceError as e:
            e.details.setdefault("epsilon", eps_j)
            e.details.setdefault("seed_det", seed_det)
            raise
        total_iterations += iterations
        logger.info(f"Buffer connection at eps = {eps_j:.6g}: m = {x[0]:.10g}, k = {x[1]:.10g}, tau = {x[2]:.10g}")

    model = BufferModel(a=a, m=float(x[0]), k=float(x[1]), epsilon=epsilon)
    system = model.build()
    residual = float(np.linalg.norm(buffer_residual(x, a, epsilon)) * epsilon)

    flows = {region.id: region_flow(region) for region in system.regions}
    alphas = {name: flow.eigen.alpha for name, flow in flows.items()}
    if not (alphas["L"] < 0 < alphas["R"] and abs(alphas["C"]) <= NEUTRAL_ALPHA_TOL):
        raise DegenerateSpectrumError("wrong spectral configuration for a buffer system", alphas=alphas)

    return BufferConnection(
        a=a,
        epsilon=epsilon,
        m=float(x[0]),
        k=float(x[1]),
        tau=float(x[2]),
        rho=model.rho,
        mu=model.mu,
        residual=residual,
        iterations=total_iterations,
        seed=float(seed[0]),
        alphas=alphas,
        spectral_types={name: flow.eigen.spectral_type for name, flow in flows.items()},
    )


def dk_det_lambda(lambda_l: float, lambda_m: float, a: float, eta: float, b: float, epsilon: float) -> float:
    """Determinant of the linear system the equilibria must satisfy for the DK manifolds to connect."""
    numerator = -lambda_l * lambda_m * (lambda_m - lambda_l) * (epsilon * b - eta * a)
    denominator = a * b * (lambda_l + eta * a) * (lambda_m + eta * a) * (lambda_l + epsilon * b) * (lambda_m + epsilon * b)
    return numerator / denominator


def dk_connection_test(model: DkModel, tol: float = 1e-9) -> DkConnectionReport:
    """Whether the DK attracting (L) and repelling (M) slow manifolds connect on ``x = -1``.

    They connect exactly when the equilibrium lies on the switching plane; the
    report also gives the distance between the two manifolds' crossing points.
    """
    equilibrium = model.equilibrium
    system = model.build()
    p_a = attracting_manifold(system).base
    p_r = repelling_manifold(system).base
    lambda_l = region_flow(system.region_by_id("L")).eigen.lambda_slow
    lambda_m = region_flow(system.region_by_id("M")).eigen.lambda_slow
    return DkConnectionReport(
        equilibrium=equilibrium,
        connect=abs(equilibrium[0] + 1.0) < tol,
        gap=float(np.linalg.norm(p_a - p_r)),
        det_lambda=dk_det_lambda(lambda_l, lambda_m, model.a, model.effective_eta, model.b, model.epsilon),
        attracting_point=tuple(float(v) for v in p_a),  # type: ignore[arg-type]
        repelling_point=tuple(float(v) for v in p_r),  # type: ignore[arg-type]
    )


def _new_region(s: float, rho: float, mu: float, a: float, eta: float, b: float, epsilon: float, current: float) -> RegionSpec:
    return RegionSpec(
        id="N",
        matrix=((s, -1.0, -1.0), (eta, -eta * a, 0.0), (epsilon, 0.0, -epsilon * b)),
        offset=(-rho - 2.0 - s * rho + current, 0.0, 0.0),
        lower_x=rho,
        upper_x=mu,
    )


def _flight_time_guess(flow: AffineFlow, p_a: FloatArray, p_r: FloatArray) -> float:
    # Time for the slow coordinate to go from p_a to p_r
    lam = flow.eigen.lambda_slow
    start, end = flow.jordan_coordinates(p_a)[0], flow.jordan_coordinates(p_r)[0]
    shift = flow.slow_forcing / lam
    ratio = (end + shift) / (start + shift)
    if ratio <= 0:
        raise ConvergenceError("shooting: no flight time estimate", start=start, end=end)
    return math.log(ratio) / lam


def modified_dk_shoot(
    epsilon: float,
    eta: float | None,
    I: float,  # noqa: E741
    guess: tuple[float, float],
    a: float = DK_A,
    b: float = DK_B,
    eta1: float | None = None,
) -> ShootingSolution:
    """Shoot for ``(s, rho)`` so the modified DK slow manifolds connect.

    Unknowns are the flight time ``t`` in the new region together with ``s`` and
    ``rho``; the equations ask the orbit through the attracting manifold's
    crossing of ``x = rho`` to reach the repelling manifold's crossing of ``x = mu``.

    Args:
        epsilon: Timescale ratio.
        eta: Recovery rate; ignored when ``eta1`` is given.
        I: Applied current.
        guess: Starting ``(s, rho)``.
        a: DK parameter a.
        b: DK parameter b.
        eta1: Stiffness correction, ``eta = 1/a + eta1 * eps``.

    Raises:
        AdmissibilityError: ``region ordering violated``.
        ConvergenceError: when shooting diverges; carries the last iterate.
    """
    if eta1 is not None:
        eta_value = 1.0 / a + eta1 * epsilon
    elif eta is not None:
        eta_value = eta
    else:
        raise AdmissibilityError("either eta or eta1 is required")
    classic = DkModel(a=a, b=b, I=I, epsilon=epsilon, eta=eta_value).build()
    left_ray = attracting_manifold(classic)
    middle_ray = repelling_manifold(classic)

    def mu_of(s: float, rho: float) -> float:
        if s == 1.0:
            raise AdmissibilityError("region ordering violated", s=s, rho=rho)
        mu = (rho * (s + 1.0) + 2.0) / (s - 1.0)
        if not rho < -1.0 < mu < 1.0:
            raise AdmissibilityError("region ordering violated", s=s, rho=rho, mu=mu)
        return mu

    def residual(v: FloatArray) -> FloatArray:
        t, s, rho = (float(c) for c in v)
        mu = mu_of(s, rho)
        p_a = left_ray.point(left_ray.tau_at_x(rho))
        p_r = middle_ray.point(middle_ray.tau_at_x(mu))
        flow = AffineFlow.from_region(_new_region(s, rho, mu, a, eta_value, b, epsilon, I))
        return flow.evaluate(p_a, t) - p_r

    s0, rho0 = guess
    mu0 = mu_of(s0, rho0)
    p_a0 = left_ray.point(left_ray.tau_at_x(rho0))
    system = ModifiedDkModel(a=a, b=b, I=I, epsilon=epsilon, eta=eta_value, s=s0, rho=rho0).build()
    crossing = integrate(system, p_a0, t_max=2000.0, monitor=lambda states: mu0 - states[:, 0])
    if crossing.terminated_by is Termination.MONITOR:
        t0 = crossing.t_end
    else:
        flow0 = AffineFlow.from_region(_new_region(s0, rho0, mu0, a, eta_value, b, epsilon, I))
        t0 = _flight_time_guess(flow0, p_a0, middle_ray.point(middle_ray.tau_at_x(mu0)))
    logger.info(f"Shooting from s = {s0}, rho = {rho0} with flight time guess {t0:.6g}")

    x, iterations = _newton(residual, np.array([t0, s0, rho0]), SHOOTING_TOL * 1e-2, 1e-9, "shooting diverged")
    value = float(np.linalg.norm(residual(x)))
    if value > SHOOTING_TOL:
        raise ConvergenceError("shooting diverged", last=x, residual=value)
    t, s, rho = (float(c) for c in x)
    return ShootingSolution(
        epsilon=epsilon,
        eta=eta_value,
        I=I,
        s=s,
        rho=rho,
        mu=mu_of(s, rho),
        t=t,
        residual=value,
        iterations=iterations,
    )
