"""Canonical slow manifolds and tubular coordinates around them.

In every region the set where the focus coordinates sit at their fixed point is
an invariant line parallel to the slow eigenvector. Its part inside the slab is
the canonical slow manifold of that region; it attracts when the focus pair
decays and repels when it grows.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from slow_passage.errors import AdmissibilityError, DegenerateSpectrumError, OutOfRegionError
from slow_passage.pwl.constants import ModelKind, Stability
from slow_passage.pwl.eigen import NEUTRAL_ALPHA_TOL
from slow_passage.pwl.flow import region_flow
from slow_passage.pwl.system import FloatArray, PwlSystem, RegionSpec, as_state
from slow_passage.utils.constants import BOUNDARY_TOL

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SlowManifoldRay:
    """Ray ``base + tau * direction`` for ``tau`` in ``param_range``.

    ``base`` is the ray's intersection with the switching plane it faces (the
    exit side of an attracting ray, the entry side of a repelling one).
    """

    base: FloatArray
    direction: FloatArray
    param_range: tuple[float, float]
    stability: Stability
    region_id: str
    plane_basis: FloatArray

    @property
    def boundary_point(self) -> FloatArray:
        return self.base

    def point(self, tau: float | FloatArray) -> FloatArray:
        return self.base + np.multiply.outer(tau, self.direction)

    def tau_at_x(self, x: float) -> float:
        return (x - self.base[0]) / self.direction[0]

    def tau_at_z(self, z: float) -> float:
        if self.direction[2] == 0.0:
            raise ValueError(f"Ray in region {self.region_id} does not cross z-levels")
        return (z - self.base[2]) / self.direction[2]

    def contains_tau(self, tau: float | FloatArray, tol: float = BOUNDARY_TOL) -> npt.NDArray[np.bool_]:
        lo, hi = self.param_range
        return (np.asarray(tau) >= lo - tol) & (np.asarray(tau) <= hi + tol)

    def decompose(self, states: npt.ArrayLike) -> tuple[FloatArray, FloatArray]:
        """Split ``state - base`` into the ray parameter and the in-plane offset.

        The comparison plane through the ray point ``base + tau * direction`` is
        spanned by the focus plane basis of the region.
        """
        points = np.atleast_2d(np.asarray(states, dtype=float))
        frame = np.column_stack([self.direction, self.plane_basis[0], self.plane_basis[1]])
        coords = np.linalg.solve(frame, (points - self.base).T).T
        tau = coords[:, 0]
        offsets = points - self.point(tau)
        return tau, offsets

    def distances(self, states: npt.ArrayLike) -> tuple[FloatArray, FloatArray, FloatArray]:
        """Distance along the comparison plane, ray parameter and ``z`` of the comparison point."""
        tau, offsets = self.decompose(states)
        z_hat = self.base[2] + tau * self.direction[2]
        return np.linalg.norm(offsets, axis=1), tau, z_hat

    def in_plane_direction(self, target: npt.ArrayLike = (0.0, 1.0, 0.0)) -> FloatArray:
        """Unit vector of the comparison plane closest to ``target``."""
        basis = self.plane_basis
        gram = basis @ basis.T
        weights = np.linalg.solve(gram, basis @ np.asarray(target, dtype=float))
        vector = weights @ basis
        return vector / np.linalg.norm(vector)


@dataclass(frozen=True)
class TubularCoords:
    distance: float
    z_at: float
    t: float
    tau: float


def _stability(alpha: float) -> Stability:
    if abs(alpha) <= NEUTRAL_ALPHA_TOL:
        return Stability.NEUTRAL
    return Stability.ATTRACTING if alpha < 0 else Stability.REPELLING


def region_manifold(region: RegionSpec, facing: str | None = None) -> SlowManifoldRay:
    """Canonical slow manifold of one region.

    Args:
        region: The region.
        facing: ``"upper"`` or ``"lower"``: which slab boundary the base sits on.
            Defaults to the exit side for attracting rays, the entry side otherwise.
    """
    flow = region_flow(region)
    direction = flow.eigen.v_slow
    anchor = flow.basis[:, 1:] @ flow.focus_center
    stability = _stability(flow.eigen.alpha)
    if abs(direction[0]) < 1e-14:
        raise DegenerateSpectrumError("degenerate spectrum", region=region.id, reason="slow direction parallel to switching planes")

    if facing is None:
        facing = "upper" if stability is Stability.ATTRACTING else "lower"
    bound = region.upper_x if facing == "upper" else region.lower_x
    if not math.isfinite(bound):
        bound = region.lower_x if facing == "upper" else region.upper_x
    if not math.isfinite(bound):
        bound = 0.0

    base = anchor + (bound - anchor[0]) / direction[0] * direction
    taus = sorted(((region.lower_x - base[0]) / direction[0], (region.upper_x - base[0]) / direction[0]))
    return SlowManifoldRay(
        base=base,
        direction=direction,
        param_range=(float(taus[0]), float(taus[1])),
        stability=stability,
        region_id=region.id,
        plane_basis=flow.eigen.plane_basis,
    )


def canonical_slow_manifolds(system: PwlSystem) -> list[SlowManifoldRay]:
    """Canonical slow manifold of every region, ordered left to right.

    Raises:
        AdmissibilityError: for DK systems with ``eta * a == eps * b``.
        DegenerateSpectrumError: when a buffer system lacks its spectral configuration.
    """
    if system.kind in (ModelKind.DK, ModelKind.MODIFIED_DK):
        a, eta, b = system.params["a"], system.params["eta"], system.params["b"]
        if abs(eta * a - system.epsilon * b) < 1e-12:
            raise AdmissibilityError("eta * a equals eps * b: slow eigenvectors are undefined", eta=eta, a=a, b=b)

    rays = [region_manifold(region) for region in system.regions]

    if system.kind is ModelKind.BUFFER:
        alphas = [region_flow(region).eigen.alpha for region in system.regions]
        if not (alphas[0] < 0 < alphas[2] and abs(alphas[1]) <= NEUTRAL_ALPHA_TOL):
            raise DegenerateSpectrumError("wrong spectral configuration for a buffer system", alphas=alphas)
    return rays


def attracting_manifold(system: PwlSystem) -> SlowManifoldRay:
    return region_manifold(system.region_by_id(system.attracting_region), facing="upper")


def repelling_manifold(system: PwlSystem) -> SlowManifoldRay:
    return region_manifold(system.region_by_id(system.repelling_region), facing="lower")


def distance_along_plane(system: PwlSystem, manifold: SlowManifoldRay, p: npt.ArrayLike, t: float) -> TubularCoords:
    """Distance from the flowed point to the manifold, measured in the moving comparison plane.

    The point is flowed with the manifold region's own closed form; negative
    times give the backward (attracting side) distance.

    Raises:
        OutOfRegionError: when the flowed point is outside the manifold's region.
    """
    region = system.region_by_id(manifold.region_id)
    state = region_flow(region).evaluate(as_state(p), float(t))
    if not region.contains(float(state[0])):
        raise OutOfRegionError("out of region", region=region.id, x=float(state[0]), t=t)
    distance, tau, z_hat = manifold.distances(state)
    return TubularCoords(distance=float(distance[0]), z_at=float(z_hat[0]), t=float(t), tau=float(tau[0]))


def _focus_offsets(p: FloatArray, slope: float, epsilon: float) -> tuple[float, float]:
    # Offsets from the ray (x, s x - eps, x - s eps) at the same z-level
    x_hat = p[2] + slope * epsilon
    y_hat = slope * x_hat - epsilon
    return float(p[0] - x_hat), float(p[1] - y_hat)


def focus_amplitude(p: npt.ArrayLike, slope: float, epsilon: float) -> float:
    """Amplitude of the in-plane oscillation around the ray of slope ``slope``.

    Conserved up to the factor ``exp(slope t / 2)`` by the linear flow.
    """
    state = as_state(p)
    X, Y = _focus_offsets(state, slope, epsilon)
    radicand = 4.0 / (4.0 - slope**2) * (X * X - slope * X * Y + Y * Y)
    if radicand < 0.0:
        if radicand < -1e-14:
            raise ValueError(f"Negative amplitude radicand {radicand:.3e}")
        radicand = 0.0
    return math.sqrt(radicand)


def theta_amplitude(p: npt.ArrayLike, k: float, epsilon: float) -> float:
    """Amplitude of a point of ``{x = 0}`` around the repelling ray ``(x, kx - eps, x - k eps)``."""
    state = as_state(p)
    if abs(state[0]) > BOUNDARY_TOL:
        raise OutOfRegionError("out of region", reason="point is not on the switching plane x = 0", x=float(state[0]))
    y0, z0 = state[1], state[2]
    radicand = 4.0 / (4.0 - k * k) * ((y0 + epsilon) ** 2 + (z0 + k * epsilon) * (z0 - k * y0))
    if radicand < 0.0:
        if radicand < -1e-14:
            raise ValueError(f"Negative amplitude radicand {radicand:.3e}")
        radicand = 0.0
    return math.sqrt(radicand)


def envelope_factor(p: npt.ArrayLike, slope: float, epsilon: float, t: float | FloatArray) -> FloatArray:
    """Oscillating factor ``C(t) = cos^2(th1 + xi t) + cos^2(th2 + xi t)`` of the distance.

    ``distance(t) = amplitude * exp(slope t / 2) * sqrt(C(t))`` for orbits of the
    two- and three-region lateral regions; pass ``-m`` as slope for the
    attracting side, where C is usually called D.
    """
    state = as_state(p)
    X, Y = _focus_offsets(state, slope, epsilon)
    amplitude = focus_amplitude(state, slope, epsilon)
    xi = math.sqrt(4.0 - slope**2) / 2.0
    if amplitude == 0.0:
        return np.zeros_like(np.asarray(t, dtype=float))
    cos_1 = X / amplitude
    sin_1 = (Y / amplitude - 0.5 * slope * cos_1) / xi
    theta_1 = math.atan2(sin_1, cos_1)
    theta_2 = theta_1 - math.acos(slope / 2.0)
    times = np.asarray(t, dtype=float)
    return np.cos(theta_1 + xi * times) ** 2 + np.cos(theta_2 + xi * times) ** 2


def theta_bracket(exit_time: float, k: float) -> tuple[float, float]:
    """Range of the amplitude that reaches unit distance after ``exit_time``, given 1/16 < C < 2."""
    growth = math.exp(k * exit_time)
    return math.sqrt(1.0 / (2.0 * growth)), math.sqrt(16.0 / growth)
