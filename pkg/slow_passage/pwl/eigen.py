"""Closed-form spectra of 3x3 region matrices with one real eigenvalue and a focus pair."""

import logging
import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from slow_passage.errors import DegenerateSpectrumError
from slow_passage.pwl.constants import SpectralType
from slow_passage.utils.constants import REPEATED_DISC_TOL, REPEATED_ROOT_TOL

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

NEWTON_POLISH_STEPS = 2
NEUTRAL_ALPHA_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class EigenStructure:
    """Spectrum ``lambda_slow, alpha +- i beta`` of a region matrix.

    ``plane_basis`` holds ``Re w`` and ``Im w`` for the eigenvector ``w`` of
    ``alpha + i beta``, so that ``A u = alpha u - beta v`` and
    ``A v = beta u + alpha v``.
    """

    lambda_slow: float
    alpha: float
    beta: float
    v_slow: FloatArray
    plane_basis: FloatArray
    coefficients: tuple[float, float, float]

    @property
    def eigenvalues(self) -> tuple[complex, complex, complex]:
        return (
            complex(self.lambda_slow),
            complex(self.alpha, self.beta),
            complex(self.alpha, -self.beta),
        )

    @property
    def spectral_type(self) -> SpectralType:
        if abs(self.alpha) <= NEUTRAL_ALPHA_TOL:
            return SpectralType.SADDLE_CENTER
        if self.lambda_slow == 0.0 or abs(self.lambda_slow) <= NEUTRAL_ALPHA_TOL * 1e-3:
            return SpectralType.FOCUS
        if self.lambda_slow * self.alpha < 0:
            return SpectralType.SADDLE_FOCUS
        return SpectralType.NODE_FOCUS

    def residual(self) -> float:
        """Largest characteristic polynomial residual over the three eigenvalues."""
        return max(abs(_poly(self.coefficients, value)) for value in self.eigenvalues)


def characteristic_coefficients(matrix: FloatArray) -> tuple[float, float, float]:
    """Coefficients ``(c2, c1, c0)`` of ``det(lambda I - A) = lambda^3 + c2 lambda^2 + c1 lambda + c0``."""
    A = np.asarray(matrix, dtype=float)
    trace = float(np.trace(A))
    minors = float(
        A[0, 0] * A[1, 1]
        - A[0, 1] * A[1, 0]
        + A[0, 0] * A[2, 2]
        - A[0, 2] * A[2, 0]
        + A[1, 1] * A[2, 2]
        - A[1, 2] * A[2, 1]
    )
    det = float(np.linalg.det(A))
    return -trace, minors, -det


def _poly(coefficients: tuple[float, float, float], value: complex) -> complex:
    c2, c1, c0 = coefficients
    return ((value + c2) * value + c1) * value + c0


def _dpoly(coefficients: tuple[float, float, float], value: complex) -> complex:
    c2, c1, _ = coefficients
    return (3 * value + 2 * c2) * value + c1


def _newton_polish(coefficients: tuple[float, float, float], value: complex) -> complex:
    for _ in range(NEWTON_POLISH_STEPS):
        slope = _dpoly(coefficients, value)
        if slope == 0:
            break
        value -= _poly(coefficients, value) / slope
    return value


def cubic_roots(coefficients: tuple[float, float, float]) -> tuple[float, complex]:
    """Real root and upper complex root of a monic cubic, via Cardano and Newton polish.

    Raises:
        DegenerateSpectrumError: on three real roots or repeated roots.
    """
    c2, c1, c0 = coefficients
    shift = -c2 / 3.0
    p = c1 - c2 * c2 / 3.0
    q = 2.0 * c2**3 / 27.0 - c2 * c1 / 3.0 + c0
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3

    # Repeated roots are decided here; the trig and Cardano steps split a double root by ~sqrt(eps)
    terms = max((q / 2.0) ** 2, abs(p / 3.0) ** 3)
    if terms <= (REPEATED_ROOT_TOL * max(1.0, abs(shift))) ** 6:
        raise DegenerateSpectrumError("degenerate spectrum", roots=[shift] * 3)
    if abs(disc) <= REPEATED_DISC_TOL * terms:
        raise DegenerateSpectrumError("degenerate spectrum", discriminant=disc)

    if disc < 0.0:
        # Three distinct real roots
        radius = 2.0 * math.sqrt(-p / 3.0)
        angle = math.acos(max(-1.0, min(1.0, 3.0 * q / (p * radius))))
        roots = sorted(radius * math.cos(angle / 3.0 - 2.0 * math.pi * j / 3.0) + shift for j in range(3))
        scale = max(1.0, *(abs(r) for r in roots))
        if min(roots[1] - roots[0], roots[2] - roots[1]) < REPEATED_ROOT_TOL * scale:
            raise DegenerateSpectrumError("degenerate spectrum", roots=roots)
        raise DegenerateSpectrumError("no focus block", roots=roots)

    half = -q / 2.0
    root = math.sqrt(disc)
    u = float(np.cbrt(half + math.copysign(root, half)))
    v = -p / (3.0 * u) if u != 0.0 else 0.0
    real = _newton_polish(coefficients, complex(u + v + shift)).real

    # Deflate to lambda^2 + (c2 + r) lambda + (c1 + r (c2 + r))
    linear = c2 + real
    constant = c1 + real * linear
    alpha = -linear / 2.0
    beta_sq = constant - alpha * alpha
    scale = max(1.0, abs(real), math.sqrt(abs(constant)))
    if beta_sq <= (REPEATED_ROOT_TOL * scale) ** 2:
        raise DegenerateSpectrumError("degenerate spectrum", roots=[real, alpha, alpha])
    pair = _newton_polish(coefficients, complex(alpha, math.sqrt(beta_sq)))
    return real, complex(pair.real, abs(pair.imag))


def _null_vector(M: npt.NDArray[np.complexfloating] | FloatArray) -> npt.NDArray[np.complexfloating] | FloatArray:
    candidates = [np.cross(M[0], M[1]), np.cross(M[0], M[2]), np.cross(M[1], M[2])]
    return max(candidates, key=lambda c: float(np.linalg.norm(c)))


def eigenstructure(matrix: FloatArray | tuple[tuple[float, ...], ...]) -> EigenStructure:
    """Eigenvalues and real invariant subspaces of a region matrix.

    Args:
        matrix: 3x3 real matrix with one real eigenvalue and a complex pair.

    Returns:
        EigenStructure: spectrum, unit slow eigenvector and focus plane basis.

    Raises:
        DegenerateSpectrumError: ``no focus block`` or ``degenerate spectrum``.
    """
    A = np.asarray(matrix, dtype=float)
    if A.shape != (3, 3) or not np.all(np.isfinite(A)):
        raise ValueError(f"Expected a finite 3x3 matrix, got shape {A.shape}")

    coefficients = characteristic_coefficients(A)
    lambda_slow, pair = cubic_roots(coefficients)
    identity = np.eye(3)

    v_slow = np.real(_null_vector(A - lambda_slow * identity)).astype(float)
    v_slow /= np.linalg.norm(v_slow)
    pivot = int(np.argmax(np.abs(v_slow)))
    if v_slow[0] < 0 or (abs(v_slow[0]) < 1e-14 and v_slow[pivot] < 0):
        v_slow = -v_slow

    w = _null_vector(A.astype(complex) - pair * identity).astype(complex)
    if not np.any(A[2]):
        # Zero third row: every eigenvector of a nonzero eigenvalue has z = 0
        w[2] = 0.0
    re, im = np.real(w), np.imag(w)
    # Rotate w so that Re w and Im w are orthogonal
    theta = 0.5 * math.atan2(-2.0 * float(re @ im), float(re @ re - im @ im))
    w = w * complex(math.cos(theta), math.sin(theta))
    w /= np.linalg.norm(w)
    plane_basis = np.vstack([np.real(w), np.imag(w)])

    structure = EigenStructure(
        lambda_slow=float(lambda_slow),
        alpha=float(pair.real),
        beta=float(pair.imag),
        v_slow=v_slow,
        plane_basis=plane_basis,
        coefficients=coefficients,
    )
    logger.debug(
        f"Spectrum {structure.lambda_slow:.6g}, {structure.alpha:.6g} +- {structure.beta:.6g}i "
        f"({structure.spectral_type.value})"
    )
    return structure
