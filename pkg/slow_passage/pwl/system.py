import logging
import math
from typing import Any

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, model_validator

from slow_passage.pwl.constants import ModelKind
from slow_passage.utils.constants import BOUNDARY_TOL, CONTINUITY_TOL

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
Vector3 = tuple[float, float, float]
Matrix3 = tuple[Vector3, Vector3, Vector3]


def as_state(p: Any) -> FloatArray:
    """Validate and convert a point to a float array ``(x, y, z)``."""
    state = np.asarray(p, dtype=float).reshape(-1)
    if state.shape != (3,):
        raise ValueError(f"State must have three coordinates, got {state.shape[0]}")
    if not np.all(np.isfinite(state)):
        raise ValueError(f"State must be finite, got {state.tolist()}")
    return state


class RegionSpec(BaseModel):
    """One affine subsystem ``u' = A u + b`` on the slab ``lower_x <= x <= upper_x``."""

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    id: str
    matrix: Matrix3
    offset: Vector3
    lower_x: float = -math.inf
    upper_x: float = math.inf

    @model_validator(mode="after")
    def _check(self) -> "RegionSpec":
        if not self.lower_x < self.upper_x:
            raise ValueError(f"Region {self.id}: lower_x {self.lower_x} must be below upper_x {self.upper_x}")
        if not all(math.isfinite(v) for row in self.matrix for v in row):
            raise ValueError(f"Region {self.id}: matrix entries must be finite")
        if not all(math.isfinite(v) for v in self.offset):
            raise ValueError(f"Region {self.id}: offset entries must be finite")
        return self

    @property
    def A(self) -> FloatArray:
        return np.array(self.matrix, dtype=float)

    @property
    def b(self) -> FloatArray:
        return np.array(self.offset, dtype=float)

    @property
    def slope(self) -> float:
        """Slope of the x-nullcline function in this region."""
        return float(self.matrix[0][0])

    def field(self, states: npt.ArrayLike) -> FloatArray:
        points = np.asarray(states, dtype=float)
        return points @ self.A.T + self.b

    def contains(self, x: float, tol: float = BOUNDARY_TOL) -> bool:
        return self.lower_x - tol <= x <= self.upper_x + tol


class PwlSystem(BaseModel):
    """Continuous piecewise-linear vector field made of x-slabs ordered left to right."""

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    regions: tuple[RegionSpec, ...]
    epsilon: float = Field(ge=0.0)
    kind: ModelKind
    attracting_region: str
    repelling_region: str
    params: dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self) -> "PwlSystem":
        if not self.regions:
            raise ValueError("A PWL system needs at least one region")
        if self.regions[0].lower_x != -math.inf or self.regions[-1].upper_x != math.inf:
            raise ValueError("Outer regions must extend to infinity")
        ids = [region.id for region in self.regions]
        if len(set(ids)) != len(ids):
            raise ValueError(f"Region ids must be unique, got {ids}")
        for name in (self.attracting_region, self.repelling_region):
            if name not in ids:
                raise ValueError(f"Unknown region id {name!r}, expected one of {ids}")
        for left, right in zip(self.regions, self.regions[1:], strict=False):
            if left.upper_x != right.lower_x:
                raise ValueError(
                    f"Regions {left.id} and {right.id} do not share a boundary: "
                    f"{left.upper_x} != {right.lower_x}"
                )
            gap = continuity_gap(left, right)
            if gap > continuity_tolerance(left, right):
                raise ValueError(
                    f"Vector field is discontinuous across x = {left.upper_x} "
                    f"between {left.id} and {right.id} (gap {gap:.3e})"
                )
        return self

    @property
    def boundaries(self) -> tuple[float, ...]:
        return tuple(region.upper_x for region in self.regions[:-1])

    def region_by_id(self, region_id: str) -> RegionSpec:
        return self.regions[self.index_of(region_id)]

    def index_of(self, region_id: str) -> int:
        for i, region in enumerate(self.regions):
            if region.id == region_id:
                return i
        raise KeyError(f"No region {region_id!r} in {self.kind.value} system")

    def region_index(self, x: float) -> int:
        """Index of the slab containing ``x``; boundary points go to the right."""
        return int(np.searchsorted(np.array(self.boundaries), x, side="right"))

    def locate(self, p: npt.ArrayLike, tol: float = BOUNDARY_TOL) -> int:
        """Region an orbit through ``p`` moves into.

        Off the switching planes this is the slab containing ``p``. On a plane the
        sign of the x-velocity decides, then the sign of the x-acceleration.
        """
        state = as_state(p)
        index = self.region_index(state[0])
        for i, boundary in enumerate(self.boundaries):
            if abs(state[0] - boundary) > tol * max(1.0, abs(boundary)):
                continue
            region = self.regions[i]
            velocity = region.field(state)
            direction = velocity[0]
            if abs(direction) <= tol:
                direction = float((region.A @ velocity)[0])
            return i + 1 if direction >= 0 else i
        return index

    def field(self, states: npt.ArrayLike) -> FloatArray:
        """Vector field evaluated at one state or an ``(n, 3)`` stack."""
        points = np.atleast_2d(np.asarray(states, dtype=float))
        indices = np.searchsorted(np.array(self.boundaries), points[:, 0], side="right")
        values = np.empty_like(points)
        for i, region in enumerate(self.regions):
            mask = indices == i
            if np.any(mask):
                values[mask] = region.field(points[mask])
        return values[0] if np.ndim(states) == 1 else values


def continuity_gap(left: RegionSpec, right: RegionSpec) -> float:
    """Largest field mismatch at three non-collinear points of the shared plane."""
    boundary = left.upper_x
    samples = np.array([[boundary, 0.0, 0.0], [boundary, 1.0, 0.0], [boundary, 0.0, 1.0]])
    return float(np.max(np.abs(left.field(samples) - right.field(samples))))


def continuity_tolerance(left: RegionSpec, right: RegionSpec) -> float:
    scale = max(
        1.0,
        abs(left.upper_x),
        float(np.max(np.abs(left.A))),
        float(np.max(np.abs(right.A))),
        float(np.max(np.abs(left.b))),
        float(np.max(np.abs(right.b))),
    )
    return CONTINUITY_TOL * scale * 4
