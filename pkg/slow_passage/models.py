import logging
import math
from typing import Annotated, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, computed_field, model_validator

from slow_passage.errors import AdmissibilityError
from slow_passage.pwl.constants import ModelKind
from slow_passage.pwl.eigen import eigenstructure
from slow_passage.pwl.system import PwlSystem, RegionSpec
from slow_passage.utils.constants import ADMISSIBILITY_MARGIN, DK_A, DK_B, DK_ETA

logger = logging.getLogger(__name__)


class SlowFastModel(BaseModel):
    """Base class of the parameter descriptors; subclasses build a PwlSystem."""

    model_config = ConfigDict(frozen=True, extra="ignore")

    epsilon: float = Field(ge=0.0)

    def build(self) -> PwlSystem:
        raise NotImplementedError

    def with_epsilon(self, epsilon: float) -> "SlowFastModel":
        return self.model_validate({**self.model_dump(), "epsilon": epsilon})


def _slopes_admissible(*slopes: float) -> bool:
    return all(ADMISSIBILITY_MARGIN < s < 2.0 - ADMISSIBILITY_MARGIN for s in slopes)


def _lateral(region_id: str, slope: float, lower: float, upper: float, epsilon: float, intercept: float = 0.0) -> RegionSpec:
    # x' = slope x + intercept - y, y' = x - z, z' = eps
    return RegionSpec(
        id=region_id,
        matrix=((slope, -1.0, 0.0), (1.0, 0.0, -1.0), (0.0, 0.0, 0.0)),
        offset=(intercept, 0.0, epsilon),
        lower_x=lower,
        upper_x=upper,
    )


class TwoRegionModel(SlowFastModel):
    kind: Literal["two-region"] = "two-region"
    m: float
    k: float

    @model_validator(mode="after")
    def _check(self) -> "TwoRegionModel":
        if not _slopes_admissible(self.m, self.k):
            raise AdmissibilityError(f"slopes out of admissible range: m = {self.m}, k = {self.k}")
        return self

    def build(self) -> PwlSystem:
        return PwlSystem(
            regions=(
                _lateral("L", -self.m, -math.inf, 0.0, self.epsilon),
                _lateral("R", self.k, 0.0, math.inf, self.epsilon),
            ),
            epsilon=self.epsilon,
            kind=ModelKind.TWO_REGION,
            attracting_region="L",
            repelling_region="R",
            params={"m": self.m, "k": self.k},
        )


class ThreeRegionParams(SlowFastModel):
    """Boundaries and slopes of ``f = -m x, l x + n, k x`` on ``x < rho, rho < x < mu, x > mu``."""

    rho: float
    mu: float
    m: float
    k: float

    @computed_field  # type: ignore[prop-decorator]
    @property
    def l(self) -> float:  # noqa: E743
        return (self.m * self.rho + self.k * self.mu) / (self.mu - self.rho)

    @computed_field  # type: ignore[prop-decorator]
    @property
    def n(self) -> float:
        return -self.rho * self.mu * (self.k + self.m) / (self.mu - self.rho)

    @model_validator(mode="after")
    def _check(self) -> "ThreeRegionParams":
        if not self.rho < 0.0 < self.mu:
            raise AdmissibilityError(f"region ordering violated: need rho < 0 < mu, got {self.rho}, {self.mu}")
        if not _slopes_admissible(self.m, self.k):
            raise AdmissibilityError(f"slopes out of admissible range: m = {self.m}, k = {self.k}")
        if not -self.m < self.l < self.k:
            raise AdmissibilityError(f"slopes out of admissible range: need -m < l < k, got l = {self.l}")
        return self


class ThreeRegionModel(ThreeRegionParams):
    kind: Literal["three-region"] = "three-region"

    @classmethod
    def from_boundaries(cls, rho: float, mu: float, epsilon: float) -> "ThreeRegionModel":
        """Model whose slow manifolds connect, with slopes solved from the boundaries."""
        from slow_passage.src.connection import (
            three_region_slopes,  # Import lazily to avoid circular dependencies
        )

        m, k = three_region_slopes(rho, mu, epsilon)
        return cls(rho=rho, mu=mu, m=m, k=k, epsilon=epsilon)

    def build(self) -> PwlSystem:
        central = RegionSpec(
            id="C",
            matrix=((self.l, -1.0, 0.0), (1.0, 0.0, -1.0), (0.0, 0.0, 0.0)),
            offset=(self.n, 0.0, self.epsilon),
            lower_x=self.rho,
            upper_x=self.mu,
        )
        return PwlSystem(
            regions=(
                _lateral("L", -self.m, -math.inf, self.rho, self.epsilon),
                central,
                _lateral("R", self.k, self.mu, math.inf, self.epsilon),
            ),
            epsilon=self.epsilon,
            kind=ModelKind.THREE_REGION,
            attracting_region="L",
            repelling_region="R",
            params={"rho": self.rho, "mu": self.mu, "m": self.m, "k": self.k, "l": self.l, "n": self.n},
        )


class BufferModel(SlowFastModel):
    """Three-region system with ``z' = eps (a - x)`` and boundaries tied to the slopes."""

    kind: Literal["buffer"] = "buffer"
    epsilon: float = Field(gt=0.0)
    a: float
    m: float
    k: float

    @computed_field  # type: ignore[prop-decorator]
    @property
    def rho(self) -> float:
        return -self.k * self.epsilon - self.epsilon**2

    @computed_field  # type: ignore[prop-decorator]
    @property
    def mu(self) -> float:
        return self.m * self.epsilon - self.epsilon**2

    @property
    def l(self) -> float:  # noqa: E743
        return (self.m * self.rho + self.k * self.mu) / (self.mu - self.rho)

    @property
    def n(self) -> float:
        return -self.rho * self.mu * (self.k + self.m) / (self.mu - self.rho)

    @model_validator(mode="after")
    def _check(self) -> "BufferModel":
        if not (self.m > 0 and self.k > 0):
            raise AdmissibilityError(f"slopes out of admissible range: m = {self.m}, k = {self.k}")
        if not self.rho < self.mu:
            raise AdmissibilityError(f"region ordering violated: rho = {self.rho}, mu = {self.mu}")
        return self

    def build(self) -> PwlSystem:
        eps = self.epsilon

        def region(region_id: str, slope: float, intercept: float, lower: float, upper: float) -> RegionSpec:
            return RegionSpec(
                id=region_id,
                matrix=((slope, -1.0, 0.0), (1.0, 0.0, -1.0), (-eps, 0.0, 0.0)),
                offset=(intercept, 0.0, eps * self.a),
                lower_x=lower,
                upper_x=upper,
            )

        return PwlSystem(
            regions=(
                region("L", -self.m, 0.0, -math.inf, self.rho),
                region("C", self.l, self.n, self.rho, self.mu),
                region("R", self.k, 0.0, self.mu, math.inf),
            ),
            epsilon=eps,
            kind=ModelKind.BUFFER,
            attracting_region="L",
            repelling_region="R",
            params={"a": self.a, "m": self.m, "k": self.k, "rho": self.rho, "mu": self.mu, "l": self.l, "n": self.n},
        )


def _dk_region(region_id: str, slope: float, intercept: float, lower: float, upper: float, a: float, eta: float, b: float, eps: float, current: float) -> RegionSpec:
    # x' = f(x) - y - z + I, y' = eta (x - a y), z' = eps (x - b z)
    return RegionSpec(
        id=region_id,
        matrix=((slope, -1.0, -1.0), (eta, -eta * a, 0.0), (eps, 0.0, -eps * b)),
        offset=(intercept + current, 0.0, 0.0),
        lower_x=lower,
        upper_x=upper,
    )


class DkModel(SlowFastModel):
    """Piecewise-linear FitzHugh-Nagumo type burster with ``f(x) = -x + |x + 1| - |x - 1|``."""

    kind: Literal["dk"] = "dk"
    a: float = DK_A
    eta: float = DK_ETA
    b: float = DK_B
    I: float = 0.0  # noqa: E741

    @property
    def effective_eta(self) -> float:
        return self.eta

    @property
    def equilibrium(self) -> tuple[float, float, float]:
        return dk_equilibrium(self)

    @property
    def hopf_level(self) -> float:
        """z where the critical manifold crosses x = -1."""
        return -1.0 + 1.0 / self.a + self.I

    def _check_configuration(self) -> None:
        if not -2.25 < self.I < 2.25:
            logger.warning(f"I = {self.I} is outside the usual range (-2.25, 2.25)")
        try:
            e_x = self.equilibrium[0]
        except AdmissibilityError:
            return
        if not -1.0 < e_x < 1.0:
            logger.warning(f"Equilibrium x = {e_x:.6g} is not in the central region; lateral equilibria are real")

    def _params(self) -> dict[str, float]:
        return {"a": self.a, "eta": self.effective_eta, "b": self.b, "I": self.I, "z_hopf": self.hopf_level}

    def build(self) -> PwlSystem:
        self._check_configuration()
        shared = {"a": self.a, "eta": self.effective_eta, "b": self.b, "eps": self.epsilon, "current": self.I}
        return PwlSystem(
            regions=(
                _dk_region("L", -1.0, -2.0, -math.inf, -1.0, **shared),
                _dk_region("M", 1.0, 0.0, -1.0, 1.0, **shared),
                _dk_region("R", -1.0, 2.0, 1.0, math.inf, **shared),
            ),
            epsilon=self.epsilon,
            kind=ModelKind.DK,
            attracting_region="L",
            repelling_region="M",
            params=self._params(),
        )


class ModifiedDkModel(DkModel):
    """DK model with an extra region of slope ``s`` on ``(rho, mu)`` around ``x = -1``."""

    kind: Literal["modified-dk"] = "modified-dk"  # type: ignore[assignment]
    s: float
    rho: float
    eta1: float | None = None

    @computed_field  # type: ignore[prop-decorator]
    @property
    def mu(self) -> float:
        return (self.rho * (self.s + 1.0) + 2.0) / (self.s - 1.0)

    @property
    def effective_eta(self) -> float:
        if self.eta1 is None:
            return self.eta
        return 1.0 / self.a + self.eta1 * self.epsilon

    @property
    def intercept(self) -> float:
        # Continuity with -x - 2 at x = rho
        return -self.rho - 2.0 - self.s * self.rho

    @model_validator(mode="after")
    def _check(self) -> "ModifiedDkModel":
        if self.s == 1.0:
            raise AdmissibilityError("region ordering violated: s = 1 gives no right boundary")
        if not self.rho < -1.0 < self.mu < 1.0:
            raise AdmissibilityError(f"region ordering violated: need rho < -1 < mu < 1, got rho = {self.rho}, mu = {self.mu}")
        if self.eta1 is not None and self.eta1 >= 0:
            logger.warning(f"eta1 = {self.eta1} is not negative")
        return self

    def build(self) -> PwlSystem:
        self._check_configuration()
        shared = {"a": self.a, "eta": self.effective_eta, "b": self.b, "eps": self.epsilon, "current": self.I}
        return PwlSystem(
            regions=(
                _dk_region("L", -1.0, -2.0, -math.inf, self.rho, **shared),
                _dk_region("N", self.s, self.intercept, self.rho, self.mu, **shared),
                _dk_region("M", 1.0, 0.0, self.mu, 1.0, **shared),
                _dk_region("R", -1.0, 2.0, 1.0, math.inf, **shared),
            ),
            epsilon=self.epsilon,
            kind=ModelKind.MODIFIED_DK,
            attracting_region="L",
            repelling_region="M",
            params={**self._params(), "s": self.s, "rho": self.rho, "mu": self.mu},
        )


ModelDescriptor = Annotated[
    TwoRegionModel | ThreeRegionModel | BufferModel | DkModel | ModifiedDkModel,
    Field(discriminator="kind"),
]
descriptor_adapter: TypeAdapter[ModelDescriptor] = TypeAdapter(ModelDescriptor)


def build_system(descriptor: ModelDescriptor | dict) -> PwlSystem:
    """Build the PWL system of a model descriptor (or its JSON-like dict)."""
    model = descriptor_adapter.validate_python(descriptor) if isinstance(descriptor, dict) else descriptor
    return model.build()


def build_two_region(m: float, k: float, epsilon: float) -> PwlSystem:
    return TwoRegionModel(m=m, k=k, epsilon=epsilon).build()


def build_three_region(rho: float, mu: float, m: float, k: float, epsilon: float) -> PwlSystem:
    return ThreeRegionModel(rho=rho, mu=mu, m=m, k=k, epsilon=epsilon).build()


def build_buffer(a: float, m: float, k: float, epsilon: float) -> PwlSystem:
    return BufferModel(a=a, m=m, k=k, epsilon=epsilon).build()


def build_dk(I: float, epsilon: float, a: float = DK_A, eta: float = DK_ETA, b: float = DK_B) -> PwlSystem:  # noqa: E741
    return DkModel(I=I, epsilon=epsilon, a=a, eta=eta, b=b).build()


def build_modified_dk(
    s: float,
    rho: float,
    I: float,  # noqa: E741
    epsilon: float,
    a: float = DK_A,
    eta: float = DK_ETA,
    b: float = DK_B,
    eta1: float | None = None,
) -> PwlSystem:
    return ModifiedDkModel(s=s, rho=rho, I=I, epsilon=epsilon, a=a, eta=eta, b=b, eta1=eta1).build()


def dk_equilibrium(model: DkModel) -> tuple[float, float, float]:
    """The equilibrium ``-I / (1 - 1/a - 1/b) (1, 1/a, 1/b)`` of the central region."""
    factor = 1.0 - 1.0 / model.a - 1.0 / model.b
    if abs(factor) < 1e-14:
        raise AdmissibilityError("no isolated equilibrium", a=model.a, b=model.b)
    x = -model.I / factor
    return x, x / model.a, x / model.b


def dk_fold_points(model: DkModel) -> tuple[tuple[float, float, float], tuple[float, float, float]]:
    """Points of the critical manifold at x = -1 and x = 1 where normal hyperbolicity is lost."""
    a, current = model.a, model.I
    return (-1.0, -1.0 / a, -1.0 + 1.0 / a + current), (1.0, 1.0 / a, 1.0 - 1.0 / a + current)


class DkEigenOrders(BaseModel):
    epsilons: list[float]
    lambda_m: list[float]
    alpha_m: list[float]
    lambda_ratio_limit: float | None
    alpha_limit: float
    predicted_lambda_ratio: float
    predicted_alpha: float
    same_order: bool


def dk_eigen_orders(model: DkModel, epsilons: tuple[float, ...] = (1e-3, 1e-4, 1e-5)) -> DkEigenOrders:
    """Orders in eps of the middle-region eigenvalues, fitted on a ladder of eps values.

    ``lambda_M / eps`` and ``alpha_M`` are extrapolated to eps = 0 with a
    polynomial through the ladder and compared with their leading-order values.
    For stiffness-fixed models (``eta = 1/a + eta1 eps``) the constant term of
    ``alpha_M`` vanishes and both eigenvalues are of order eps.
    """
    lambdas: list[float] = []
    alphas: list[float] = []
    for eps in epsilons:
        system = model.with_epsilon(eps).build()
        eigen = eigenstructure(system.region_by_id("M").A)
        lambdas.append(eigen.lambda_slow)
        alphas.append(eigen.alpha)

    eps_arr = np.array(epsilons, dtype=float)
    positive = eps_arr > 0
    degree = max(0, min(2, int(positive.sum()) - 1))
    lambda_limit: float | None = None
    if positive.any():
        ratios = np.array(lambdas)[positive] / eps_arr[positive]
        lambda_limit = float(np.polyval(np.polyfit(eps_arr[positive], ratios, degree), 0.0))
    alpha_degree = max(0, min(2, len(epsilons) - 1))
    alpha_limit = float(np.polyval(np.polyfit(eps_arr, np.array(alphas), alpha_degree), 0.0))

    a, b = model.a, model.b
    eta = model.with_epsilon(0.0).effective_eta  # type: ignore[attr-defined]
    return DkEigenOrders(
        epsilons=[float(e) for e in epsilons],
        lambda_m=lambdas,
        alpha_m=alphas,
        lambda_ratio_limit=lambda_limit,
        alpha_limit=alpha_limit,
        predicted_lambda_ratio=(a * b - a - b) / (1.0 - a),
        predicted_alpha=(1.0 - a * eta) / 2.0,
        same_order=abs(alpha_limit) < 1e-5,
    )
