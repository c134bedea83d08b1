from enum import Enum


class ModelKind(str, Enum):
    TWO_REGION = "two-region"
    THREE_REGION = "three-region"
    BUFFER = "buffer"
    DK = "dk"
    MODIFIED_DK = "modified-dk"

    @property
    def has_affine_clock(self) -> bool:
        """z evolves as z0 + eps * t in these systems."""
        return self in (ModelKind.TWO_REGION, ModelKind.THREE_REGION)


class Stability(str, Enum):
    ATTRACTING = "attracting"
    REPELLING = "repelling"
    NEUTRAL = "neutral"


class SpectralType(str, Enum):
    SADDLE_FOCUS = "saddle-focus"  # lambda * alpha < 0
    NODE_FOCUS = "node-focus"  # lambda * alpha > 0
    SADDLE_CENTER = "saddle-center"  # alpha = 0
    FOCUS = "focus"  # lambda = 0, singular matrix


class Criticality(str, Enum):
    SUPERCRITICAL = "supercritical"
    SUBCRITICAL = "subcritical"
    NONE = "none"


class Termination(str, Enum):
    HORIZON = "horizon"
    MONITOR = "monitor"
    OVERFLOW = "overflow"
