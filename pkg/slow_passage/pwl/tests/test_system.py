import math

import numpy as np
import pytest
from pydantic import ValidationError

from slow_passage.models import TwoRegionModel
from slow_passage.pwl.constants import ModelKind
from slow_passage.pwl.system import PwlSystem, RegionSpec, as_state


@pytest.fixture
def two_region():
    return TwoRegionModel(m=1.0, k=0.1, epsilon=0.25).build()


def lateral(region_id, slope, lower, upper, intercept=0.0):
    return RegionSpec(
        id=region_id,
        matrix=((slope, -1.0, 0.0), (1.0, 0.0, -1.0), (0.0, 0.0, 0.0)),
        offset=(intercept, 0.0, 0.1),
        lower_x=lower,
        upper_x=upper,
    )


def test_as_state():
    assert as_state([1, 2, 3]).tolist() == [1.0, 2.0, 3.0]
    with pytest.raises(ValueError, match="three coordinates"):
        as_state([1.0, 2.0])
    with pytest.raises(ValueError, match="finite"):
        as_state([1.0, math.nan, 0.0])


def test_region_bounds_must_be_ordered():
    with pytest.raises(ValidationError, match="must be below"):
        lateral("L", -1.0, 0.0, 0.0)


def test_discontinuous_field_is_rejected():
    with pytest.raises(ValidationError, match="discontinuous"):
        PwlSystem(
            regions=(lateral("L", -1.0, -math.inf, 0.0), lateral("R", 0.1, 0.0, math.inf, intercept=0.5)),
            epsilon=0.1,
            kind=ModelKind.TWO_REGION,
            attracting_region="L",
            repelling_region="R",
        )


def test_regions_must_share_boundaries():
    with pytest.raises(ValidationError, match="share a boundary"):
        PwlSystem(
            regions=(lateral("L", -1.0, -math.inf, 0.0), lateral("C", 0.5, 0.5, 1.0), lateral("R", 0.1, 1.0, math.inf)),
            epsilon=0.1,
            kind=ModelKind.THREE_REGION,
            attracting_region="L",
            repelling_region="R",
        )


def test_outer_regions_must_be_unbounded():
    with pytest.raises(ValidationError, match="infinity"):
        PwlSystem(
            regions=(lateral("L", -1.0, -10.0, 0.0), lateral("R", 0.1, 0.0, math.inf)),
            epsilon=0.1,
            kind=ModelKind.TWO_REGION,
            attracting_region="L",
            repelling_region="R",
        )


def test_unknown_region_id(two_region):
    with pytest.raises(ValidationError, match="Unknown region id"):
        PwlSystem(**{**two_region.model_dump(), "repelling_region": "X"})
    with pytest.raises(KeyError):
        two_region.region_by_id("X")


def test_region_index_and_locate(two_region):
    assert two_region.boundaries == (0.0,)
    assert two_region.region_index(-1.0) == 0
    assert two_region.region_index(0.0) == 1
    assert two_region.locate([-0.5, 0.0, 0.0]) == 0
    # On the plane: x' = -y decides
    assert two_region.locate([0.0, -1.0, 0.0]) == 1
    assert two_region.locate([0.0, 1.0, 0.0]) == 0
    # x' = 0 on the plane: x'' = -(x - z) = z decides
    assert two_region.locate([0.0, 0.0, 1.0]) == 1
    assert two_region.locate([0.0, 0.0, -1.0]) == 0


def test_field_is_vectorized(two_region):
    states = np.array([[-1.0, 0.5, 0.2], [2.0, -1.0, 0.3]])
    values = two_region.field(states)
    assert values.shape == (2, 3)
    assert values[0] == pytest.approx([1.0 - 0.5, -1.0 - 0.2, 0.25])
    assert values[1] == pytest.approx([0.2 + 1.0, 2.0 - 0.3, 0.25])
    assert two_region.field(states[0]) == pytest.approx(values[0])


def test_system_round_trips_through_json(two_region):
    restored = PwlSystem.model_validate_json(two_region.model_dump_json())
    assert restored == two_region
