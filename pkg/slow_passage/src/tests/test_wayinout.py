import math

import numpy as np
import pytest

from slow_passage.errors import AdmissibilityError, OutOfRegionError
from slow_passage.models import BufferModel, DkModel, ModifiedDkModel, ThreeRegionModel, TwoRegionModel
from slow_passage.pwl.flow import integrate
from slow_passage.pwl.manifolds import attracting_manifold, repelling_manifold
from slow_passage.src.connection import modified_dk_shoot, solve_buffer_connection
from slow_passage.src.wayinout import (
    ReferenceLevels,
    WayInWayOutCurve,
    WayInWayOutPoint,
    asymptote_fit,
    buffer_levels,
    burst_alternations,
    delay_vs_epsilon,
    entry_seed,
    maximal_delay,
    precision_diagnosis,
    reference_levels,
    seeded_offset,
    time_budget,
    two_region_bounds,
    way_in_way_out,
)

RHO, MU, M, K, EPS = -0.085, 0.15, 1.31804, 0.18944, 0.05


@pytest.fixture
def two_region():
    return TwoRegionModel(m=1.0, k=0.1, epsilon=0.25).build()


@pytest.fixture(scope="module")
def three_region():
    return ThreeRegionModel.from_boundaries(RHO, MU, EPS).build()


def synthetic_curve(z_out):
    points = [
        WayInWayOutPoint(z_in=-float(u), z_out=float(v), t_cross=0.0, t_exit=1.0, residual=0.0)
        for u, v in zip(range(len(z_out)), z_out, strict=True)
    ][::-1]
    return WayInWayOutCurve(
        points=points,
        delta=1.0,
        model="two-region",
        epsilon=0.1,
        params={},
        references=ReferenceLevels(z_in_ref=0.0, z_out_ref=0.0, drift=1),
    )


def test_reference_levels(two_region, three_region):
    refs = reference_levels(two_region)
    assert refs.z_in_ref == pytest.approx(float(attracting_manifold(two_region).base[2]))
    assert refs.z_out_ref == 0.0
    assert refs.drift == 1

    refs = reference_levels(three_region)
    assert refs.z_out_ref == pytest.approx(float(repelling_manifold(three_region).base[2]))

    dk = DkModel(I=-1.5, epsilon=1e-3)
    refs = reference_levels(dk.build())
    assert refs.z_in_ref == refs.z_out_ref == pytest.approx(dk.hopf_level)
    assert refs.drift == -1


def test_time_budget_needs_positive_epsilon():
    with pytest.raises(AdmissibilityError, match="eps > 0"):
        time_budget(TwoRegionModel(m=1.0, k=0.1, epsilon=0.0).build(), 1.0)


def test_entry_seed_is_at_distance_delta(two_region):
    ray = attracting_manifold(two_region)
    seed = entry_seed(two_region, -2.0, 0.5)
    distance, tau, z_hat = ray.distances(seed)
    assert distance[0] == pytest.approx(0.5, rel=1e-9)
    assert z_hat[0] == pytest.approx(-2.0)
    assert ray.contains_tau(float(tau[0]))


def test_entry_seed_above_the_boundary(two_region):
    with pytest.raises(OutOfRegionError, match="out of region"):
        entry_seed(two_region, 5.0, 0.5)


@pytest.mark.parametrize("epsilon", [0.25, 0.1, 0.05, 0.01])
def test_two_region_delay_within_bounds(epsilon):
    estimate = maximal_delay(TwoRegionModel(m=1.0, k=0.1, epsilon=epsilon).build())
    assert estimate.lower is not None
    assert estimate.upper is not None
    assert estimate.lower < estimate.z_d < estimate.upper


def test_two_region_bounds():
    lower, upper = two_region_bounds(1.0, 0.1, 0.25)
    assert lower == pytest.approx(4.965, abs=1e-2)
    assert upper == pytest.approx(13.63, abs=1e-2)


def test_delay_shrinks_with_epsilon():
    delays = [maximal_delay(TwoRegionModel(m=1.0, k=0.1, epsilon=eps).build()).z_d for eps in (0.25, 0.05, 0.01)]
    assert delays == sorted(delays, reverse=True)


def test_way_in_way_out_pairs(two_region):
    z_a = reference_levels(two_region).z_in_ref
    curve = way_in_way_out(two_region, 1.0, [z_a - 1.0, z_a - 4.0, z_a + 1.0])
    assert curve.dropped == [z_a + 1.0]
    assert [point.z_in for point in curve.points] == [z_a - 4.0, z_a - 1.0]
    for point in curve.points:
        assert point.residual < 1e-8
        assert point.t_exit > point.t_cross
    # Deeper entry, later exit
    assert curve.points[0].z_out > curve.points[1].z_out > 0.0


def test_way_in_way_out_rejects_bad_input(two_region):
    with pytest.raises(AdmissibilityError, match="z grid is empty"):
        way_in_way_out(two_region, 1.0, [])
    with pytest.raises(AdmissibilityError, match="delta"):
        way_in_way_out(two_region, 0.0, [-1.0])


def test_parallel_map_keeps_order(two_region):
    grid = np.linspace(-3.0, -0.5, 6)
    serial = way_in_way_out(two_region, 1.0, grid, threads=1)
    threaded = way_in_way_out(two_region, 1.0, grid, threads=4)
    assert serial.pairs == threaded.pairs


def test_asymptote_of_three_region_curve(three_region):
    z_a = reference_levels(three_region).z_in_ref
    grid = z_a - np.linspace(0.75, 3.0, 91)
    curve = way_in_way_out(three_region, 1.0, grid, work_precision=1e-13)
    assert not curve.dropped
    assert curve.entry_frequency == pytest.approx(math.sqrt(4.0 - M * M) / 2.0, rel=1e-6)
    assert curve.exit_growth == pytest.approx(K / 2.0, rel=1e-4)
    fit = asymptote_fit(curve)
    assert fit.expected_slope == pytest.approx(M / K, rel=1e-3)
    assert fit.slope == pytest.approx(fit.expected_slope, rel=0.05)
    assert fit.expected_intercept == pytest.approx(0.2997, abs=1e-3)
    assert fit.offset == pytest.approx(seeded_offset(three_region), rel=0.1)
    assert fit.plateau is not None
    assert fit.plateau_points >= 3


def test_seeded_offset(three_region):
    # Seeding along +y costs (eps/k) ln((1 + w)/(2 w^2)) on average at entry, plus a small exit term
    omega = math.sqrt(4.0 - M * M) / 2.0
    intercept = -(2.0 * EPS / K) * math.log(abs(RHO / MU))
    entry_shift = (EPS / K) * math.log((1.0 + omega) / (2.0 * omega**2))
    offset = seeded_offset(three_region)
    assert offset < intercept
    assert offset == pytest.approx(intercept - entry_shift, abs=0.02)


def test_seeded_offset_needs_three_regions(two_region):
    with pytest.raises(AdmissibilityError, match="three-region"):
        seeded_offset(two_region)


def test_asymptote_of_synthetic_curve():
    fit = asymptote_fit(synthetic_curve([min(2.0 * u + 1.0, 25.0) for u in range(20)]))
    assert fit.slope == pytest.approx(2.0)
    assert fit.intercept == pytest.approx(1.0)
    assert fit.plateau == pytest.approx(25.0)
    assert fit.plateau_points == 8
    assert fit.linear_points == 12


def test_asymptote_of_constant_curve():
    fit = asymptote_fit(synthetic_curve([3.0] * 12))
    assert fit.slope == 0.0
    assert fit.plateau == 3.0


def test_asymptote_needs_ten_pairs():
    with pytest.raises(AdmissibilityError, match="at least 10 pairs"):
        asymptote_fit(synthetic_curve([1.0, 2.0, 3.0]))


def test_unsorted_curve_is_rejected():
    curve = synthetic_curve([1.0, 2.0])
    with pytest.raises(ValueError, match="sorted"):
        WayInWayOutCurve(**{**curve.model_dump(), "points": [p.model_dump() for p in curve.points[::-1]]})


def test_delay_sweep_fits_log_term():
    k = 0.1
    sweep = delay_vs_epsilon(TwoRegionModel(m=1.0, k=k, epsilon=0.1), np.logspace(-6, -1, 11), threads=1)
    assert len(sweep.rows) == 11
    for row in sweep.rows:
        assert row.lower < row.z_d < row.upper
    assert sweep.u2 == pytest.approx(-2.0 / k, rel=0.1)
    assert sweep.relative_residual < 0.1


def test_delay_sweep_needs_three_values():
    with pytest.raises(AdmissibilityError, match="at least 3"):
        delay_vs_epsilon(TwoRegionModel(m=1.0, k=0.1, epsilon=0.1), [0.1, 0.01])


def test_dk_delay_is_positive():
    estimate = maximal_delay(DkModel(I=-1.5, epsilon=1e-3).build())
    assert estimate.z_d > 0.0
    assert estimate.lower is None


def test_dk_delay_shrinks_with_epsilon():
    delays = {eps: maximal_delay(DkModel(I=2.0, epsilon=eps).build()).z_d for eps in (1e-3, 1e-5)}
    assert 0.005 <= delays[1e-5] / delays[1e-3] <= 0.05


def test_precision_diagnosis(three_region):
    rows = precision_diagnosis(three_region, [1e-12, 1e-9])
    for row in rows:
        assert row.theta_min is not None
        assert row.theta_max is not None
        assert row.theta_min < row.theta_max
        assert row.theta_min < row.precision < row.theta_max
    # Less noise, longer stay near the repelling manifold
    assert rows[0].plateau > rows[1].plateau
    assert rows[0].exit_time > rows[1].exit_time


# Working precision, then the amplitude interval reported for it with the same plateau procedure
REFERENCE_BRACKETS = [
    (1e-12, 2.78e-12, 1.57e-11),
    (1e-9, 1.43e-10, 8.09e-10),
    (1e-6, 1.24e-6, 7.03e-6),
]


@pytest.mark.parametrize("precision, low, high", REFERENCE_BRACKETS)
def test_precision_brackets_match_reference(three_region, precision, low, high):
    (row,) = precision_diagnosis(three_region, [precision])
    assert row.theta_max / row.theta_min == pytest.approx(math.sqrt(32.0))
    # The exact flow carries the perturbation unchanged, so theta tracks the precision up to the exit phase
    assert 0.5 * precision < row.theta_min < precision
    assert row.theta_min < high
    assert row.theta_max > low


def test_precision_bracket_at_coarse_tolerance(three_region):
    precision, low, high = REFERENCE_BRACKETS[-1]
    (row,) = precision_diagnosis(three_region, [precision])
    assert low / 3.0 < row.theta_min < 3.0 * low
    assert high / 3.0 < row.theta_max < 3.0 * high


def test_precision_diagnosis_rejects_dk():
    with pytest.raises(AdmissibilityError, match="two- or three-region"):
        precision_diagnosis(DkModel(I=-1.5, epsilon=1e-3).build(), [1e-12])


def test_buffer_levels():
    connection = solve_buffer_connection(0.2, 0.05)
    buffer = BufferModel(a=0.2, m=connection.m, k=connection.k, epsilon=0.05).build()
    levels = buffer_levels(buffer)
    assert levels.a_minus_mu == pytest.approx(0.2 - connection.mu)
    assert levels.attracting_exit < levels.repelling_entry
    with pytest.raises(AdmissibilityError, match="buffer system"):
        buffer_levels(TwoRegionModel(m=1.0, k=0.1, epsilon=0.1).build())


def test_buffer_way_in_way_out_stops_at_the_buffer_point():
    connection = solve_buffer_connection(0.2, 0.05)
    buffer = BufferModel(a=0.2, m=connection.m, k=connection.k, epsilon=0.05).build()
    z_a = reference_levels(buffer).z_in_ref
    curve = way_in_way_out(buffer, 1.0, z_a - np.linspace(0.5, 4.0, 15))
    assert len(curve.points) >= 10
    _, z_out = curve.relative()
    a_minus_mu = buffer_levels(buffer).a_minus_mu
    assert z_out.max() <= a_minus_mu + 1e-9
    assert z_out.max() >= 0.95 * a_minus_mu


def test_stiffness_fixed_dk_exits_at_the_equilibrium():
    shot = modified_dk_shoot(1e-3, None, -1.4, guess=(0.6165, -1.0018), a=0.8, b=0.5, eta1=-10.0)
    model = ModifiedDkModel(s=shot.s, rho=shot.rho, I=-1.4, epsilon=1e-3, eta1=-10.0)
    system = model.build()
    z_a = float(attracting_manifold(system).base[2])
    curve = way_in_way_out(system, 1e-2, z_a + np.linspace(0.02, 0.2, 10))
    assert not curve.dropped
    _, z_out = curve.relative()
    # The equilibrium on the repelling manifold bounds the delay
    buffer = model.hopf_level - model.equilibrium[2]
    assert buffer == pytest.approx(0.0944, abs=1e-4)
    assert z_out.max() <= buffer + 1e-3
    assert z_out.min() == pytest.approx(buffer, rel=0.05)


def test_dk_bursts():
    model = DkModel(I=-1.5, epsilon=1e-3)
    start = np.array(model.equilibrium) + np.array([0.01, 0.0, 0.0])
    trajectory = integrate(model.build(), start, 3.0 / model.epsilon)
    assert burst_alternations(trajectory) >= 2
    assert math.isfinite(trajectory.t_end)
