import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from slow_passage.errors import DegenerateSpectrumError, EventBudgetError
from slow_passage.models import DkModel, ThreeRegionModel, TwoRegionModel
from slow_passage.pwl.constants import Termination
from slow_passage.pwl.flow import AffineFlow, fast_subsystem, integrate, local_flow, region_flow
from slow_passage.pwl.manifolds import attracting_manifold
from slow_passage.pwl.system import RegionSpec


def rk_reference(system, p0, t_end):
    solution = solve_ivp(
        lambda _, u: system.field(u),
        (0.0, t_end),
        np.asarray(p0, dtype=float),
        method="DOP853",
        rtol=1e-12,
        atol=1e-14,
    )
    return solution.y[:, -1]


@pytest.fixture
def three_region():
    return ThreeRegionModel(rho=-0.085, mu=0.15, m=1.318, k=0.1895, epsilon=0.05).build()


@pytest.fixture
def dk():
    return DkModel(I=2.0, epsilon=1e-3).build()


@pytest.mark.parametrize("region_id", ["L", "M", "R"])
def test_closed_form_matches_runge_kutta_in_one_region(dk, region_id):
    region = dk.region_by_id(region_id)
    p0 = np.array([0.3, -0.2, 0.5])
    t_end = 3.0
    solution = solve_ivp(
        lambda _, u: region.field(u),
        (0.0, t_end),
        p0,
        method="DOP853",
        rtol=1e-12,
        atol=1e-14,
    )
    exact = local_flow(region, p0, t_end)
    assert np.linalg.norm(exact - solution.y[:, -1]) / np.linalg.norm(exact) < 1e-8


def test_integrate_matches_runge_kutta_across_switchings(three_region):
    p0 = [-0.6, 0.4, -0.3]
    trajectory = integrate(three_region, p0, 20.0)
    assert trajectory.events > 0
    reference = rk_reference(three_region, p0, 20.0)
    assert np.linalg.norm(trajectory.final_state - reference) / np.linalg.norm(reference) < 1e-7


def test_semigroup_property(dk):
    flow = region_flow(dk.region_by_id("M"))
    p = np.array([0.1, 0.2, 2.0])
    assert flow.evaluate(flow.evaluate(p, 1.3), 2.1) == pytest.approx(flow.evaluate(p, 3.4), abs=1e-12)


def test_evaluate_is_vectorized(dk):
    flow = region_flow(dk.region_by_id("L"))
    p = np.array([-1.5, -1.0, 2.5])
    times = np.array([0.0, 0.5, 1.0])
    states = flow.evaluate(p, times)
    assert states.shape == (3, 3)
    assert states[0] == pytest.approx(p)
    assert states[2] == pytest.approx(flow.evaluate(p, 1.0))


def test_affine_clock_is_exact():
    system = TwoRegionModel(m=1.0, k=0.1, epsilon=0.25).build()
    trajectory = integrate(system, [-0.5, 0.3, -2.0], 30.0, dt_sample=0.5)
    assert trajectory.samples is not None
    times, z = trajectory.samples[:, 0], trajectory.samples[:, 3]
    assert z == pytest.approx(-2.0 + 0.25 * times, abs=1e-13)


def test_switching_states_lie_on_boundaries(three_region):
    trajectory = integrate(three_region, [-0.6, 0.4, -0.3], 20.0)
    for arc in trajectory.arcs[:-1]:
        assert arc.state_exit[0] in three_region.boundaries
    assert [arc.t_entry for arc in trajectory.arcs[1:]] == [arc.t_exit for arc in trajectory.arcs[:-1]]
    assert trajectory.terminated_by is Termination.HORIZON
    assert trajectory.t_end == pytest.approx(20.0)


def test_equilibrium_is_stationary(dk):
    equilibrium = DkModel(I=2.0, epsilon=1e-3).equilibrium
    trajectory = integrate(dk, equilibrium, 50.0)
    assert trajectory.events == 0
    assert trajectory.final_state == pytest.approx(equilibrium, abs=1e-12)


def test_attracting_manifold_orbit_reaches_boundary():
    system = TwoRegionModel(m=1.0, k=0.1, epsilon=0.25).build()
    ray = attracting_manifold(system)
    start = ray.point(-2.0)
    trajectory = integrate(system, start, 100.0, monitor=lambda states: -0.5 - states[:, 0])
    # Along the ray x grows like eps t
    assert trajectory.terminated_by is Termination.MONITOR
    assert trajectory.t_end == pytest.approx((-0.5 - start[0]) / 0.25, abs=1e-9)
    assert trajectory.final_state == pytest.approx(ray.point(ray.tau_at_x(-0.5)), abs=1e-10)


def test_monitor_stops_integration():
    system = TwoRegionModel(m=1.0, k=0.1, epsilon=0.25).build()
    trajectory = integrate(system, [-0.5, 0.3, -2.0], 100.0, monitor=lambda states: 1.0 - states[:, 2])
    assert trajectory.terminated_by is Termination.MONITOR
    assert trajectory.t_end == pytest.approx(12.0, abs=1e-10)
    assert trajectory.final_state[2] == pytest.approx(1.0, abs=1e-10)


def test_event_budget(three_region):
    with pytest.raises(EventBudgetError, match="event budget exceeded"):
        integrate(three_region, [-0.6, 0.4, -0.3], 20.0, max_events=0)


def test_invalid_horizon(dk):
    with pytest.raises(ValueError, match="t_max"):
        integrate(dk, [0.0, 0.0, 0.0], -1.0)
    with pytest.raises(ValueError, match="t_max"):
        integrate(dk, [0.0, 0.0, 0.0], math.inf)


def test_slope_at_stability_boundary():
    region = RegionSpec(id="R", matrix=((2.0, -1.0, 0.0), (1.0, 0.0, -1.0), (0.0, 0.0, 0.0)), offset=(0.0, 0.0, 0.1))
    with pytest.raises(DegenerateSpectrumError, match="slope at stability boundary"):
        AffineFlow.from_region(region)


def test_saddle_center_closed_form():
    eps = 0.05
    region = RegionSpec(id="C", matrix=((-eps, -1.0, 0.0), (1.0, 0.0, -1.0), (-eps, 0.0, 0.0)), offset=(0.0, 0.0, 0.0))
    P = np.array([[1.0, 1.0, 0.0], [0.0, -eps, -1.0], [1.0, 0.0, eps]])
    p = np.array([0.2, -0.1, 0.3])
    for t in (0.7, 2.5, 11.0):
        rotation = np.array(
            [[math.exp(-eps * t), 0.0, 0.0], [0.0, math.cos(t), math.sin(t)], [0.0, -math.sin(t), math.cos(t)]]
        )
        expected = P @ rotation @ np.linalg.solve(P, p)
        assert local_flow(region, p, t) == pytest.approx(expected, abs=1e-12)


def test_sampling(three_region):
    trajectory = integrate(three_region, [-0.6, 0.4, -0.3], 5.0, dt_sample=0.25)
    assert trajectory.samples is not None
    assert trajectory.samples.shape == (21, 4)
    assert len(trajectory.sample_regions) == 21
    assert np.all(np.diff(trajectory.samples[:, 0]) > 0)
    assert trajectory.sample_regions[0] == "L"


def test_fast_subsystem(three_region):
    layer = fast_subsystem(three_region, 0.05)
    assert layer.region_id == "C"
    assert layer.equilibrium[0] == pytest.approx(0.05)
    assert layer.stability == "stable focus"
    assert fast_subsystem(three_region, 0.15).non_hyperbolic
    assert fast_subsystem(three_region, 1.0).stability == "unstable focus"
    assert layer.field(*layer.equilibrium) == pytest.approx((0.0, 0.0), abs=1e-15)
