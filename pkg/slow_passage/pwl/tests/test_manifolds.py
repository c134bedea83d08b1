import math

import numpy as np
import pytest

from slow_passage.errors import AdmissibilityError, OutOfRegionError
from slow_passage.models import DkModel, ThreeRegionModel, TwoRegionModel
from slow_passage.pwl.constants import Stability
from slow_passage.pwl.flow import region_flow
from slow_passage.pwl.manifolds import (
    attracting_manifold,
    canonical_slow_manifolds,
    distance_along_plane,
    envelope_factor,
    focus_amplitude,
    region_manifold,
    repelling_manifold,
    theta_amplitude,
    theta_bracket,
)

RHO, MU, M, K, EPS = -0.085, 0.15, 1.318, 0.1895, 0.05


@pytest.fixture
def three_region():
    return ThreeRegionModel(rho=RHO, mu=MU, m=M, k=K, epsilon=EPS).build()


@pytest.fixture
def two_region():
    return TwoRegionModel(m=1.0, k=0.1, epsilon=0.25).build()


def all_systems():
    return [
        TwoRegionModel(m=1.0, k=0.1, epsilon=0.25).build(),
        ThreeRegionModel(rho=RHO, mu=MU, m=M, k=K, epsilon=EPS).build(),
        DkModel(I=2.0, epsilon=1e-3).build(),
        DkModel(I=-1.5, epsilon=1e-2).build(),
    ]


@pytest.mark.parametrize("system", all_systems())
def test_rays_are_invariant(system):
    for region in system.regions:
        ray = region_manifold(region)
        flow = region_flow(region)
        for tau in (-0.3, 0.0, 0.4):
            for t in (0.5, 3.0, 10.0):
                _, offsets = ray.decompose(flow.evaluate(ray.point(tau), t))
                assert np.linalg.norm(offsets) < 1e-10


def test_boundary_points(three_region):
    p_a = attracting_manifold(three_region).base
    p_r = repelling_manifold(three_region).base
    assert p_a == pytest.approx([RHO, -M * RHO - EPS, RHO + M * EPS], abs=1e-14)
    assert p_r == pytest.approx([MU, K * MU - EPS, MU - K * EPS], abs=1e-14)


def test_stability_labels(three_region):
    rays = canonical_slow_manifolds(three_region)
    assert [ray.region_id for ray in rays] == ["L", "C", "R"]
    assert rays[0].stability is Stability.ATTRACTING
    assert rays[2].stability is Stability.REPELLING
    # l < 0 here, so the central focus decays
    assert rays[1].stability is Stability.ATTRACTING


def test_ray_parameter_ranges(two_region):
    ray = attracting_manifold(two_region)
    assert ray.param_range[0] == -math.inf
    assert ray.param_range[1] == pytest.approx(0.0)
    assert ray.contains_tau(-5.0)
    assert not ray.contains_tau(0.5)
    assert ray.point(ray.tau_at_z(-1.0))[2] == pytest.approx(-1.0)


def test_dk_slow_eigenvectors_undefined():
    system = DkModel(I=1.0, epsilon=0.01, eta=0.00625).build()
    with pytest.raises(AdmissibilityError, match="slow eigenvectors"):
        canonical_slow_manifolds(system)


def test_distance_along_plane(two_region):
    ray = repelling_manifold(two_region)
    on_ray = ray.point(0.5)
    assert distance_along_plane(two_region, ray, on_ray, 3.0).distance == pytest.approx(0.0, abs=1e-12)

    offset = on_ray + 0.2 * ray.in_plane_direction()
    coords = distance_along_plane(two_region, ray, offset, 0.0)
    assert coords.distance == pytest.approx(0.2)
    assert coords.z_at == pytest.approx(on_ray[2])
    assert coords.tau == pytest.approx(0.5)


def test_distance_backwards_in_time(two_region):
    ray = attracting_manifold(two_region)
    start = ray.point(-1.0) + 0.1 * ray.in_plane_direction()
    forward = distance_along_plane(two_region, ray, start, 2.0).distance
    backward = distance_along_plane(two_region, ray, start, -2.0).distance
    assert forward < 0.1 < backward


def test_distance_out_of_region(two_region):
    ray = attracting_manifold(two_region)
    with pytest.raises(OutOfRegionError, match="out of region"):
        distance_along_plane(two_region, ray, ray.point(-0.01), 10.0)


def test_distance_matches_amplitude_times_envelope(two_region):
    ray = repelling_manifold(two_region)
    flow = region_flow(two_region.region_by_id("R"))
    rng = np.random.default_rng(11)
    times = np.linspace(0.0, 30.0, 61)
    for _ in range(100):
        p = np.array([rng.uniform(0.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)])
        distances, _, _ = ray.distances(flow.evaluate(p, times))
        amplitude = focus_amplitude(p, 0.1, 0.25)
        envelope = envelope_factor(p, 0.1, 0.25, times)
        assert distances == pytest.approx(amplitude * np.exp(0.05 * times) * np.sqrt(envelope), rel=1e-9, abs=1e-12)
        assert np.all(envelope > 1.0 / 16.0)
        assert np.all(envelope < 2.0)
        assert np.all(np.abs(envelope - 1.0) <= 0.05 + 1e-12)


def test_attracting_side_envelope(two_region):
    ray = attracting_manifold(two_region)
    flow = region_flow(two_region.region_by_id("L"))
    p = np.array([-0.5, 0.8, 0.1])
    times = np.linspace(0.0, 5.0, 11)
    distances, _, _ = ray.distances(flow.evaluate(p, times))
    expected = focus_amplitude(p, -1.0, 0.25) * np.exp(-0.5 * times) * np.sqrt(envelope_factor(p, -1.0, 0.25, times))
    assert distances == pytest.approx(expected, rel=1e-9)


def test_theta_amplitude_on_switching_plane():
    p = [0.0, 0.3, -0.4]
    assert theta_amplitude(p, 0.1, 0.25) == pytest.approx(focus_amplitude(p, 0.1, 0.25))
    with pytest.raises(OutOfRegionError, match="out of region"):
        theta_amplitude([0.1, 0.3, -0.4], 0.1, 0.25)


def test_theta_bracket():
    lower, upper = theta_bracket(100.0, K)
    assert lower < upper
    assert upper / lower == pytest.approx(math.sqrt(32.0))
    assert lower == pytest.approx(math.sqrt(0.5 * math.exp(-K * 100.0)))
