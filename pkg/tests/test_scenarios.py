import math

import numpy as np
import pytest

from svodrive.errors import ConfigError, SpawnError
from svodrive.geometry import segment_intersections
from svodrive.roads import validate_network
from svodrive.scenarios import (
    ScenarioSpec,
    SvoSpec,
    build_bottleneck,
    build_merge,
    build_network,
    spawn_agents,
)
from svodrive.simcore import detect_collisions


def test_bottleneck_narrowest_at_throat():
    spec = ScenarioSpec(kind="bottleneck")
    net = build_bottleneck(spec)
    zone = net.drivable_zone
    xs = zone[:, 0]
    # zone half-width sampled at approach, throat, exit midpoints
    def width_at(x):
        ys = []
        for y in np.linspace(-10, 10, 2001):
            from svodrive.geometry import point_in_polygon

            if point_in_polygon(np.array([x, y]), zone):
                ys.append(y)
        return max(ys) - min(ys)

    mid = spec.approach_len + spec.taper_len + spec.throat_len / 2
    assert width_at(mid) < width_at(spec.approach_len / 2)
    assert width_at(mid) < width_at(xs.max() - spec.exit_len / 2)


def test_bottleneck_three_routes_share_throat():
    spec = ScenarioSpec(kind="bottleneck", approach_lanes=3, throat_lanes=1)
    net = build_bottleneck(spec)
    assert len(net.routes) == 3
    x_mid = spec.approach_len + spec.taper_len + spec.throat_len / 2
    for k in range(3):
        cache = net.route_cache(k)
        s, d = cache.project(np.array([x_mid, 0.0]))
        assert d < 1e-6  # all routes pass through the throat centerline


def test_bottleneck_invariants():
    net = build_bottleneck(ScenarioSpec(kind="bottleneck"))
    validate_network(net)  # raises on violation


def test_bottleneck_rejects_nonphysical():
    with pytest.raises(ConfigError):
        build_bottleneck(ScenarioSpec(kind="bottleneck", throat_len=0.0))
    with pytest.raises(ConfigError):
        build_bottleneck(ScenarioSpec(kind="bottleneck", throat_lanes=5, approach_lanes=3))


def test_merge_families_intersect_once():
    net = build_merge(ScenarioSpec(kind="merge"))
    ramp = net.routes[-1]
    joined_main = net.routes[0]
    assert len(segment_intersections(ramp.xy, joined_main.xy)) == 1


def test_merge_ramp_terminates_downstream():
    spec = ScenarioSpec(kind="merge")
    net = build_merge(spec)
    ramp_end = net.routes[-1].xy[-1]
    assert ramp_end[0] == pytest.approx(spec.main_len)
    main_end = net.routes[0].xy[-1]
    assert np.allclose(ramp_end, main_end)


def test_merge_angle_zero_rejected():
    with pytest.raises(ConfigError):
        build_merge(ScenarioSpec(kind="merge", merge_angle=0.0))


def test_merge_invariants():
    validate_network(build_merge(ScenarioSpec(kind="merge")))


def test_build_network_dispatch():
    assert build_network(ScenarioSpec(kind="merge")).name == "merge"
    assert build_network(ScenarioSpec(kind="bottleneck")).name == "bottleneck"
    with pytest.raises(ConfigError):
        build_network(ScenarioSpec(kind="merge").__class__(kind="roundabout"))


class TestSpawn:
    def test_deterministic(self):
        spec = ScenarioSpec(kind="merge", agent_count=(8, 20))
        net = build_merge(spec)
        a = spawn_agents(net, spec, np.random.default_rng(42))
        b = spawn_agents(net, spec, np.random.default_rng(42))
        assert len(a.vehicles) == len(b.vehicles)
        for va, vb in zip(a.vehicles, b.vehicles):
            assert np.allclose(va.position, vb.position)
            assert va.svo == vb.svo

    def test_count_range(self):
        spec = ScenarioSpec(kind="merge", agent_count=(8, 20))
        net = build_merge(spec)
        counts = set()
        for seed in range(300):
            res = spawn_agents(net, spec, np.random.default_rng(seed))
            counts.add(len(res.vehicles))
        assert min(counts) == 8
        assert max(counts) == 20

    def test_fixed_svo(self):
        spec = ScenarioSpec(kind="merge", agent_count=(10, 10), svo=SvoSpec(dist="fixed", value=0.5))
        net = build_merge(spec)
        res = spawn_agents(net, spec, np.random.default_rng(0))
        assert all(v.svo == 0.5 for v in res.vehicles)

    def test_svo_list_cycles(self):
        spec = ScenarioSpec(
            kind="merge", agent_count=(5, 5), svo=SvoSpec(dist="list", values=(0.1, 0.9))
        )
        net = build_merge(spec)
        res = spawn_agents(net, spec, np.random.default_rng(0))
        assert [v.svo for v in res.vehicles] == [0.1, 0.9, 0.1, 0.9, 0.1]

    def test_no_initial_collisions_and_on_path(self):
        spec = ScenarioSpec(kind="merge", agent_count=(20, 20))
        net = build_merge(spec)
        for seed in range(30):
            res = spawn_agents(net, spec, np.random.default_rng(seed))
            assert detect_collisions(res.vehicles) == set()
            for v, pid in zip(res.vehicles, res.path_ids):
                _, lat = net.route_cache(pid).project(v.position)
                assert lat < 1e-6

    def test_svo_in_unit_interval(self):
        spec = ScenarioSpec(kind="bottleneck", agent_count=(15, 15))
        net = build_bottleneck(spec)
        for seed in range(20):
            res = spawn_agents(net, spec, np.random.default_rng(seed))
            assert all(0.0 <= v.svo <= 1.0 for v in res.vehicles)

    def test_impossible_spawn_raises(self):
        spec = ScenarioSpec(kind="merge", agent_count=(64, 64), min_gap=20.0)
        net = build_merge(spec)
        with pytest.raises(SpawnError) as err:
            spawn_agents(net, spec, np.random.default_rng(0))
        assert err.value.placed < err.value.requested


def test_agent_range_validation():
    with pytest.raises(ConfigError):
        ScenarioSpec(kind="merge", agent_count=(0, 5))
    with pytest.raises(ConfigError):
        ScenarioSpec(kind="merge", agent_count=(1, 100))
    with pytest.raises(ConfigError):
        ScenarioSpec(kind="merge", lane_width=1.5)
