import math

import numpy as np
import pytest

from svodrive.errors import InputDomainError
from svodrive.geometry import CachedPolyline
from svodrive.scenarios import ScenarioSpec, build_merge, spawn_agents
from svodrive.simcore import (
    COLLISION,
    OFF_PATH,
    OFF_ZONE,
    ControlSetpoint,
    PidConfig,
    PidState,
    VehicleState,
    World,
    bicycle_step,
    check_failures,
    detect_collisions,
    map_action,
    pid_step,
    unmap_action,
)


def vehicle(x=0.0, y=0.0, heading=0.0, speed=0.0, agent_id=0, svo=0.5):
    return VehicleState(
        position=np.array([x, y]),
        heading=heading,
        speed=speed,
        length=4.6,
        width=2.0,
        agent_id=agent_id,
        svo=svo,
    )


class TestMapAction:
    def test_full_throttle(self):
        sp = map_action([1, 0])
        assert sp.target_speed == pytest.approx(6.0)
        assert sp.steering_angle == pytest.approx(0.0)

    def test_reverse_corner(self):
        sp = map_action([-1, -1])
        assert sp.target_speed == pytest.approx(0.0)
        assert sp.steering_angle == pytest.approx(-math.pi / 4)

    def test_midpoint(self):
        sp = map_action([0, 0])
        assert sp.target_speed == pytest.approx(3.0)
        assert sp.steering_angle == pytest.approx(0.0)

    def test_domain_error(self):
        with pytest.raises(InputDomainError):
            map_action([1.2, 0.0])

    def test_bijection_round_trip(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            a = rng.uniform(-1, 1, size=2)
            back = unmap_action(map_action(a))
            assert np.abs(back - a).max() < 1e-12


class TestPid:
    def test_zero_error(self):
        acc, steer, _ = pid_step(vehicle(speed=3.0), ControlSetpoint(3.0, 0.1), PidState(), 0.1)
        assert acc == pytest.approx(0.0)
        assert steer == pytest.approx(0.1)

    def test_clamp(self):
        cfg = PidConfig(kp=1.0, ki=0.0, kd=0.0, a_max=3.0)
        acc, _, _ = pid_step(vehicle(speed=0.0), ControlSetpoint(6.0, 0.0), PidState(), 0.1, cfg)
        assert acc == pytest.approx(3.0)

    def test_zero_gains_zero_accel(self):
        cfg = PidConfig(kp=0.0, ki=0.0, kd=0.0)
        rng = np.random.default_rng(0)
        state = PidState()
        for _ in range(20):
            acc, _, state = pid_step(
                vehicle(speed=rng.uniform(0, 6)),
                ControlSetpoint(rng.uniform(0, 6), 0.0),
                state,
                0.1,
                cfg,
            )
            assert acc == 0.0

    def test_antiwindup(self):
        cfg = PidConfig(kp=0.0, ki=1.0, kd=0.0, integral_limit=5.0)
        state = PidState()
        for _ in range(200):
            _, _, state = pid_step(vehicle(speed=0.0), ControlSetpoint(6.0, 0.0), state, 0.1, cfg)
        assert abs(state.integral) <= 5.0

    def test_closed_loop_convergence(self):
        # default gains must reach within 5% of a 4 m/s target in <= 3 s
        v = vehicle(speed=0.0)
        state = PidState()
        dt = 0.1
        for _ in range(30):
            acc, steer, state = pid_step(v, ControlSetpoint(4.0, 0.0), state, dt)
            v = bicycle_step(v, acc, steer, dt)
        assert abs(v.speed - 4.0) <= 0.05 * 4.0


class TestBicycle:
    def test_straight_integration(self):
        v = vehicle(speed=2.0)
        nxt = bicycle_step(v, 0.0, 0.0, 0.1)
        assert nxt.position[0] == pytest.approx(0.2)
        assert nxt.position[1] == pytest.approx(0.0)
        assert nxt.heading == pytest.approx(0.0)
        assert nxt.speed == pytest.approx(2.0)

    def test_zero_speed_is_fixed_point(self):
        v = vehicle(speed=0.0, heading=1.0)
        nxt = bicycle_step(v, 0.0, 0.5, 0.1)
        assert np.allclose(nxt.position, v.position)
        assert nxt.heading == pytest.approx(1.0)

    def test_heading_rate(self):
        # theta_dot = v / L * tan(steer); L = 0.8 * length
        v = VehicleState(np.zeros(2), 0.0, 1.0, 2.5, 1.0, 0, 0.5)
        nxt = bicycle_step(v, 0.0, math.pi / 4, 0.1)
        expected = (1.0 / 2.0) * math.tan(math.pi / 4) * 0.1
        assert nxt.heading == pytest.approx(expected)

    def test_speed_bounds_preserved(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            v = vehicle(speed=rng.uniform(0, 6))
            nxt = bicycle_step(v, rng.uniform(-10, 10), rng.uniform(-0.7, 0.7), 0.1)
            assert 0.0 <= nxt.speed <= 6.0


class TestCollisions:
    def test_far_apart(self):
        assert detect_collisions([vehicle(0, 0, agent_id=0), vehicle(100, 0, agent_id=1)]) == set()

    def test_identical_poses(self):
        pairs = detect_collisions([vehicle(agent_id=3), vehicle(agent_id=8)])
        assert pairs == {(3, 8)}

    def test_symmetry_and_irreflexivity(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            vehicles = [
                vehicle(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3), agent_id=i)
                for i in range(4)
            ]
            pairs = detect_collisions(vehicles)
            for a, b in pairs:
                assert a < b


def straight_path():
    return CachedPolyline(np.array([[0.0, 0.0], [100.0, 0.0]]))


def square_zone():
    return np.array([[-5.0, -6.0], [105.0, -6.0], [105.0, 6.0], [-5.0, 6.0]])


class TestFailures:
    def test_on_path_ok(self):
        assert check_failures(vehicle(50, 0), square_zone(), straight_path()) is None

    def test_far_away_off_zone(self):
        assert check_failures(vehicle(50, 1000), square_zone(), straight_path()) == OFF_ZONE

    def test_off_path_boundary(self):
        # just outside the D_path = 4 m threshold (and still inside the zone)
        assert check_failures(vehicle(50, 4.001), square_zone(), straight_path(), 4.0) == OFF_PATH
        assert check_failures(vehicle(50, 3.999), square_zone(), straight_path(), 4.0) is None


class TestWorld:
    def make_world(self, seed=0):
        spec = ScenarioSpec(kind="merge", agent_count=(6, 6), seed=seed)
        net = build_merge(spec)
        res = spawn_agents(net, spec, np.random.default_rng(seed))
        return World(network=net, vehicles=res.vehicles, path_ids=res.path_ids)

    def test_tick_increments(self):
        world = self.make_world()
        for expected in range(1, 6):
            world.step({a: ControlSetpoint(3.0, 0.0) for a in world.alive_ids()})
            assert world.tick == expected

    def test_frozen_after_collision_stays_obstacle(self):
        v0 = vehicle(0, 0, speed=4.0, agent_id=0)
        v1 = vehicle(3.0, 0, speed=0.0, agent_id=1)
        spec = ScenarioSpec(kind="merge", agent_count=(2, 2))
        net = build_merge(spec)
        world = World(network=net, vehicles=[v0, v1], path_ids=[0, 0])
        events = world.step({0: ControlSetpoint(6.0, 0.0), 1: ControlSetpoint(0.0, 0.0)})
        assert events[0] == COLLISION and events[1] == COLLISION
        assert world.status[0].alive is False
        assert not world.status[0].removed
        assert world.vehicle(0).speed == 0.0
        assert len(world.present_vehicles()) == 2
