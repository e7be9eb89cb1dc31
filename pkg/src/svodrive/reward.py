"""Individual driving reward, neighborhood averaging, and SVO mixing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputDomainError
from .simcore import COLLISION, OFF_PATH, OFF_ZONE, SPEED_MAX, World


@dataclass(frozen=True)
class RewardWeights:
    speed: float = 0.1
    collision: float = -10.0
    off_zone: float = -10.0
    off_path: float = -5.0


@dataclass
class RewardBreakdown:
    r_individual: float
    r_social: float
    r_total: float
    components: dict[str, float] = field(default_factory=dict)


@dataclass
class Transition:
    """One world tick as seen by the reward: the post-step world plus the
    per-agent termination events raised during the step."""

    world: World
    actions: dict[int, np.ndarray]
    events: dict[int, str]


def individual_reward(
    transition: Transition, agent_id: int, weights: RewardWeights = RewardWeights()
) -> tuple[float, dict[str, float]]:
    """Speed incentive each tick plus a one-off penalty on the failure tick."""
    speed = transition.world.last_speeds[agent_id]
    components = {"speed": weights.speed * speed / SPEED_MAX}
    event = transition.events.get(agent_id)
    if event == COLLISION:
        components["collision"] = weights.collision
    elif event == OFF_ZONE:
        components["off_zone"] = weights.off_zone
    elif event == OFF_PATH:
        components["off_path"] = weights.off_path
    return sum(components.values()), components


def neighborhood(world: World, agent_id: int, d: float, alive_ids: list[int] | None = None) -> set[int]:
    """Agents within center distance d of the agent (closed ball, self excluded)."""
    me = world.vehicle(agent_id)
    ids = alive_ids if alive_ids is not None else world.alive_ids()
    out = set()
    for other_id in ids:
        if other_id == agent_id:
            continue
        other = world.vehicle(other_id)
        if float(np.hypot(*(other.position - me.position))) <= d:
            out.add(other_id)
    return out


def svo_reward(r_i: float, neighbor_rewards, phi: float) -> RewardBreakdown:
    """Mix own and neighborhood-average reward by the SVO angle weights."""
    if not (0.0 <= phi <= 1.0):
        raise InputDomainError(f"svo {phi} outside [0, 1]")
    rewards = list(neighbor_rewards)
    r_social = sum(rewards) / len(rewards) if rewards else 0.0
    angle = 0.5 * math.pi * phi
    r_total = math.cos(angle) * r_i + math.sin(angle) * r_social
    return RewardBreakdown(r_individual=r_i, r_social=r_social, r_total=r_total)


def tick_rewards(
    transition: Transition,
    rewarded_ids: list[int],
    d: float,
    weights: RewardWeights = RewardWeights(),
) -> dict[int, RewardBreakdown]:
    """Per-agent SVO-mixed rewards for one tick.

    `rewarded_ids` are the agents alive when the step began; agents frozen
    on earlier ticks neither earn rewards nor enter neighborhood averages.
    """
    world = transition.world
    individual: dict[int, float] = {}
    comps: dict[int, dict[str, float]] = {}
    for agent_id in rewarded_ids:
        individual[agent_id], comps[agent_id] = individual_reward(transition, agent_id, weights)
    states = {v.agent_id: v for v in world.vehicles}
    pos = np.array([states[a].position for a in rewarded_ids])
    delta = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt(np.sum(delta * delta, axis=2))
    out: dict[int, RewardBreakdown] = {}
    for i, agent_id in enumerate(rewarded_ids):
        near = [rewarded_ids[j] for j in np.flatnonzero(dist[i] <= d) if j != i]
        breakdown = svo_reward(
            individual[agent_id],
            [individual[j] for j in near],
            states[agent_id].svo,
        )
        breakdown.components = comps[agent_id]
        out[agent_id] = breakdown
    return out
