"""SVO-conditioned decision policies: the learned single-query attention
policy, a scripted SVO-parameterized heuristic, and a random baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import StructuralError
from .features import (
    Batch,
    PackedObservation,
    STATIC_SCALE,
    VEH_SCALE,
    build_batch,
    pack_observation,
)
from .geometry import CachedPolyline
from .nn import (
    Adam,
    AttentionConfig,
    DeepSetEncoder,
    Linear,
    MLP,
    MultiHeadAttention,
    ParamStore,
    Tensor,
    backward,
    concat,
    constant,
    gather_rows,
    load_checkpoint,
    narrow,
    reshape,
    scale,
    tanh,
)
from .observation import Observation
from .simcore import ControlSetpoint, SPEED_MAX, STEER_MAX, unmap_action

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0


@dataclass
class PolicyInput:
    """Decision-policy input: the observation plus the ego's true SVO and the
    (true or estimated) SVOs of its neighbors, aligned with observation.others."""

    observation: Observation
    self_svo: float
    neighbor_svos: np.ndarray

    def __post_init__(self):
        self.neighbor_svos = np.asarray(self.neighbor_svos, dtype=np.float64)
        if len(self.neighbor_svos) != len(self.observation.others):
            raise StructuralError("one SVO per neighbor required")
        if not (0.0 <= self.self_svo <= 1.0):
            raise StructuralError(f"self svo {self.self_svo} outside [0, 1]")

    def pack(self) -> PackedObservation:
        p = pack_observation(self.observation)
        p.svos = np.concatenate([[self.self_svo], self.neighbor_svos])
        return p


@dataclass
class PolicyOutput:
    action: np.ndarray
    mean: np.ndarray | None = None
    log_std: np.ndarray | None = None

    def __post_init__(self):
        self.action = np.clip(np.asarray(self.action, dtype=np.float64), -1.0, 1.0)


@dataclass(frozen=True)
class DecisionNetConfig:
    d_veh: int = 128
    d_svo: int = 32
    n_heads: int = 4
    hidden: int = 128
    seed: int = 0

    @property
    def d_model(self) -> int:
        return self.d_veh + self.d_svo


class DecisionNet:
    """Vehicle elements to 128-d, SVOs projected to 32-d and concatenated,
    single ego query over all typed keys, decoded to a bounded action."""

    def __init__(self, cfg: DecisionNetConfig = DecisionNetConfig(), store: ParamStore | None = None, name: str = "decision"):
        self.cfg = cfg
        self.store = store if store is not None else ParamStore(cfg.seed)
        d, h = cfg.d_model, cfg.hidden
        self.veh_encoder = DeepSetEncoder(self.store, f"{name}.veh", 6, h, cfg.d_veh)
        self.svo_proj = Linear(self.store, f"{name}.svo", 1, cfg.d_svo)
        self.static_encoder = DeepSetEncoder(self.store, f"{name}.static", 6, h, d)
        self.mha = MultiHeadAttention(
            self.store, f"{name}.mha", AttentionConfig(d_model=d, n_heads=cfg.n_heads)
        )
        self.head = MLP(self.store, f"{name}.head", [d, h, h, 4])

    def pooled_batch(self, batch: Batch) -> Tensor:
        """Attended ego feature, shape (B, d_model)."""
        if batch.svo_flat is None:
            raise StructuralError("decision input requires SVO values")
        veh_in = constant(batch.veh_points * VEH_SCALE)
        veh_feats = self.veh_encoder.encode_batch(veh_in, batch.veh_segments, batch.n_veh_total)
        svo_feats = self.svo_proj(constant(batch.svo_flat[:, None]))
        veh_full = concat([veh_feats, svo_feats], axis=1)  # (Nv, d_veh + d_svo)
        parts = [veh_full]
        if batch.n_static_total > 0:
            st_in = constant(batch.static_points * STATIC_SCALE)
            parts.append(
                self.static_encoder.encode_batch(st_in, batch.static_segments, batch.n_static_total)
            )
        parts.append(constant(np.zeros((1, self.cfg.d_model))))
        combined = concat(parts, axis=0)
        queries = gather_rows(combined, batch.query_index)  # (B, 1, d)
        keys = gather_rows(combined, batch.key_index)
        attended = self.mha(queries, keys, keys, batch.key_types, batch.key_mask)
        return reshape(attended, (batch.batch_size, self.cfg.d_model))

    def actor_batch(self, batch: Batch) -> tuple[Tensor, Tensor]:
        """(mean, log_std) of the pre-squash Gaussian, each (B, 2)."""
        out = self.head(self.pooled_batch(batch))
        mu = narrow(out, 1, 0, 2)
        raw = tanh(narrow(out, 1, 2, 2))
        log_std = scale(raw, 0.5 * (LOG_STD_MAX - LOG_STD_MIN)) + constant(
            np.full(1, 0.5 * (LOG_STD_MAX + LOG_STD_MIN))
        )
        return mu, log_std

    def save(self, path) -> None:
        self.store.save(path)

    @classmethod
    def load(cls, path, cfg: DecisionNetConfig = DecisionNetConfig()) -> "DecisionNet":
        return cls(cfg, store=load_checkpoint(path))


def decide(net: DecisionNet, policy_input: PolicyInput) -> PolicyOutput:
    """Deterministic evaluation: the tanh of the Gaussian mean."""
    batch = build_batch([policy_input.pack()], queries="ego")
    mu, log_std = net.actor_batch(batch)
    action = np.tanh(mu.data[0])
    return PolicyOutput(action=action, mean=mu.data[0].copy(), log_std=log_std.data[0].copy())


def sample_action(
    net: DecisionNet, batch: Batch, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Stochastic tanh-Gaussian sample; returns (actions, pre-squash draws)."""
    mu, log_std = net.actor_batch(batch)
    std = np.exp(log_std.data)
    u = mu.data + std * rng.standard_normal(mu.data.shape)
    return np.tanh(u), u


# -- scripted policy -------------------------------------------------------


@dataclass(frozen=True)
class ScriptedConfig:
    """Pure pursuit plus an SVO-dependent yielding rule.

    Higher SVO keeps larger conflict margins: the stop distance grows with
    the agent's SVO, so prosocial agents yield earlier and follow farther.
    """

    lookahead_base: float = 3.0
    lookahead_speed: float = 0.8
    wheelbase: float = 3.68
    stop_base: float = 4.8
    stop_gain: float = 8.0
    slow_len: float = 12.0
    lateral_block: float = 2.3
    predict_time: float = 1.0
    creep_floor: float = 5.2
    creep_speed: float = 0.5
    curve_window: float = 8.0
    v_max: float = SPEED_MAX


def scripted_policy(
    obs: Observation, self_svo: float, cfg: ScriptedConfig = ScriptedConfig()
) -> PolicyOutput:
    """Follow the global path; slow for conflicts sooner the higher the SVO."""
    fallback = unmap_action(ControlSetpoint(target_speed=2.0, steering_angle=0.0))
    if obs.ego_route_index is None:
        return PolicyOutput(action=fallback)
    route_elem = obs.static[obs.ego_route_index]
    if len(route_elem) < 2:
        return PolicyOutput(action=fallback)
    route = CachedPolyline(route_elem.xy)
    ego_speed = obs.ego.last_speed()

    # Ego (at the origin) plus current and predicted neighbor positions, all
    # projected onto the route in one call.
    candidates = [(0.0, 0.0)]
    for elem in obs.others:
        x, y, h = elem.last_pose()
        v = elem.last_speed()
        candidates.append((x, y))
        if v > 0.05:
            candidates.append(
                (x + math.cos(h) * v * cfg.predict_time, y + math.sin(h) * v * cfg.predict_time)
            )
    s_cand, lat_cand = route.project_many(np.asarray(candidates))
    s0 = float(s_cand[0])

    # Pure pursuit on the ego-frame route.
    lookahead = cfg.lookahead_base + cfg.lookahead_speed * ego_speed
    target = route.point_at(min(s0 + lookahead, route.length))
    alpha = math.atan2(target[1], target[0])
    steering = math.atan2(2.0 * cfg.wheelbase * math.sin(alpha), lookahead)
    steering = min(max(steering, -STEER_MAX), STEER_MAX)

    best_gap = math.inf
    ahead = (lat_cand[1:] < cfg.lateral_block) & (s_cand[1:] > s0 + 0.1)
    if np.any(ahead):
        best_gap = float(np.min(s_cand[1:][ahead]) - s0)

    d_stop = cfg.stop_base + cfg.stop_gain * self_svo
    target_speed = cfg.v_max
    if math.isfinite(best_gap):
        headway = min(max((best_gap - d_stop) / cfg.slow_len, 0.0), 1.0)
        gap_speed = cfg.v_max * headway
        if best_gap > cfg.creep_floor:
            gap_speed = max(gap_speed, cfg.creep_speed)
        target_speed = min(target_speed, gap_speed)

    # Slow mildly into bends (heading change over the next few meters).
    h_now = route_heading(route_elem, route, s0)
    h_ahead = route_heading(route_elem, route, min(s0 + cfg.curve_window, route.length))
    bend = abs(math.remainder(h_ahead - h_now, 2.0 * math.pi))
    target_speed = min(target_speed, max(2.0, cfg.v_max * (1.0 - bend)))

    setpoint = ControlSetpoint(
        target_speed=min(max(target_speed, 0.0), SPEED_MAX), steering_angle=steering
    )
    return PolicyOutput(action=unmap_action(setpoint))


def route_heading(elem, route: CachedPolyline, s: float) -> float:
    """Heading of the route point nearest to arc length s."""
    idx = int(np.clip(np.searchsorted(route.cum, s), 0, len(elem) - 1))
    return float(elem.base[idx, 2])


class RandomPolicy:
    """Uniform actions in [-1, 1]^2 from the episode's generator."""

    def __call__(self, obs: Observation, self_svo: float, rng: np.random.Generator) -> PolicyOutput:
        return PolicyOutput(action=rng.uniform(-1.0, 1.0, size=2))
