"""Desk-scale soft actor-critic for stage-1 decision training.

One policy is shared by all agents (their experiences fill one buffer);
rewards are the SVO-mixed per-agent values, so heterogeneous behavior
emerges from the SVO inputs rather than separate parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .decision import DecisionNet, DecisionNetConfig, PolicyInput
from .errors import TrainingError
from .episode import EpisodeSetup, MODE_TRUE_SVO, POLICY_LEARNED, POLICY_RANDOM, build_world, run_episode
from .features import PackedObservation, build_batch
from .nn import (
    Adam,
    MLP,
    ParamStore,
    Tensor,
    backward,
    concat,
    constant,
    exp,
    log,
    minimum,
    mul,
    scale,
    tanh,
    tensor_sum,
    use_dtype,
)
from .observation import observe
from .reward import Transition, tick_rewards
from .simcore import map_action

LOG_2PI = math.log(2.0 * math.pi)


class CriticNet:
    """Q(o, a): the decision encoder stack pooled to one feature, joined
    with the action and decoded to a scalar."""

    def __init__(self, cfg: DecisionNetConfig, seed: int, name: str):
        self.cfg = cfg
        self.store = ParamStore(seed)
        self.encoder = DecisionNet(cfg, store=self.store, name=f"{name}.enc")
        self.head = MLP(self.store, f"{name}.q", [cfg.d_model + 2, cfg.hidden, cfg.hidden, 1])

    def q_value(self, batch, actions: Tensor) -> Tensor:
        pooled = self.encoder.pooled_batch(batch)
        return self.head(concat([pooled, actions], axis=1))


@dataclass
class SacTrainConfig:
    total_steps: int = 20000
    start_steps: int = 1000
    update_every: int = 4
    updates_per_cycle: int = 1
    batch_size: int = 128
    buffer_size: int = 100000
    gamma: float = 0.99
    lr: float = 3e-4
    tau: float = 0.005
    init_alpha: float = 0.1
    target_entropy: float = -2.0
    net: DecisionNetConfig = field(default_factory=DecisionNetConfig)
    seed: int = 0


@dataclass
class SacResult:
    net: DecisionNet
    returns: list[float]
    alpha_history: list[float]
    steps: int


class ReplayBuffer:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self.items: list[tuple] = []
        self.pos = 0

    def push(self, pack, action, reward, next_pack, done):
        item = (pack, action, reward, next_pack, done)
        if len(self.items) < self.capacity:
            self.items.append(item)
        else:
            self.items[self.pos] = item
        self.pos = (self.pos + 1) % self.capacity

    def sample(self, rng: np.random.Generator, n: int):
        idx = rng.integers(0, len(self.items), size=n)
        return [self.items[i] for i in idx]

    def __len__(self):
        return len(self.items)


def _log_prob(mu: Tensor, log_std: Tensor, eps: np.ndarray) -> tuple[Tensor, Tensor]:
    """Reparameterized tanh-Gaussian sample and its log density, summed over
    action dims. Returns (squashed action, log_prob column)."""
    std = exp(log_std)
    u = mu + mul(std, constant(eps))
    a = tanh(u)
    gauss = scale(mul(constant(eps), constant(eps)), -0.5)  # -(u-mu)^2 / (2 std^2)
    logp = gauss - log_std - constant(np.full(1, 0.5 * LOG_2PI))
    squash = log(constant(np.ones(1)) - mul(a, a) + constant(np.full(1, 1e-6)))
    total = tensor_sum(logp - squash, axis=1, keepdims=True)
    return a, total


def _polyak(target: ParamStore, source: ParamStore, tau: float) -> None:
    for name, t in target.params.items():
        t.data = (1.0 - tau) * t.data + tau * source.params[name].data


def sac_train(setup: EpisodeSetup, cfg: SacTrainConfig, seed: int) -> SacResult:
    """Train the shared decision policy with SAC on the setup's scenario."""
    with use_dtype(np.float32):
        return _sac_train(setup, cfg, seed)


def _sac_train(setup: EpisodeSetup, cfg: SacTrainConfig, seed: int) -> SacResult:
    rng = np.random.default_rng(np.random.PCG64(cfg.seed + 7919))
    actor = DecisionNet(cfg.net)
    critic1 = CriticNet(cfg.net, cfg.seed + 1, "c1")
    critic2 = CriticNet(cfg.net, cfg.seed + 2, "c2")
    target1 = CriticNet(cfg.net, cfg.seed + 1, "c1")
    target2 = CriticNet(cfg.net, cfg.seed + 2, "c2")
    target1.store.load_values(critic1.store)
    target2.store.load_values(critic2.store)

    opt_actor = Adam(actor.store, lr=cfg.lr)
    opt_c1 = Adam(critic1.store, lr=cfg.lr)
    opt_c2 = Adam(critic2.store, lr=cfg.lr)
    log_alpha = math.log(cfg.init_alpha)
    alpha_m, alpha_v, alpha_t = 0.0, 0.0, 0

    buffer = ReplayBuffer(cfg.buffer_size)
    returns: list[float] = []
    alpha_history: list[float] = []

    def policy_pack(world, agent_id) -> PackedObservation:
        obs = observe(world, agent_id, setup.obs_cfg, expose_svo=False)
        me = world.vehicle(agent_id)
        neigh = np.array([world.vehicle(n).svo for n in obs.neighbor_ids()])
        pack = PolicyInput(observation=obs, self_svo=me.svo, neighbor_svos=neigh).pack()
        return pack.astype(np.float32)

    steps = 0
    episode_idx = 0
    while steps < cfg.total_steps:
        world, _ = build_world(setup, seed + episode_idx)
        episode_idx += 1
        ep_return = {v.agent_id: 0.0 for v in world.vehicles}
        for _ in range(setup.horizon):
            alive = world.alive_ids()
            if not alive or steps >= cfg.total_steps:
                break
            packs = {aid: policy_pack(world, aid) for aid in alive}
            if steps < cfg.start_steps:
                actions = {aid: rng.uniform(-1.0, 1.0, size=2) for aid in alive}
            else:
                batch = build_batch([packs[aid] for aid in alive], queries="ego")
                mu, log_std = actor.actor_batch(batch)
                draw = mu.data + np.exp(log_std.data) * rng.standard_normal(mu.data.shape)
                actions = {aid: np.tanh(draw[i]) for i, aid in enumerate(alive)}
            setpoints = {aid: map_action(actions[aid]) for aid in alive}
            events = world.step(setpoints)
            rewards = tick_rewards(
                Transition(world=world, actions=actions, events=events),
                alive,
                setup.obs_cfg.radius,
                setup.reward_weights,
            )
            for aid in alive:
                done = aid in events
                next_pack = packs[aid] if done else policy_pack(world, aid)
                buffer.push(packs[aid], actions[aid], rewards[aid].r_total, next_pack, done)
                ep_return[aid] += rewards[aid].r_total
            steps += 1

            if steps >= cfg.start_steps and steps % cfg.update_every == 0 and len(buffer) >= cfg.batch_size:
                for _ in range(cfg.updates_per_cycle):
                    tr = buffer.sample(rng, cfg.batch_size)
                    obs_batch = build_batch([t[0] for t in tr], queries="ego")
                    next_batch = build_batch([t[3] for t in tr], queries="ego")
                    act = np.array([t[1] for t in tr])
                    rew = np.array([t[2] for t in tr])[:, None]
                    done = np.array([float(t[4]) for t in tr])[:, None]
                    alpha = math.exp(log_alpha)

                    # target value (numeric; no gradient flows back)
                    mu_n, ls_n = actor.actor_batch(next_batch)
                    eps = rng.standard_normal(mu_n.data.shape)
                    u_n = mu_n.data + np.exp(ls_n.data) * eps
                    a_n = np.tanh(u_n)
                    logp_n = (
                        -0.5 * eps**2 - ls_n.data - 0.5 * LOG_2PI
                        - np.log(1.0 - a_n**2 + 1e-6)
                    ).sum(axis=1, keepdims=True)
                    q1_n = target1.q_value(next_batch, constant(a_n)).data
                    q2_n = target2.q_value(next_batch, constant(a_n)).data
                    y = rew + cfg.gamma * (1.0 - done) * (
                        np.minimum(q1_n, q2_n) - alpha * logp_n
                    )
                    if not np.all(np.isfinite(y)):
                        raise TrainingError(f"non-finite critic target at step {steps}")

                    for critic, opt in ((critic1, opt_c1), (critic2, opt_c2)):
                        q = critic.q_value(obs_batch, constant(act))
                        err = q - constant(y)
                        loss_q = scale(tensor_sum(mul(err, err)), 1.0 / len(tr))
                        critic.store.zero_grad()
                        backward(loss_q)
                        opt.step()

                    # actor update (critic params receive grads but no step)
                    mu_b, ls_b = actor.actor_batch(obs_batch)
                    eps_b = rng.standard_normal(mu_b.data.shape)
                    a_b, logp_b = _log_prob(mu_b, ls_b, eps_b)
                    q_min = minimum(
                        critic1.q_value(obs_batch, a_b), critic2.q_value(obs_batch, a_b)
                    )
                    loss_pi = scale(tensor_sum(scale(logp_b, alpha) - q_min), 1.0 / len(tr))
                    if not math.isfinite(loss_pi.item()):
                        raise TrainingError(f"non-finite actor loss at step {steps}")
                    actor.store.zero_grad()
                    critic1.store.zero_grad()
                    critic2.store.zero_grad()
                    backward(loss_pi)
                    opt_actor.step()

                    # temperature update (scalar Adam on log_alpha)
                    g_alpha = -float(np.mean(logp_b.data + cfg.target_entropy))
                    alpha_t += 1
                    alpha_m = 0.9 * alpha_m + 0.1 * g_alpha
                    alpha_v = 0.999 * alpha_v + 0.001 * g_alpha * g_alpha
                    m_hat = alpha_m / (1.0 - 0.9**alpha_t)
                    v_hat = alpha_v / (1.0 - 0.999**alpha_t)
                    log_alpha -= cfg.lr * m_hat / (math.sqrt(v_hat) + 1e-8)

                    _polyak(target1.store, critic1.store, cfg.tau)
                    _polyak(target2.store, critic2.store, cfg.tau)
                alpha_history.append(math.exp(log_alpha))
        returns.append(float(np.mean(list(ep_return.values()))))
    actor.store.check_finite()
    return SacResult(net=actor, returns=returns, alpha_history=alpha_history, steps=steps)


def episodic_return(log) -> float:
    """Mean over agents of per-agent undiscounted return in one episode log."""
    totals: dict[int, float] = {}
    for t in log.ticks:
        for aid, (r_i, r_s, r_total) in t.rewards.items():
            totals[aid] = totals.get(aid, 0.0) + r_total
    if not totals:
        return 0.0
    return float(np.mean(list(totals.values())))


def evaluate_policy_returns(setup: EpisodeSetup, n_episodes: int, seed: int) -> list[float]:
    """Per-episode mean returns for the setup's policy over paired seeds."""
    return [episodic_return(run_episode(setup, seed=seed + i)) for i in range(n_episodes)]
