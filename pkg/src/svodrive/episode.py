"""Closed-loop episode orchestration and the line-record episode log."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .decision import DecisionNet, PolicyInput, PolicyOutput, ScriptedConfig, decide, scripted_policy
from .errors import ConfigError, SpawnError
from .observation import Observation, ObservationConfig, observe
from .reward import RewardWeights, Transition, tick_rewards
from .roads import RoadNetwork
from .scenarios import ScenarioSpec, build_network, spawn_agents
from .simcore import PidConfig, World, map_action

MODE_TRUE_SVO = "TrueSVO"
MODE_RECOG = "Recog"
MODE_NO_SVO = "NoSVO"
MODES = (MODE_TRUE_SVO, MODE_RECOG, MODE_NO_SVO)

POLICY_SCRIPTED = "scripted"
POLICY_LEARNED = "learned"
POLICY_RANDOM = "random"


@dataclass
class TickRecord:
    tick: int
    states: dict[int, tuple[float, float, float, float]]
    actions: dict[int, tuple[float, float]]
    rewards: dict[int, tuple[float, float, float]]
    components: dict[int, dict[str, float]]
    estimates: dict[int, dict[int, float]] = field(default_factory=dict)
    events: dict[int, str] = field(default_factory=dict)


@dataclass
class EpisodeLog:
    config_digest: str
    seed: int
    scenario: str
    n_agents: int
    svos: dict[int, float]
    spawn_attempt: int
    horizon: int
    ticks: list[TickRecord] = field(default_factory=list)
    outcomes: dict[int, dict] = field(default_factory=dict)

    def to_lines(self):
        yield json.dumps(
            {
                "type": "header",
                "digest": self.config_digest,
                "seed": self.seed,
                "scenario": self.scenario,
                "n_agents": self.n_agents,
                "svos": {str(k): v for k, v in sorted(self.svos.items())},
                "spawn_attempt": self.spawn_attempt,
                "horizon": self.horizon,
            },
            sort_keys=True,
        )
        for t in self.ticks:
            yield json.dumps(
                {
                    "type": "tick",
                    "tick": t.tick,
                    "states": {str(k): list(v) for k, v in sorted(t.states.items())},
                    "actions": {str(k): list(v) for k, v in sorted(t.actions.items())},
                    "rewards": {str(k): list(v) for k, v in sorted(t.rewards.items())},
                    "components": {str(k): v for k, v in sorted(t.components.items())},
                    "estimates": {
                        str(k): {str(n): x for n, x in sorted(v.items())}
                        for k, v in sorted(t.estimates.items())
                    },
                    "events": {str(k): v for k, v in sorted(t.events.items())},
                },
                sort_keys=True,
            )
        yield json.dumps(
            {"type": "summary", "outcomes": {str(k): v for k, v in sorted(self.outcomes.items())}},
            sort_keys=True,
        )

    def dump(self, path) -> None:
        with open(path, "w") as f:
            for line in self.to_lines():
                f.write(line + "\n")

    @classmethod
    def from_lines(cls, lines) -> "EpisodeLog":
        header = None
        ticks = []
        outcomes = {}
        for line in lines:
            rec = json.loads(line)
            if rec["type"] == "header":
                header = rec
            elif rec["type"] == "tick":
                ticks.append(
                    TickRecord(
                        tick=rec["tick"],
                        states={int(k): tuple(v) for k, v in rec["states"].items()},
                        actions={int(k): tuple(v) for k, v in rec["actions"].items()},
                        rewards={int(k): tuple(v) for k, v in rec["rewards"].items()},
                        components={int(k): v for k, v in rec["components"].items()},
                        estimates={
                            int(k): {int(n): x for n, x in v.items()}
                            for k, v in rec["estimates"].items()
                        },
                        events={int(k): v for k, v in rec["events"].items()},
                    )
                )
            elif rec["type"] == "summary":
                outcomes = {int(k): v for k, v in rec["outcomes"].items()}
        if header is None:
            raise ConfigError("log stream has no header record")
        log = cls(
            config_digest=header["digest"],
            seed=header["seed"],
            scenario=header["scenario"],
            n_agents=header["n_agents"],
            svos={int(k): v for k, v in header["svos"].items()},
            spawn_attempt=header["spawn_attempt"],
            horizon=header["horizon"],
        )
        log.ticks = ticks
        log.outcomes = outcomes
        return log

    @classmethod
    def read(cls, path) -> "EpisodeLog":
        with open(path) as f:
            return cls.from_lines(f)


@dataclass
class EpisodeSetup:
    """Everything one episode needs; the config layer builds this."""

    scenario: ScenarioSpec
    obs_cfg: ObservationConfig = field(default_factory=ObservationConfig)
    horizon: int = 130
    mode: str = MODE_TRUE_SVO
    policy: str = POLICY_SCRIPTED
    decision_net: DecisionNet | None = None
    recognizer: object | None = None  # callable: list[Observation] -> list of estimate arrays
    scripted_cfg: ScriptedConfig = field(default_factory=ScriptedConfig)
    reward_weights: RewardWeights = field(default_factory=RewardWeights)
    pid_cfg: PidConfig = field(default_factory=PidConfig)
    dt: float = 0.1
    d_path: float = 4.0
    spawn_retries: int = 25
    config_digest: str = ""
    network: RoadNetwork | None = None  # reuse across episodes
    tick_hook: object | None = None  # callable(world, alive_ids), pre-action

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == MODE_RECOG and self.recognizer is None:
            raise ConfigError("Recog mode requires a recognition checkpoint")
        if self.policy == POLICY_LEARNED and self.decision_net is None:
            raise ConfigError("learned policy requires a decision checkpoint")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")


def build_world(setup: EpisodeSetup, seed: int) -> tuple[World, int]:
    """Spawn a world; retries with derived seeds when placement jams."""
    network = setup.network if setup.network is not None else build_network(setup.scenario)
    last_error: SpawnError | None = None
    children = np.random.SeedSequence(seed).spawn(setup.spawn_retries)
    for attempt, child in enumerate(children):
        rng = np.random.default_rng(child)
        try:
            result = spawn_agents(network, setup.scenario, rng)
        except SpawnError as err:
            last_error = err
            continue
        world = World(
            network=network,
            vehicles=result.vehicles,
            path_ids=result.path_ids,
            dt=setup.dt,
            seed=seed,
            d_path=setup.d_path,
            pid_cfg=setup.pid_cfg,
        )
        return world, attempt
    raise SpawnError(
        f"spawning failed after {setup.spawn_retries} attempts: {last_error}",
        placed=getattr(last_error, "placed", 0),
        requested=getattr(last_error, "requested", 0),
    )


def _actions_for_tick(
    setup: EpisodeSetup,
    world: World,
    alive: list[int],
    rng: np.random.Generator,
) -> tuple[dict[int, np.ndarray], dict[int, dict[int, float]]]:
    actions: dict[int, np.ndarray] = {}
    estimates: dict[int, dict[int, float]] = {}

    expose = setup.mode == MODE_TRUE_SVO and setup.policy == POLICY_LEARNED
    observations = {aid: observe(world, aid, setup.obs_cfg, expose_svo=expose) for aid in alive}

    est_values: dict[int, np.ndarray] = {}
    if setup.mode == MODE_RECOG:
        est_list = setup.recognizer([observations[aid] for aid in alive])
        for aid, est in zip(alive, est_list):
            est_values[aid] = np.asarray(est, dtype=np.float64)
            estimates[aid] = {
                int(nid): float(v)
                for nid, v in zip(observations[aid].neighbor_ids(), est_values[aid])
            }

    if setup.policy == POLICY_SCRIPTED:
        for aid in alive:
            out = scripted_policy(observations[aid], world.vehicle(aid).svo, setup.scripted_cfg)
            actions[aid] = out.action
    elif setup.policy == POLICY_RANDOM:
        for aid in alive:
            actions[aid] = rng.uniform(-1.0, 1.0, size=2)
    elif setup.policy == POLICY_LEARNED:
        from .features import build_batch

        inputs = []
        for aid in alive:
            obs = observations[aid]
            svo_self = world.vehicle(aid).svo
            if setup.mode == MODE_TRUE_SVO:
                neigh = np.array([world.vehicle(n).svo for n in obs.neighbor_ids()])
            elif setup.mode == MODE_RECOG:
                neigh = est_values[aid]
            else:
                neigh = np.full(len(obs.others), 0.5)
            inputs.append(PolicyInput(observation=obs, self_svo=svo_self, neighbor_svos=neigh))
        batch = build_batch([pi.pack() for pi in inputs], queries="ego")
        mu, _ = setup.decision_net.actor_batch(batch)
        for aid, m in zip(alive, np.tanh(mu.data)):
            actions[aid] = np.clip(m, -1.0, 1.0)
    else:
        raise ConfigError(f"unknown policy {setup.policy!r}")
    return actions, estimates


def run_episode(setup: EpisodeSetup, seed: int) -> EpisodeLog:
    """Simulate one episode: observe all, decide all, step all, score all."""
    world, attempt = build_world(setup, seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(setup.spawn_retries + 1)[-1])
    log = EpisodeLog(
        config_digest=setup.config_digest,
        seed=seed,
        scenario=setup.scenario.kind,
        n_agents=len(world.vehicles),
        svos={v.agent_id: v.svo for v in world.vehicles},
        spawn_attempt=attempt,
        horizon=setup.horizon,
    )

    for _ in range(setup.horizon):
        alive = world.alive_ids()
        if not alive:
            break
        if setup.tick_hook is not None:
            setup.tick_hook(world, alive)
        actions, estimates = _actions_for_tick(setup, world, alive, rng)
        setpoints = {aid: map_action(actions[aid]) for aid in alive}
        events = world.step(setpoints)
        transition = Transition(world=world, actions=actions, events=events)
        rewards = tick_rewards(transition, alive, setup.obs_cfg.radius, setup.reward_weights)
        log.ticks.append(
            TickRecord(
                tick=world.tick,
                states={
                    v.agent_id: (
                        float(v.position[0]),
                        float(v.position[1]),
                        v.heading,
                        world.last_speeds[v.agent_id],
                    )
                    for v in world.vehicles
                    if v.agent_id in alive
                },
                actions={aid: (float(a[0]), float(a[1])) for aid, a in actions.items()},
                rewards={
                    aid: (b.r_individual, b.r_social, b.r_total) for aid, b in rewards.items()
                },
                components={aid: b.components for aid, b in rewards.items()},
                estimates=estimates,
                events=dict(events),
            )
        )

    for v in world.vehicles:
        st = world.status[v.agent_id]
        if st.success:
            result = {"result": "success", "cause": None, "end_tick": st.end_tick}
        elif st.failure_cause is not None:
            result = {"result": "crash", "cause": st.failure_cause, "end_tick": st.end_tick}
        else:
            result = {"result": "timeout", "cause": None, "end_tick": None}
        log.outcomes[v.agent_id] = result
    return log
