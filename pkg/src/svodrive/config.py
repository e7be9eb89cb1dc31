"""Run configuration: a versioned, human-readable YAML file materializing
every default, plus assembly of episode setups from it."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields

import yaml

from .decision import DecisionNet, DecisionNetConfig, ScriptedConfig
from .episode import (
    EpisodeSetup,
    MODES,
    MODE_RECOG,
    MODE_TRUE_SVO,
    POLICY_LEARNED,
    POLICY_RANDOM,
    POLICY_SCRIPTED,
)
from .errors import ConfigError
from .observation import ObservationConfig
from .recognition import (
    RecognitionNet,
    RecognitionNetConfig,
    RecognitionTrainConfig,
)
from .reward import RewardWeights
from .scenarios import ScenarioSpec, SvoSpec
from .simcore import PidConfig

CONFIG_VERSION = 1
OUT_DIR_ENV = "SVODRIVE_OUT"


@dataclass
class DatasetConfig:
    episodes: int = 500
    sample_start: int = 20
    sample_stride: int = 10
    agents_per_tick: int = 4


@dataclass
class SacConfig:
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
    eval_episodes: int = 20
    net: DecisionNetConfig = field(default_factory=DecisionNetConfig)


@dataclass
class RunConfig:
    scenario: ScenarioSpec = field(default_factory=lambda: ScenarioSpec())
    obs: ObservationConfig = field(default_factory=ObservationConfig)
    reward: RewardWeights = field(default_factory=RewardWeights)
    pid: PidConfig = field(default_factory=PidConfig)
    scripted: ScriptedConfig = field(default_factory=ScriptedConfig)
    decision_net: DecisionNetConfig = field(default_factory=DecisionNetConfig)
    recognition_net: RecognitionNetConfig = field(default_factory=RecognitionNetConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    mode: str = MODE_TRUE_SVO
    policy: str = POLICY_SCRIPTED
    decision_checkpoint: str | None = None
    recognition_checkpoint: str | None = None
    n_episodes: int = 200
    horizon: int = 130
    dt: float = 0.1
    d_path: float = 4.0
    seed: int = 0
    out_dir: str = "out"
    train_batch_size: int = 256
    train_lr: float = 3e-4
    train_epochs: int = 50
    train_patience: int = 5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.policy not in (POLICY_SCRIPTED, POLICY_LEARNED, POLICY_RANDOM):
            raise ConfigError(f"unknown policy {self.policy!r}")
        if self.mode == MODE_RECOG and not self.recognition_checkpoint:
            raise ConfigError("Recog mode requires recognition_checkpoint")
        if self.policy == POLICY_LEARNED and not self.decision_checkpoint:
            raise ConfigError("learned policy requires decision_checkpoint")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "version": CONFIG_VERSION,
            "scenario": asdict(self.scenario),
            "observation": asdict(self.obs),
            "reward": asdict(self.reward),
            "pid": asdict(self.pid),
            "scripted": asdict(self.scripted),
            "decision_net": asdict(self.decision_net),
            "recognition_net": asdict(self.recognition_net),
            "dataset": asdict(self.dataset),
            "sac": asdict(self.sac),
            "mode": self.mode,
            "policy": self.policy,
            "decision_checkpoint": self.decision_checkpoint,
            "recognition_checkpoint": self.recognition_checkpoint,
            "run": {
                "n_episodes": self.n_episodes,
                "horizon": self.horizon,
                "dt": self.dt,
                "d_path": self.d_path,
                "seed": self.seed,
                "out_dir": self.out_dir,
            },
            "train_recog": {
                "batch_size": self.train_batch_size,
                "lr": self.train_lr,
                "epochs": self.train_epochs,
                "patience": self.train_patience,
            },
        }
        d["scenario"]["svo"] = asdict(self.scenario.svo)
        d["scenario"]["agent_count"] = list(self.scenario.agent_count)
        d["scenario"]["svo"]["values"] = list(self.scenario.svo.values)
        return d

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]

    def save(self, path) -> None:
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if d.get("version") != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {d.get('version')!r}")

        def section(name, klass, **extra):
            raw = dict(d.get(name, {}))
            raw.update(extra)
            allowed = {f.name for f in fields(klass)}
            unknown = set(raw) - allowed
            if unknown:
                raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
            return klass(**raw)

        scen_raw = dict(d.get("scenario", {}))
        svo_raw = dict(scen_raw.pop("svo", {}))
        svo_raw["values"] = tuple(svo_raw.get("values", ()))
        if "agent_count" in scen_raw:
            scen_raw["agent_count"] = tuple(scen_raw["agent_count"])
        allowed = {f.name for f in fields(ScenarioSpec)}
        unknown = set(scen_raw) - allowed
        if unknown:
            raise ConfigError(f"unknown keys in scenario: {sorted(unknown)}")
        scenario = ScenarioSpec(**scen_raw, svo=SvoSpec(**svo_raw))
        run = dict(d.get("run", {}))
        train = dict(d.get("train_recog", {}))
        sac_raw = dict(d.get("sac", {}))
        sac_net = sac_raw.pop("net", None)
        sac_raw["net"] = DecisionNetConfig(**sac_net) if sac_net else DecisionNetConfig()
        allowed = {f.name for f in fields(SacConfig)}
        unknown = set(sac_raw) - allowed
        if unknown:
            raise ConfigError(f"unknown keys in sac: {sorted(unknown)}")
        sac = SacConfig(**sac_raw)
        return cls(
            scenario=scenario,
            obs=section("observation", ObservationConfig),
            reward=section("reward", RewardWeights),
            pid=section("pid", PidConfig),
            scripted=section("scripted", ScriptedConfig),
            decision_net=section("decision_net", DecisionNetConfig),
            recognition_net=section("recognition_net", RecognitionNetConfig),
            dataset=section("dataset", DatasetConfig),
            sac=sac,
            mode=d.get("mode", MODE_TRUE_SVO),
            policy=d.get("policy", POLICY_SCRIPTED),
            decision_checkpoint=d.get("decision_checkpoint"),
            recognition_checkpoint=d.get("recognition_checkpoint"),
            n_episodes=run.get("n_episodes", 200),
            horizon=run.get("horizon", 130),
            dt=run.get("dt", 0.1),
            d_path=run.get("d_path", 4.0),
            seed=run.get("seed", 0),
            out_dir=run.get("out_dir", "out"),
            train_batch_size=train.get("batch_size", 256),
            train_lr=train.get("lr", 3e-4),
            train_epochs=train.get("epochs", 50),
            train_patience=train.get("patience", 5),
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as f:
            try:
                raw = yaml.safe_load(f)
            except yaml.YAMLError as err:
                raise ConfigError(f"malformed config {path}: {err}") from err
        if not isinstance(raw, dict):
            raise ConfigError(f"malformed config {path}: expected a mapping")
        return cls.from_dict(raw)

    # -- assembly --------------------------------------------------------

    def resolved_out_dir(self) -> str:
        return os.environ.get(OUT_DIR_ENV, self.out_dir)

    def train_config(self) -> RecognitionTrainConfig:
        return RecognitionTrainConfig(
            net=self.recognition_net,
            batch_size=self.train_batch_size,
            lr=self.train_lr,
            epochs=self.train_epochs,
            patience=self.train_patience,
            seed=self.seed,
        )

    def episode_setup(self) -> EpisodeSetup:
        decision_net = None
        if self.policy == POLICY_LEARNED:
            decision_net = DecisionNet.load(self.decision_checkpoint, self.decision_net)
        recognizer = None
        if self.mode == MODE_RECOG:
            net = RecognitionNet.load(self.recognition_checkpoint, self.recognition_net)
            recognizer = BatchRecognizer(net)
        return EpisodeSetup(
            scenario=self.scenario,
            obs_cfg=self.obs,
            horizon=self.horizon,
            mode=self.mode,
            policy=self.policy,
            decision_net=decision_net,
            recognizer=recognizer,
            scripted_cfg=self.scripted,
            reward_weights=self.reward,
            pid_cfg=self.pid,
            dt=self.dt,
            d_path=self.d_path,
            config_digest=self.digest(),
        )


class BatchRecognizer:
    """Adapter: a recognition net applied to a tick's observations at once."""

    def __init__(self, net: RecognitionNet):
        self.net = net

    def __call__(self, observations):
        from .features import pack_observation

        packs = [pack_observation(o) for o in observations]
        return self.net.predict(packs)


def default_config() -> RunConfig:
    return RunConfig()


def write_reference_config(path) -> None:
    default_config().save(path)
