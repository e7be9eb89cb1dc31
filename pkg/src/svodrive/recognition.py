"""SVO recognition: set encoders + attention estimating neighbors' SVOs,
offline dataset generation, and supervised training."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import StructuralError, TrainingError
from .features import (
    Batch,
    PackedObservation,
    STATIC_SCALE,
    VEH_SCALE,
    build_batch,
    pack_from_dict,
    pack_observation,
    pack_to_dict,
)
from .nn import (
    Adam,
    AttentionConfig,
    DeepSetEncoder,
    MLP,
    MultiHeadAttention,
    ParamStore,
    Tensor,
    backward,
    concat,
    constant,
    gather_rows,
    load_checkpoint,
    mul,
    reshape,
    scale,
    tanh,
    tensor_sum,
    use_dtype,
)
from .observation import Observation

ARCH_FULL = "full"
ARCH_WO_MAP = "wo_map"
ARCH_WO_ATTENTION = "wo_attention"
ARCHITECTURES = (ARCH_FULL, ARCH_WO_MAP, ARCH_WO_ATTENTION)

DATASET_FORMAT = "svodrive-recognition-dataset"
DATASET_VERSION = 1


@dataclass
class RecognitionSample:
    """One training record: a recognition-mode observation plus true SVOs."""

    episode: int
    tick: int
    agent_id: int
    pack: PackedObservation
    targets: np.ndarray

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if len(self.targets) != self.pack.n_neighbors:
            raise StructuralError("one target per neighbor required, same order")


@dataclass
class RecognitionEstimate:
    neighbor_ids: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise StructuralError("estimates must lie in [0, 1]")


@dataclass(frozen=True)
class RecognitionNetConfig:
    arch: str = ARCH_FULL
    d_model: int = 160
    n_heads: int = 4
    hidden: int = 128
    seed: int = 0


class RecognitionNet:
    """Eq-style pipeline: DeepSet encoders -> MHA over typed keys -> decoder
    -> tanh mapped onto [0, 1]."""

    def __init__(self, cfg: RecognitionNetConfig, store: ParamStore | None = None):
        if cfg.arch not in ARCHITECTURES:
            raise StructuralError(f"unknown architecture {cfg.arch!r}")
        self.cfg = cfg
        self.store = store if store is not None else ParamStore(cfg.seed)
        d, h = cfg.d_model, cfg.hidden
        self.veh_encoder = DeepSetEncoder(self.store, "recog.veh", 6, h, d)
        if cfg.arch == ARCH_FULL:
            self.static_encoder = DeepSetEncoder(self.store, "recog.static", 6, h, d)
        else:
            self.static_encoder = None
        if cfg.arch != ARCH_WO_ATTENTION:
            self.mha = MultiHeadAttention(
                self.store, "recog.mha", AttentionConfig(d_model=d, n_heads=cfg.n_heads)
            )
        else:
            self.mha = None
        self.decoder = MLP(self.store, "recog.decoder", [d, h, h, 1])

    @property
    def use_map(self) -> bool:
        return self.cfg.arch == ARCH_FULL

    def forward_batch(self, batch: Batch) -> Tensor:
        """Estimates for every query slot, shape (B, Q_max); padded slots
        produce values too but are masked out by callers."""
        veh_in = constant(batch.veh_points * VEH_SCALE)
        veh_feats = self.veh_encoder.encode_batch(veh_in, batch.veh_segments, batch.n_veh_total)
        parts = [veh_feats]
        if self.use_map and batch.n_static_total > 0:
            st_in = constant(batch.static_points * STATIC_SCALE)
            parts.append(
                self.static_encoder.encode_batch(st_in, batch.static_segments, batch.n_static_total)
            )
        parts.append(constant(np.zeros((1, self.cfg.d_model))))
        combined = concat(parts, axis=0)

        b, q_max = batch.query_index.shape
        queries = gather_rows(combined, batch.query_index)  # (B, Q, d)
        if self.mha is not None:
            keys = gather_rows(combined, batch.key_index)  # (B, K, d)
            attended = self.mha(queries, keys, keys, batch.key_types, batch.key_mask)
        else:
            attended = queries
        flat = reshape(attended, (b * q_max, self.cfg.d_model))
        decoded = tanh(self.decoder(flat))
        unit = scale(decoded + constant(np.ones(1)), 0.5)  # tanh range -> [0, 1]
        return reshape(unit, (b, q_max))

    def predict(self, packs: list[PackedObservation]) -> list[np.ndarray]:
        """Per-pack estimate arrays aligned with each pack's neighbors."""
        live = [p for p in packs if p.n_neighbors > 0]
        if not live:
            return [np.zeros(0) for _ in packs]
        batch = build_batch(live, queries="others", use_map=self.use_map)
        pred = self.forward_batch(batch).data
        out = []
        j = 0
        for p in packs:
            if p.n_neighbors == 0:
                out.append(np.zeros(0))
            else:
                out.append(pred[j, : p.n_neighbors].copy())
                j += 1
        return out

    def save(self, path) -> None:
        self.store.save(path)

    @classmethod
    def load(cls, path, cfg: RecognitionNetConfig) -> "RecognitionNet":
        return cls(cfg, store=load_checkpoint(path))


def recognize(net: RecognitionNet, obs: Observation) -> RecognitionEstimate:
    """Estimate SVOs of the observation's neighbors (recognition mode only)."""
    if obs.with_svo:
        raise StructuralError("recognition input must not expose SVOs")
    pack = pack_observation(obs)
    if pack.n_neighbors == 0:
        return RecognitionEstimate(neighbor_ids=pack.neighbor_ids, values=np.zeros(0))
    values = net.predict([pack])[0]
    return RecognitionEstimate(neighbor_ids=pack.neighbor_ids, values=values)


def recognition_loss(net: RecognitionNet, samples: list[RecognitionSample]) -> Tensor:
    """Mean squared error over all (agent, neighbor) pairs in the batch."""
    if not samples:
        raise StructuralError("empty batch")
    live = [s for s in samples if s.pack.n_neighbors > 0]
    if not live:
        raise StructuralError("batch contains no neighbor targets")
    batch = build_batch([s.pack for s in live], queries="others", use_map=net.use_map)
    pred = net.forward_batch(batch)
    b, q_max = batch.query_index.shape
    targets = np.zeros((b, q_max))
    for i, s in enumerate(live):
        targets[i, : s.pack.n_neighbors] = s.targets
    err = pred - constant(targets)
    masked = mul(mul(err, err), constant(batch.query_mask))
    return scale(tensor_sum(masked), 1.0 / batch.query_mask.sum())


def mean_deviation_error(estimates, truths) -> float:
    """Mean absolute difference between estimated and true SVOs."""
    est = np.asarray(list(estimates), dtype=np.float64)
    tru = np.asarray(list(truths), dtype=np.float64)
    if est.shape != tru.shape:
        raise StructuralError(f"length mismatch: {est.shape} vs {tru.shape}")
    if est.size == 0:
        return 0.0
    return float(np.mean(np.abs(est - tru)))


# -- dataset io ----------------------------------------------------------


def write_dataset(path, header: dict, samples) -> int:
    """Write samples as one JSON record per line with an offset sidecar."""
    head = {"format": DATASET_FORMAT, "version": DATASET_VERSION}
    head.update(header)
    count = 0
    offsets = []
    with open(path, "wb") as f:
        line = json.dumps(head, sort_keys=True).encode() + b"\n"
        offsets.append(0)
        f.write(line)
        pos = len(line)
        for s in samples:
            rec = {
                "episode": s.episode,
                "tick": s.tick,
                "agent": s.agent_id,
                "targets": [round(float(t), 6) for t in s.targets],
                "obs": pack_to_dict(s.pack),
            }
            line = json.dumps(rec, sort_keys=True).encode() + b"\n"
            offsets.append(pos)
            f.write(line)
            pos += len(line)
            count += 1
    with open(str(path) + ".idx", "w") as f:
        f.write("\n".join(str(o) for o in offsets) + "\n")
    return count


def read_dataset(path) -> tuple[dict, list[RecognitionSample]]:
    samples = []
    with open(path, "rb") as f:
        header = json.loads(f.readline())
        if header.get("format") != DATASET_FORMAT:
            raise StructuralError(f"{path}: not a recognition dataset")
        if header.get("version") != DATASET_VERSION:
            raise StructuralError(f"{path}: unsupported dataset version")
        for line in f:
            rec = json.loads(line)
            samples.append(
                RecognitionSample(
                    episode=int(rec["episode"]),
                    tick=int(rec["tick"]),
                    agent_id=int(rec["agent"]),
                    pack=pack_from_dict(rec["obs"]),
                    targets=np.asarray(rec["targets"], dtype=np.float64),
                )
            )
    return header, samples


# -- dataset generation ----------------------------------------------------


@dataclass(frozen=True)
class SampleSpec:
    """Which (tick, agent) pairs of an episode enter the dataset."""

    start: int = 20
    stride: int = 10
    agents_per_tick: int = 4


def generate_samples(setup, n_episodes: int, seed: int, sample_spec: SampleSpec, obs_cfg=None):
    """Run closed-loop episodes with the setup's (SVO-aware) policy and store
    recognition-mode observations with true neighbor SVOs.

    Deterministic given (setup, seed). Returns (samples, episode_logs).
    """
    from .episode import run_episode  # runner has no recognition dependency
    from .observation import observe

    samples: list[RecognitionSample] = []
    logs = []
    for episode in range(n_episodes):
        collected: list[RecognitionSample] = []

        def hook(world, alive, _episode=episode, _out=collected):
            tick = world.tick
            if tick < sample_spec.start or (tick - sample_spec.start) % sample_spec.stride != 0:
                return
            offset = ((tick - sample_spec.start) // sample_spec.stride) % max(len(alive), 1)
            rotated = alive[offset:] + alive[:offset]
            chosen = rotated[: sample_spec.agents_per_tick]
            svo_of = {v.agent_id: v.svo for v in world.vehicles}
            for agent_id in chosen:
                obs = observe(world, agent_id, obs_cfg or setup.obs_cfg, expose_svo=False)
                pack = pack_observation(obs)
                if pack.n_neighbors == 0:
                    continue
                _out.append(
                    RecognitionSample(
                        episode=_episode,
                        tick=tick,
                        agent_id=agent_id,
                        pack=pack,
                        targets=np.array([svo_of[n] for n in pack.neighbor_ids]),
                    )
                )

        setup.tick_hook = hook
        log = run_episode(setup, seed=seed + episode)
        setup.tick_hook = None
        samples.extend(collected)
        logs.append(log)
    return samples, logs


# -- training ------------------------------------------------------------


@dataclass
class RecognitionTrainConfig:
    net: RecognitionNetConfig = field(default_factory=RecognitionNetConfig)
    batch_size: int = 256
    lr: float = 3e-4
    epochs: int = 50
    patience: int = 5
    seed: int = 0
    float32: bool = True  # train in single precision; checkpoints stay f64


@dataclass
class TrainResult:
    net: RecognitionNet
    history: list[dict]
    best_epoch: int
    heldout_loss: float
    heldout_mde: float


def split_by_episode(samples: list[RecognitionSample], every: int = 10):
    """Deterministic train/held-out split on whole episodes."""
    episodes = sorted({s.episode for s in samples})
    held = {e for i, e in enumerate(episodes) if i % every == every - 1}
    train = [s for s in samples if s.episode not in held]
    heldout = [s for s in samples if s.episode in held]
    return train, heldout


def evaluate_samples(net: RecognitionNet, samples: list[RecognitionSample], batch_size: int = 512):
    """(mse, mde) of the net over a sample list."""
    sq, ab, n = 0.0, 0.0, 0
    for i in range(0, len(samples), batch_size):
        chunk = [s for s in samples[i : i + batch_size] if s.pack.n_neighbors > 0]
        if not chunk:
            continue
        preds = net.predict([s.pack for s in chunk])
        for s, p in zip(chunk, preds):
            diff = p - s.targets
            sq += float(np.sum(diff * diff))
            ab += float(np.sum(np.abs(diff)))
            n += diff.size
    if n == 0:
        raise StructuralError("no targets to evaluate")
    return sq / n, ab / n


def train_recognition(
    samples: list[RecognitionSample], cfg: RecognitionTrainConfig
) -> TrainResult:
    """Minibatch Adam on the pairwise MSE; returns the best held-out params."""
    if cfg.float32:
        with use_dtype(np.float32):
            return _train_recognition(samples, cfg)
    return _train_recognition(samples, cfg)


def _train_recognition(
    samples: list[RecognitionSample], cfg: RecognitionTrainConfig
) -> TrainResult:
    if not samples:
        raise StructuralError("dataset is empty")
    train, heldout = split_by_episode(samples)
    if not heldout:
        raise StructuralError("held-out split is empty; need more episodes")
    train = [s for s in train if s.pack.n_neighbors > 0]
    heldout = [s for s in heldout if s.pack.n_neighbors > 0]

    net = RecognitionNet(cfg.net)
    opt = Adam(net.store, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    best = None
    best_loss = math.inf
    best_epoch = -1
    history: list[dict] = []
    stale = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(train), cfg.batch_size):
            batch = [train[i] for i in order[start : start + cfg.batch_size]]
            loss = recognition_loss(net, batch)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(
                    f"non-finite training loss at epoch {epoch} step {start // cfg.batch_size}"
                )
            losses.append(value)
            net.store.zero_grad()
            backward(loss)
            opt.step()
        held_mse, held_mde = evaluate_samples(net, heldout)
        if not math.isfinite(held_mse):
            raise TrainingError(f"non-finite held-out loss at epoch {epoch}")
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "heldout_loss": held_mse,
                "heldout_mde": held_mde,
            }
        )
        if held_mse < best_loss:
            best_loss = held_mse
            best = net.store.copy()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    net_best = RecognitionNet(cfg.net, store=best)
    mse, mde = evaluate_samples(net_best, heldout)
    return TrainResult(
        net=net_best, history=history, best_epoch=best_epoch, heldout_loss=mse, heldout_mde=mde
    )


def per_tick_error_curve(net: RecognitionNet, samples: list[RecognitionSample]) -> dict[int, float]:
    """Mean deviation error grouped by tick (the per-period accuracy view)."""
    by_tick: dict[int, list[float]] = {}
    chunk_size = 512
    for i in range(0, len(samples), chunk_size):
        chunk = [s for s in samples[i : i + chunk_size] if s.pack.n_neighbors > 0]
        if not chunk:
            continue
        preds = net.predict([s.pack for s in chunk])
        for s, p in zip(chunk, preds):
            by_tick.setdefault(s.tick, []).extend(np.abs(p - s.targets).tolist())
    return {t: float(np.mean(v)) for t, v in sorted(by_tick.items())}
