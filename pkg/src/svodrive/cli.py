"""Command-line interface: simulation, dataset generation, training,
evaluation, SVO sweeps, and recognition ablations."""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import export
from .config import RunConfig, write_reference_config
from .episode import EpisodeLog, run_episode
from .errors import ConfigError, SvoDriveError
from .metrics import metrics_from_logs
from .recognition import (
    ARCH_FULL,
    ARCH_WO_ATTENTION,
    ARCH_WO_MAP,
    RecognitionNet,
    SampleSpec,
    evaluate_samples,
    generate_samples,
    per_tick_error_curve,
    read_dataset,
    train_recognition,
    write_dataset,
)
from .sac import SacTrainConfig, evaluate_policy_returns, sac_train
from .scenarios import SvoSpec, build_network


def _simulate_batch(cfg: RunConfig, n_episodes: int, seed: int) -> list[EpisodeLog]:
    setup = cfg.episode_setup()
    setup.network = build_network(cfg.scenario)
    return [run_episode(setup, seed=seed + i) for i in range(n_episodes)]


def cmd_write_config(args) -> int:
    write_reference_config(args.out)
    print(f"reference config written to {args.out}")
    return 0


def cmd_simulate(args, cfg: RunConfig) -> int:
    n = args.episodes if args.episodes is not None else cfg.n_episodes
    logs = _simulate_batch(cfg, n, cfg.seed)
    out_dir = export.ensure_dir(cfg.resolved_out_dir())
    export.write_logs(logs, os.path.join(out_dir, "logs"))
    metrics = metrics_from_logs(logs)
    export.write_metrics_table(
        [export.metrics_row(metrics, seed=cfg.seed)], os.path.join(out_dir, "metrics.csv")
    )
    print(
        f"simulated {n} episodes: success {metrics.success_rate:.1f}% "
        f"crash {metrics.crash_rate:.1f}% timeout {metrics.timeout_rate:.1f}% "
        f"speed {metrics.speed_score:.1f}%"
    )
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    logs = _simulate_batch(cfg, cfg.n_episodes, cfg.seed)
    metrics = metrics_from_logs(logs)
    out_dir = export.ensure_dir(cfg.resolved_out_dir())
    export.write_metrics_table(
        [export.metrics_row(metrics, seed=cfg.seed)], os.path.join(out_dir, "metrics.csv")
    )
    if metrics.per_tick_mde:
        export.plot_error_curve(
            {cfg.scenario.kind: metrics.per_tick_mde},
            os.path.join(out_dir, f"error_curve_{cfg.scenario.kind}.svg"),
        )
    line = (
        f"episodes {metrics.episodes} success {metrics.success_rate:.2f}±{metrics.success_se:.2f} "
        f"crash {metrics.crash_rate:.2f}±{metrics.crash_se:.2f} "
        f"speed {metrics.speed_score:.2f}±{metrics.speed_se:.2f}"
    )
    if metrics.mde is not None:
        line += f" mde {metrics.mde:.4f}±{metrics.mde_se:.4f}"
    print(line)
    return 0


def cmd_gen_data(args, cfg: RunConfig) -> int:
    setup = cfg.episode_setup()
    setup.network = build_network(cfg.scenario)
    spec = SampleSpec(
        start=cfg.dataset.sample_start,
        stride=cfg.dataset.sample_stride,
        agents_per_tick=cfg.dataset.agents_per_tick,
    )
    n = args.episodes if args.episodes is not None else cfg.dataset.episodes
    samples, _ = generate_samples(setup, n_episodes=n, seed=cfg.seed, sample_spec=spec)
    out = args.out or os.path.join(export.ensure_dir(cfg.resolved_out_dir()), "dataset.jsonl")
    count = write_dataset(
        out,
        {
            "scenario": cfg.scenario.kind,
            "n_episodes": n,
            "seed": cfg.seed,
            "digest": cfg.digest(),
        },
        samples,
    )
    print(f"wrote {count} samples from {n} episodes to {out}")
    return 0


def cmd_train_recog(args, cfg: RunConfig) -> int:
    _, samples = read_dataset(args.data)
    result = train_recognition(samples, cfg.train_config())
    out_dir = export.ensure_dir(cfg.resolved_out_dir())
    ckpt = args.out or os.path.join(out_dir, "recognition.ckpt")
    result.net.save(ckpt)
    export.write_metrics_table(result.history, os.path.join(out_dir, "recog_history.csv"))
    export.plot_training_curve(result.history, os.path.join(out_dir, "recog_history.svg"))
    print(
        f"trained on {len(samples)} samples; best epoch {result.best_epoch} "
        f"held-out mse {result.heldout_loss:.5f} mde {result.heldout_mde:.4f}; saved {ckpt}"
    )
    return 0


def cmd_train_sac(args, cfg: RunConfig) -> int:
    setup = cfg.episode_setup()
    setup.network = build_network(cfg.scenario)
    sac_cfg = SacTrainConfig(
        total_steps=cfg.sac.total_steps,
        start_steps=cfg.sac.start_steps,
        update_every=cfg.sac.update_every,
        updates_per_cycle=cfg.sac.updates_per_cycle,
        batch_size=cfg.sac.batch_size,
        buffer_size=cfg.sac.buffer_size,
        gamma=cfg.sac.gamma,
        lr=cfg.sac.lr,
        tau=cfg.sac.tau,
        init_alpha=cfg.sac.init_alpha,
        target_entropy=cfg.sac.target_entropy,
        net=cfg.sac.net,
        seed=cfg.seed,
    )
    result = sac_train(setup, sac_cfg, seed=cfg.seed)
    out_dir = export.ensure_dir(cfg.resolved_out_dir())
    ckpt = args.out or os.path.join(out_dir, "decision.ckpt")
    result.net.save(ckpt)
    export.write_metrics_table(
        [{"episode": i, "return": r} for i, r in enumerate(result.returns)],
        os.path.join(out_dir, "sac_returns.csv"),
    )
    print(
        f"sac trained {result.steps} env steps over {len(result.returns)} episodes; "
        f"saved {ckpt}"
    )
    return 0


def cmd_sweep_svo(args, cfg: RunConfig) -> int:
    grid = [float(x) for x in args.grid.split(",")]
    rows = []
    for svo in grid:
        sweep_cfg = dataclasses.replace(
            cfg,
            scenario=dataclasses.replace(cfg.scenario, svo=SvoSpec(dist="fixed", value=svo)),
        )
        logs = _simulate_batch(sweep_cfg, cfg.n_episodes, cfg.seed)
        rows.append(export.metrics_row(metrics_from_logs(logs), svo=svo))
        print(
            f"svo {svo:4.2f}: success {rows[-1]['success']:.2f} crash {rows[-1]['crash']:.2f} "
            f"speed {rows[-1]['speed']:.2f}"
        )
    out_dir = export.ensure_dir(cfg.resolved_out_dir())
    export.write_metrics_table(rows, os.path.join(out_dir, "svo_sweep.csv"))
    export.plot_svo_sweep(
        rows, os.path.join(out_dir, f"svo_sweep_{cfg.scenario.kind}.svg"), title=cfg.scenario.kind
    )
    return 0


def cmd_ablate(args, cfg: RunConfig) -> int:
    _, train_samples = read_dataset(args.data)
    eval_samples = None
    if args.eval_data:
        _, eval_samples = read_dataset(args.eval_data)
    rows = []
    curves = {}
    out_dir = export.ensure_dir(cfg.resolved_out_dir())
    for arch in (ARCH_FULL, ARCH_WO_MAP, ARCH_WO_ATTENTION):
        tc = cfg.train_config()
        tc = dataclasses.replace(tc, net=dataclasses.replace(tc.net, arch=arch))
        result = train_recognition(train_samples, tc)
        row = {
            "arch": arch,
            "heldout_mse": result.heldout_loss,
            "heldout_mde": result.heldout_mde,
            "best_epoch": result.best_epoch,
        }
        if eval_samples is not None:
            mse, mde = evaluate_samples(result.net, eval_samples)
            row["eval_mse"], row["eval_mde"] = mse, mde
            curves[arch] = per_tick_error_curve(result.net, eval_samples)
        result.net.save(os.path.join(out_dir, f"recognition_{arch}.ckpt"))
        rows.append(row)
        print(f"{arch}: held-out mde {row['heldout_mde']:.4f}")
    export.write_metrics_table(rows, os.path.join(out_dir, "ablation.csv"))
    if curves:
        export.plot_error_curve(
            curves, os.path.join(out_dir, f"ablation_{cfg.scenario.kind}.svg"), cfg.scenario.kind
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svodrive", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, needs_config=True):
        p = sub.add_parser(name)
        if needs_config:
            p.add_argument("--config", required=True, help="path to a YAML run config")
            p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.set_defaults(fn=fn, needs_config=needs_config)
        return p

    p = add("simulate", cmd_simulate)
    p.add_argument("--episodes", type=int, default=None)
    add("evaluate", cmd_evaluate)
    p = add("gen-data", cmd_gen_data)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--out", default=None)
    p = add("train-recog", cmd_train_recog)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p = add("train-sac", cmd_train_sac)
    p.add_argument("--out", default=None)
    p = add("sweep-svo", cmd_sweep_svo)
    p.add_argument("--grid", default="0,0.25,0.5,0.75,1.0")
    p = add("ablate", cmd_ablate)
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", default=None)
    p = add("write-config", cmd_write_config, needs_config=False)
    p.add_argument("--out", default="svodrive.yaml")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return 2 if err.code not in (0, None) else 0
    try:
        if not args.needs_config:
            return args.fn(args)
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        return args.fn(args, cfg)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except SvoDriveError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
