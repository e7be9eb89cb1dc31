"""Persistence of runs: metric tables (CSV), episode logs, vector plots."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .episode import EpisodeLog
from .errors import SvoDriveError
from .metrics import Metrics


def ensure_dir(path) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as err:
        raise SvoDriveError(f"cannot create output directory {path}: {err}") from err
    return path


def write_logs(logs: list[EpisodeLog], out_dir) -> list[str]:
    ensure_dir(out_dir)
    paths = []
    for i, log in enumerate(logs):
        path = os.path.join(out_dir, f"episode_{i:05d}.log")
        try:
            log.dump(path)
        except OSError as err:
            raise SvoDriveError(f"cannot write log {path}: {err}") from err
        paths.append(path)
    return paths


def read_logs(out_dir) -> list[EpisodeLog]:
    names = sorted(n for n in os.listdir(out_dir) if n.startswith("episode_") and n.endswith(".log"))
    return [EpisodeLog.read(os.path.join(out_dir, n)) for n in names]


def write_metrics_table(rows: list[dict], path) -> None:
    """Delimiter-separated metrics; one row per evaluated configuration."""
    keys: list[str] = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    try:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=keys, restval="")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    except OSError as err:
        raise SvoDriveError(f"cannot write table {path}: {err}") from err


def read_metrics_table(path) -> list[dict]:
    rows = []
    with open(path, newline="") as f:
        for raw in csv.DictReader(f):
            row = {}
            for k, v in raw.items():
                if v == "":
                    continue
                try:
                    row[k] = int(v)
                except ValueError:
                    try:
                        row[k] = float(v)
                    except ValueError:
                        row[k] = v
            rows.append(row)
    return rows


def metrics_row(metrics: Metrics, **extra) -> dict:
    row = dict(extra)
    row.update(metrics.row())
    return row


def plot_error_curve(curves: dict[str, dict[int, float]], path, title: str = "") -> str:
    """Per-tick mean deviation error, one line per labelled variant."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for label, curve in curves.items():
        ticks = sorted(curve)
        ax.plot(ticks, [curve[t] for t in ticks], label=label)
    ax.set_xlabel("time step")
    ax.set_ylabel("mean deviation error")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return str(path)


def plot_svo_sweep(rows: list[dict], path, title: str = "") -> str:
    """Success / crash rates against the fixed all-agent SVO."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    svos = [r["svo"] for r in rows]
    for key, style in (("success", "o-"), ("crash", "s--")):
        ax.errorbar(
            svos,
            [r[key] for r in rows],
            yerr=[r.get(f"{key}_se", 0.0) for r in rows],
            fmt=style,
            capsize=3,
            label=key,
        )
    ax.set_xlabel("fixed SVO")
    ax.set_ylabel("% of agent episodes")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return str(path)


def plot_training_curve(history: list[dict], path, keys=("train_loss", "heldout_loss")) -> str:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    epochs = [h["epoch"] for h in history]
    for key in keys:
        ax.plot(epochs, [h[key] for h in history], label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return str(path)
