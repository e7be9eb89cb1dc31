"""Success / crash / speed metrics and recognition deviation errors,
computed purely from episode logs so persisted runs replay exactly."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .episode import EpisodeLog
from .simcore import FAILURE_CAUSES, SPEED_MAX


@dataclass
class Metrics:
    episodes: int
    success_rate: float
    crash_rate: float
    timeout_rate: float
    speed_score: float
    success_se: float
    crash_se: float
    timeout_se: float
    speed_se: float
    crash_causes: dict[str, float] = field(default_factory=dict)
    mde: float | None = None
    mde_se: float | None = None
    per_tick_mde: dict[int, float] = field(default_factory=dict)

    def row(self) -> dict[str, float]:
        out = {
            "episodes": self.episodes,
            "success": self.success_rate,
            "success_se": self.success_se,
            "crash": self.crash_rate,
            "crash_se": self.crash_se,
            "timeout": self.timeout_rate,
            "timeout_se": self.timeout_se,
            "speed": self.speed_score,
            "speed_se": self.speed_se,
        }
        for cause in FAILURE_CAUSES:
            out[f"crash_{cause}"] = self.crash_causes.get(cause, 0.0)
        if self.mde is not None:
            out["mde"] = self.mde
            out["mde_se"] = self.mde_se
        return out


def _mean_se(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return 0.0, 0.0
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))


def metrics_from_logs(logs: list[EpisodeLog]) -> Metrics:
    """Aggregate over episodes; every agent-episode is counted exactly once
    as success, crash(cause) or timeout."""
    success, crash, timeout, speed = [], [], [], []
    cause_counts = {c: 0 for c in FAILURE_CAUSES}
    agent_total = 0
    mde_values = []
    tick_abs: dict[int, list[float]] = {}
    for log in logs:
        n = log.n_agents
        agent_total += n
        n_success = sum(1 for o in log.outcomes.values() if o["result"] == "success")
        n_crash = sum(1 for o in log.outcomes.values() if o["result"] == "crash")
        n_timeout = n - n_success - n_crash
        for o in log.outcomes.values():
            if o["result"] == "crash":
                cause_counts[o["cause"]] += 1
        success.append(100.0 * n_success / n)
        crash.append(100.0 * n_crash / n)
        timeout.append(100.0 * n_timeout / n)
        tick_speeds = [
            s[3] for t in log.ticks for s in t.states.values()
        ]
        speed.append(100.0 * float(np.mean(tick_speeds)) / SPEED_MAX if tick_speeds else 0.0)

        errs = []
        for t in log.ticks:
            for agent_id, est in t.estimates.items():
                for neighbor_id, value in est.items():
                    err = abs(value - log.svos[neighbor_id])
                    errs.append(err)
                    tick_abs.setdefault(t.tick, []).append(err)
        if errs:
            mde_values.append(float(np.mean(errs)))

    s_m, s_se = _mean_se(success)
    c_m, c_se = _mean_se(crash)
    t_m, t_se = _mean_se(timeout)
    v_m, v_se = _mean_se(speed)
    mde_m, mde_se = (None, None)
    if mde_values:
        mde_m, mde_se = _mean_se(mde_values)
    return Metrics(
        episodes=len(logs),
        success_rate=s_m,
        crash_rate=c_m,
        timeout_rate=t_m,
        speed_score=v_m,
        success_se=s_se,
        crash_se=c_se,
        timeout_se=t_se,
        speed_se=v_se,
        crash_causes={
            c: (100.0 * n / agent_total if agent_total else 0.0) for c, n in cause_counts.items()
        },
        mde=mde_m,
        mde_se=mde_se,
        per_tick_mde={t: float(np.mean(v)) for t, v in sorted(tick_abs.items())},
    )
