"""Episode records, the evaluation metrics, and their file format.

Records serialize as line-delimited JSON: a metadata line followed by one
line per step (t, v vector, actions, applied q, reward, loss, safety flag).
Metric recomputation from a persisted file equals the online values exactly.

Standard deviations use the population convention (divide by N).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

V_LOW = 0.95
V_HIGH = 1.05


@dataclass(frozen=True)
class EpisodeRecord:
    case_name: str
    controller: str
    barrier: str
    seed: int
    window_start: int
    bus_labels: tuple[int, ...]
    controlled_mask: tuple[bool, ...]  # per bus; slack (and held buses) False
    v_ref: float
    v: np.ndarray  # (steps, n_buses)
    q_pv: np.ndarray  # (steps, n_agents)
    actions: np.ndarray  # (steps, n_agents)
    rewards: np.ndarray  # (steps,)
    total_loss: np.ndarray  # (steps,) MW
    safety: np.ndarray  # (steps,) bool

    def __post_init__(self) -> None:
        steps = len(self.rewards)
        if not (
            self.v.shape[0] == steps
            and self.q_pv.shape[0] == steps
            and self.actions.shape[0] == steps
            and len(self.total_loss) == steps
            and len(self.safety) == steps
        ):
            raise ValueError("per-step arrays disagree on step count")
        if self.v.shape[1] != len(self.bus_labels):
            raise ValueError("v columns do not match bus labels")

    @property
    def steps(self) -> int:
        return len(self.rewards)

    def controlled_v(self) -> np.ndarray:
        mask = np.asarray(self.controlled_mask, dtype=bool)
        return self.v[:, mask]


@dataclass(frozen=True)
class MetricsReport:
    cr: float
    pl_mean: float
    pl_std: float
    vr: float
    ql_mean: float
    pct_out: float
    pct_below: float
    pct_above: float
    v_dev_mean: float
    max_drop_dev: float
    max_rise_dev: float

    def as_dict(self) -> dict:
        return {
            "pct_v_out_of_control": self.pct_out,
            "pct_v_below": self.pct_below,
            "pct_v_above": self.pct_above,
            "pct_cr": self.cr,
            "v_dev": self.v_dev_mean,
            "max_v_drop_dev": self.max_drop_dev,
            "max_v_rise_dev": self.max_rise_dev,
            "pl": self.pl_mean,
            "pl_std": self.pl_std,
            "ql": self.ql_mean,
            "vr": self.vr,
        }


def _require_steps(record: EpisodeRecord) -> None:
    if record.steps == 0:
        raise ValueError("empty episode record")


def metric_cr(record: EpisodeRecord) -> float:
    """Fraction of steps with every controlled bus inside [0.95, 1.05]."""
    _require_steps(record)
    v = record.controlled_v()
    ok = np.all((v >= V_LOW) & (v <= V_HIGH), axis=1)
    return float(ok.mean())


def metric_pl(record: EpisodeRecord) -> tuple[float, float]:
    """(mean, population std) of per-step total loss, MW."""
    _require_steps(record)
    return float(record.total_loss.mean()), float(record.total_loss.std())


def metric_vr(record: EpisodeRecord) -> float:
    """Mean over steps of the fraction of controlled buses out of range."""
    _require_steps(record)
    v = record.controlled_v()
    out = (v < V_LOW) | (v > V_HIGH)
    return float(out.mean(axis=1).mean())


def metric_ql(record: EpisodeRecord) -> float:
    """Mean over steps of the per-agent mean |q|, MVAr."""
    _require_steps(record)
    return float(np.abs(record.q_pv).mean(axis=1).mean())


def metric_extended(record: EpisodeRecord) -> MetricsReport:
    """All per-episode metrics, including the extended test-table quantities."""
    _require_steps(record)
    v = record.controlled_v()
    below = v < V_LOW
    above = v > V_HIGH
    pl_mean, pl_std = metric_pl(record)
    return MetricsReport(
        cr=metric_cr(record),
        pl_mean=pl_mean,
        pl_std=pl_std,
        vr=metric_vr(record),
        ql_mean=metric_ql(record),
        pct_out=float((below | above).mean(axis=1).mean()),
        pct_below=float(below.mean(axis=1).mean()),
        pct_above=float(above.mean(axis=1).mean()),
        v_dev_mean=float(np.abs(v - record.v_ref).mean()),
        max_drop_dev=float(np.maximum(V_LOW - v, 0.0).max(axis=1).mean()),
        max_rise_dev=float(np.maximum(v - V_HIGH, 0.0).max(axis=1).mean()),
    )


# -- record files ------------------------------------------------------------


def write_record(record: EpisodeRecord, path: str | Path) -> None:
    path = Path(path)
    meta = {
        "case": record.case_name,
        "controller": record.controller,
        "barrier": record.barrier,
        "seed": record.seed,
        "window_start": record.window_start,
        "bus_labels": list(record.bus_labels),
        "controlled_mask": [bool(x) for x in record.controlled_mask],
        "v_ref": record.v_ref,
    }
    lines = [json.dumps({"meta": meta})]
    for t in range(record.steps):
        lines.append(
            json.dumps(
                {
                    "t": t,
                    "v": [float(x) for x in record.v[t]],
                    "actions": [float(x) for x in record.actions[t]],
                    "q_pv": [float(x) for x in record.q_pv[t]],
                    "reward": float(record.rewards[t]),
                    "total_loss": float(record.total_loss[t]),
                    "safety": bool(record.safety[t]),
                }
            )
        )
    path.write_text("\n".join(lines) + "\n")


def read_record(path: str | Path) -> EpisodeRecord:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty record file")
    head = json.loads(lines[0])
    if "meta" not in head:
        raise ValueError(f"{path}: first line is not a metadata record")
    meta = head["meta"]
    v, actions, q_pv, rewards, losses, safety = [], [], [], [], [], []
    for line in lines[1:]:
        row = json.loads(line)
        v.append(row["v"])
        actions.append(row["actions"])
        q_pv.append(row["q_pv"])
        rewards.append(row["reward"])
        losses.append(row["total_loss"])
        safety.append(row["safety"])
    n_agents = len(q_pv[0]) if q_pv else 0
    return EpisodeRecord(
        case_name=meta["case"],
        controller=meta["controller"],
        barrier=meta["barrier"],
        seed=int(meta["seed"]),
        window_start=int(meta["window_start"]),
        bus_labels=tuple(meta["bus_labels"]),
        controlled_mask=tuple(bool(x) for x in meta["controlled_mask"]),
        v_ref=float(meta["v_ref"]),
        v=np.array(v, dtype=float).reshape(len(rewards), len(meta["bus_labels"])),
        q_pv=np.array(q_pv, dtype=float).reshape(len(rewards), n_agents),
        actions=np.array(actions, dtype=float).reshape(len(rewards), n_agents),
        rewards=np.array(rewards, dtype=float),
        total_loss=np.array(losses, dtype=float),
        safety=np.array(safety, dtype=bool),
    )


@dataclass(frozen=True)
class AggregateReport:
    """Across-episode aggregation: mean for ratios, mean ± std for the rest."""

    episodes: int
    metrics: dict = field(default_factory=dict)

    @staticmethod
    def from_reports(reports: list[MetricsReport]) -> "AggregateReport":
        if not reports:
            raise ValueError("no episode reports to aggregate")

        def agg(values: list[float]) -> tuple[float, float]:
            arr = np.asarray(values)
            return float(arr.mean()), float(arr.std())

        ratio_fields = ("cr", "vr", "pct_out", "pct_below", "pct_above")
        continuous_fields = ("pl_mean", "ql_mean", "v_dev_mean", "max_drop_dev", "max_rise_dev")
        metrics: dict = {}
        for name in ratio_fields:
            metrics[name] = float(
                np.mean([getattr(r, name) for r in reports])
            )
        for name in continuous_fields:
            mean, std = agg([getattr(r, name) for r in reports])
            metrics[name] = mean
            metrics[name + "_std"] = std
        return AggregateReport(episodes=len(reports), metrics=metrics)
