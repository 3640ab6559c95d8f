"""Runs controllers against environments and aggregates the metric suite."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .controllers import make_policy
from .env import EnvConfig, VoltageControlEnv
from .metrics import (
    AggregateReport,
    EpisodeRecord,
    MetricsReport,
    metric_extended,
    write_record,
)
from .network import NetworkCase, load_case
from .profiles import load_bundle
from .reward import BarrierSpec, RewardSpec


@dataclass(frozen=True)
class RunSpec:
    """Everything one evaluation run needs; mirrors the CLI flags."""

    case_path: str
    profiles_dir: str
    controller: str = "none"
    barrier: str = "l1"
    episodes: int = 1
    seed: int = 0
    alpha: float = 0.1
    episode_length: int = 240
    day_buffer: int = 480
    obs_noise_sigma: float = 0.0
    data_noise_sigma: float = 0.01
    offset_mode: str = "uniform"
    pf_seed: int | None = None
    droop_mode: str = "fixed-point"  # or "one-step-lag"
    # controller parameters (config-file keys, no dedicated CLI flags)
    droop_v_ref: float = 1.0
    droop_deadband: float = 0.0
    droop_slope: float | None = None  # None: q_max / 0.05
    opf_tolerance: float = 1e-5
    opf_max_sweeps: int = 200

    def policy_options(self) -> dict:
        """Keyword arguments for make_policy matching this run's controller."""
        if self.controller == "droop":
            from .controllers import DroopParams

            return {
                "droop": DroopParams(
                    v_ref=self.droop_v_ref,
                    deadband_halfwidth=self.droop_deadband,
                    slope=self.droop_slope,
                ),
                "fixed_point": self.droop_mode == "fixed-point",
            }
        if self.controller == "opf":
            return {
                "coordinate_tolerance": self.opf_tolerance,
                "max_sweeps": self.opf_max_sweeps,
            }
        return {}


def build_environment(spec: RunSpec) -> VoltageControlEnv:
    case = load_case(spec.case_path)
    store, case = load_bundle(case, spec.profiles_dir, pf_seed=spec.pf_seed)
    reward_spec = RewardSpec(barrier=BarrierSpec(shape=spec.barrier), alpha=spec.alpha)
    config = EnvConfig(
        case=case,
        store=store,
        reward=reward_spec,
        episode_length=spec.episode_length,
        day_buffer=spec.day_buffer,
        obs_noise_sigma=spec.obs_noise_sigma,
        data_noise_sigma=spec.data_noise_sigma,
        seed=spec.seed,
        offset_mode=spec.offset_mode,
    )
    return VoltageControlEnv(config)


def controlled_mask(case: NetworkCase) -> tuple[bool, ...]:
    """Buses whose voltages count toward the metrics: everything but the slack."""
    return tuple(b.index != case.slack_bus for b in case.buses)


def rollout_episode(
    env: VoltageControlEnv,
    policy,
    seed: int,
    *,
    controller_name: str | None = None,
    barrier_name: str = "l1",
) -> EpisodeRecord:
    """Run one episode to termination and collect its record."""
    case = env.case
    obs = env.reset(seed)
    policy.begin_episode(env, seed)
    window_start, _ = env.episode_window()

    v_rows, q_rows, a_rows, rewards, losses, safety = [], [], [], [], [], []
    while True:
        actions = policy.act(env, obs)
        result = env.step(actions)
        state = result.info["grid_state"]
        v_rows.append(np.asarray(state.v, dtype=float))
        if result.info["safety_violation"]:
            q_rows.append(env.current_q())
            losses.append(state.total_loss)
        else:
            q_rows.append(np.asarray(result.info["q_pv_mvar"], dtype=float))
            losses.append(result.info["total_loss_mw"])
        a_rows.append(np.asarray(actions, dtype=float))
        rewards.append(result.reward)
        safety.append(result.info["safety_violation"])
        obs = result.observations
        if result.terminated:
            break

    return EpisodeRecord(
        case_name=case.name,
        controller=controller_name or getattr(policy, "name", "custom"),
        barrier=barrier_name,
        seed=seed,
        window_start=window_start,
        bus_labels=tuple(case.bus_labels()),
        controlled_mask=controlled_mask(case),
        v_ref=case.v_ref,
        v=np.vstack(v_rows),
        q_pv=np.vstack(q_rows),
        actions=np.vstack(a_rows),
        rewards=np.asarray(rewards, dtype=float),
        total_loss=np.asarray(losses, dtype=float),
        safety=np.asarray(safety, dtype=bool),
    )


def run_eval(
    env: VoltageControlEnv,
    controller: str,
    episodes: int,
    seeds: Sequence[int] | None = None,
    *,
    base_seed: int = 0,
    barrier_name: str = "l1",
    out_dir: str | Path | None = None,
    policy_options: dict | None = None,
) -> tuple[AggregateReport, list[EpisodeRecord], list[MetricsReport]]:
    """Evaluate a controller over seeded episodes; deterministic per seed.

    Episode seeds default to ``base_seed + i``. Records are reduced in seed
    order regardless of execution order, and optionally persisted to
    ``out_dir`` as one line-delimited file per episode.
    """
    if seeds is None:
        seeds = [base_seed + i for i in range(episodes)]
    else:
        seeds = list(seeds)
        if len(seeds) != episodes:
            raise ValueError("seed list length must equal episode count")
    policy = make_policy(controller, seed=base_seed, **(policy_options or {}))
    records = []
    for seed in seeds:
        records.append(
            rollout_episode(
                env, policy, seed, controller_name=controller, barrier_name=barrier_name
            )
        )
    records.sort(key=lambda r: r.seed)
    reports = [metric_extended(r) for r in records]
    aggregate = AggregateReport.from_reports(reports)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, record in enumerate(records):
            write_record(record, out / f"episode_{i:04d}_seed_{record.seed}.jsonl")
    return aggregate, records, reports


def summary_csv(aggregate: AggregateReport, controller: str, barrier: str) -> str:
    """One-row CSV named after the test-table columns."""
    header = [
        "method",
        "barrier",
        "episodes",
        "pct_v_out_of_control",
        "pct_v_below",
        "pct_v_above",
        "pct_cr",
        "v_dev",
        "v_dev_std",
        "max_v_drop_dev",
        "max_v_drop_dev_std",
        "max_v_rise_dev",
        "max_v_rise_dev_std",
        "pl",
        "pl_std",
        "ql",
        "ql_std",
    ]
    m = aggregate.metrics
    row = [
        controller,
        barrier,
        str(aggregate.episodes),
        f"{100 * m['pct_out']:.6f}",
        f"{100 * m['pct_below']:.6f}",
        f"{100 * m['pct_above']:.6f}",
        f"{100 * m['cr']:.6f}",
        f"{m['v_dev_mean']:.6f}",
        f"{m['v_dev_mean_std']:.6f}",
        f"{m['max_drop_dev']:.6f}",
        f"{m['max_drop_dev_std']:.6f}",
        f"{m['max_rise_dev']:.6f}",
        f"{m['max_rise_dev_std']:.6f}",
        f"{m['pl_mean']:.6f}",
        f"{m['pl_mean_std']:.6f}",
        f"{m['ql_mean']:.6f}",
        f"{m['ql_mean_std']:.6f}",
    ]
    return ",".join(header) + "\n" + ",".join(row) + "\n"
