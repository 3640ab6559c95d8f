"""Thin foreign-function layer over the avcsim voltage-control environment.

External trainers construct a handle from a JSON config file, then drive
``reset(seed)`` / ``step(actions)``. Observations cross the boundary as flat
float64 arrays, one per agent, in the documented layout

    [p_load | q_load | v | theta | pv_p | pv_q_prev]   (layout version 1)

over the agent's region. Rewards and info values are the native environment's
numbers unchanged. Semantic versioning of this package tracks the layout
version.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from avcsim.harness import RunSpec, build_environment, controlled_mask
from avcsim.metrics import EpisodeRecord, write_record

__version__ = "1.0.0"
LAYOUT_VERSION = 1

_CONFIG_KEYS = {
    "case": "case_path",
    "profiles": "profiles_dir",
    "controller": None,  # accepted in run configs; irrelevant to the binding
    "barrier": "barrier",
    "episodes": None,
    "seed": "seed",
    "out": None,
    "alpha": "alpha",
    "episode_length": "episode_length",
    "data_noise_sigma": "data_noise_sigma",
    "obs_noise_sigma": "obs_noise_sigma",
    "offset_mode": "offset_mode",
    "droop_mode": None,
}


@dataclass(frozen=True)
class SpaceDescriptor:
    """Shapes a trainer needs to wire its networks and action squashing."""

    n_agents: int
    observation_sizes: tuple[int, ...]  # per agent, in agent-id order
    action_low: float
    action_high: float
    episode_length: int
    layout_version: int = LAYOUT_VERSION


class BindingError(Exception):
    pass


class EnvHandle:
    """Owns one environment instance; not safe to share across workers."""

    def __init__(self, run_spec: RunSpec):
        self._env = build_environment(run_spec)
        self._spec = run_spec
        self._closed = False
        self._trace: list[dict] = []
        self._last_seed: int | None = None

    # -- spaces ---------------------------------------------------------------

    def space(self) -> SpaceDescriptor:
        self._check_open()
        env = self._env
        return SpaceDescriptor(
            n_agents=env.n_agents,
            observation_sizes=env.observation_sizes(),
            action_low=-env.action_bound,
            action_high=env.action_bound,
            episode_length=self._spec.episode_length,
        )

    # -- episode control --------------------------------------------------------

    def reset(self, seed: int) -> list[np.ndarray]:
        self._check_open()
        observations = self._env.reset(seed=seed)
        self._trace = []
        self._last_seed = int(seed)
        return self._flatten(observations)

    def step(
        self, actions: Sequence[float]
    ) -> tuple[list[np.ndarray], float, bool, dict]:
        self._check_open()
        result = self._env.step(np.asarray(actions, dtype=np.float64))
        state = result.info["grid_state"]
        if result.info["safety_violation"]:
            q_pv = self._env.current_q()
            loss = state.total_loss
        else:
            q_pv = np.asarray(result.info["q_pv_mvar"], dtype=np.float64)
            loss = result.info["total_loss_mw"]
        info = {
            "v": np.asarray(state.v, dtype=np.float64).copy(),
            "theta": np.asarray(state.theta, dtype=np.float64).copy(),
            "q_pv": np.asarray(q_pv, dtype=np.float64).copy(),
            "total_loss_mw": float(loss),
            "safety_violation": bool(result.info["safety_violation"]),
        }
        self._trace.append(
            {
                "v": info["v"],
                "q_pv": info["q_pv"],
                "actions": np.asarray(actions, dtype=np.float64).copy(),
                "reward": float(result.reward),
                "total_loss": float(loss),
                "safety": info["safety_violation"],
            }
        )
        return (
            self._flatten(result.observations),
            float(result.reward),
            bool(result.terminated),
            info,
        )

    def export_record(self, path: str | Path, controller: str = "external") -> None:
        """Persist the current episode's trajectory in the native record format."""
        self._check_open()
        if not self._trace:
            raise BindingError("nothing to export: no steps taken since reset")
        case = self._env.case
        record = EpisodeRecord(
            case_name=case.name,
            controller=controller,
            barrier=self._spec.barrier,
            seed=self._last_seed if self._last_seed is not None else -1,
            window_start=self._env.episode_window()[0],
            bus_labels=tuple(case.bus_labels()),
            controlled_mask=controlled_mask(case),
            v_ref=case.v_ref,
            v=np.vstack([row["v"] for row in self._trace]),
            q_pv=np.vstack([row["q_pv"] for row in self._trace]),
            actions=np.vstack([row["actions"] for row in self._trace]),
            rewards=np.array([row["reward"] for row in self._trace]),
            total_loss=np.array([row["total_loss"] for row in self._trace]),
            safety=np.array([row["safety"] for row in self._trace], dtype=bool),
        )
        write_record(record, path)

    def close(self) -> None:
        self._closed = True
        self._env = None  # type: ignore[assignment]

    # -- internals ---------------------------------------------------------------

    def _check_open(self) -> None:
        if self._closed:
            raise BindingError("handle is closed")

    def _flatten(self, observations) -> list[np.ndarray]:
        return [
            np.asarray(observations[aid].as_vector(), dtype=np.float64)
            for aid in self._env.agent_ids
        ]


def make(config_path: str | Path) -> EnvHandle:
    """Construct a handle from a JSON config mirroring the harness run flags.

    Required keys: ``case`` (case document path) and ``profiles`` (profile
    bundle directory); optional keys match the CLI run flags (``barrier``,
    ``alpha``, ``episode_length``, noise sigmas, ``offset_mode``, ``seed``).
    Validation failures surface the native error messages.
    """
    config_path = Path(config_path)
    if not config_path.is_file():
        raise BindingError(f"config file not found: {config_path}")
    try:
        raw = json.loads(config_path.read_text())
    except json.JSONDecodeError as exc:
        raise BindingError(f"malformed config: {exc}") from exc
    unknown = set(raw) - set(_CONFIG_KEYS)
    if unknown:
        raise BindingError(f"unknown config keys: {sorted(unknown)}")
    if "case" not in raw or "profiles" not in raw:
        raise BindingError("config must name 'case' and 'profiles'")
    fields = {}
    for key, target in _CONFIG_KEYS.items():
        if target is not None and key in raw:
            fields[target] = raw[key]
    # paths are resolved relative to the config file
    for key in ("case_path", "profiles_dir"):
        fields[key] = str((config_path.parent / fields[key]).resolve())
    return EnvHandle(RunSpec(**fields))
