"""Episode engine for distributed active voltage control.

Each control step maps agent action ratios to PV reactive power, solves the
power flow at the current profile snapshot, applies the safety backtrack rule
on solver failure, then advances the 3-minute profile clock and emits
region-restricted observations and the shared reward.

The settling interval between applying reactive power and the next load
change is treated as instantaneous: power flow is solved within the step,
then the clock moves one interval.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .network import NetworkCase, PvUnit, Region
from .powerflow import (
    GridState,
    InjectionSet,
    branch_apparent_flows,
    solve_power_flow,
)
from .profiles import (
    PV_ACTIVE,
    ProfileStore,
    STEPS_PER_DAY,
    noisy_read,
    validate_store,
)
from .reward import RewardSpec, reward as compute_reward

log = logging.getLogger(__name__)

# Sub-stream tags for seed derivation.
_STREAM_RESET = 0
_STREAM_DATA = 1
_STREAM_OBS = 2


def action_to_reactive(
    a: float, p_pv: float, s_max: float, bound: float | None = None
) -> float:
    """Map an action ratio to reactive power: q = a * sqrt(s_max² - p_pv²).

    The reachable range shrinks with the instantaneous active output; at
    night (p_pv = 0) the full rating is available (STATCOM mode). Ratios
    outside ±bound are clamped with a logged warning.
    """
    if bound is not None and abs(a) > bound:
        log.warning("action %.4f outside [-%g, %g]; clamped", a, bound, bound)
        a = math.copysign(bound, a)
    head = s_max * s_max - p_pv * p_pv
    return a * math.sqrt(head) if head > 0 else 0.0


@dataclass(frozen=True)
class EnvConfig:
    case: NetworkCase
    store: ProfileStore
    reward: RewardSpec = RewardSpec()
    episode_length: int = 240
    day_buffer: int = STEPS_PER_DAY
    control_interval: int = 1
    obs_noise_sigma: float = 0.0
    data_noise_sigma: float = 0.01
    gamma: float = 0.99  # carried for learning clients; unused internally
    seed: int = 0
    offset_mode: str = "uniform"  # "uniform" | "fixed" episode start in the day

    def __post_init__(self) -> None:
        if self.episode_length <= 0:
            raise ValueError("episode_length must be positive")
        if self.episode_length > self.day_buffer:
            raise ValueError("episode_length must not exceed day_buffer")
        if self.offset_mode not in ("uniform", "fixed"):
            raise ValueError("offset_mode must be 'uniform' or 'fixed'")
        if self.obs_noise_sigma < 0 or self.data_noise_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")


@dataclass(frozen=True)
class Observation:
    """One agent's view: the measures of its region, possibly noise-perturbed.

    ``as_vector`` flattens to [p_load | q_load | v | theta | pv_p | pv_q_prev]
    over the region's sorted buses and sorted PV agents (layout version 1).
    """

    agent_id: int
    region_id: int
    buses: tuple[int, ...]
    p_load: np.ndarray
    q_load: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    pv_agent_ids: tuple[int, ...]
    pv_p: np.ndarray
    pv_q_prev: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.p_load, self.q_load, self.v, self.theta, self.pv_p, self.pv_q_prev]
        )

    def size(self) -> int:
        return 4 * len(self.buses) + 2 * len(self.pv_agent_ids)


@dataclass(frozen=True)
class StepResult:
    observations: Mapping[int, Observation]
    reward: float
    terminated: bool
    info: dict


@dataclass(frozen=True)
class _Snapshot:
    """Noisy profile readings at one absolute step index (MW / MVAr)."""

    p_load: Mapping[int, float]
    q_load: Mapping[int, float]
    p_pv: Mapping[int, float]  # agent_id -> MW


class VoltageControlEnv:
    """One episode owner; instances are independent and not thread-shared."""

    def __init__(self, config: EnvConfig):
        validate_store(config.store, config.case)
        self.config = config
        self.case = config.case
        self.store = config.store
        self._agents: tuple[PvUnit, ...] = self.case.agents()
        self._regions: tuple[Region, ...] = tuple(
            sorted(self.case.regions, key=lambda r: r.id)
        )
        self._region_buses = {
            r.id: tuple(sorted(r.bus_set)) for r in self._regions
        }
        self._region_agents = {
            r.id: tuple(u for u in self._agents if u.region_id == r.id)
            for r in self._regions
        }
        self._load_buses = {ld.bus for ld in self.case.loads}
        # branch-overload safety trips only when the case carries ratings
        self._rated_branches = [
            (k, br.rating_mva)
            for k, br in enumerate(self.case.branches)
            if br.rating_mva is not None
        ]
        n_total = self.store.n_steps()
        if n_total < config.day_buffer:
            raise ValueError(
                f"profiles cover {n_total} steps; need at least {config.day_buffer}"
            )
        self._n_days = n_total // config.day_buffer
        self._episode_seed: int | None = None
        self._terminated = True
        self._clock = 0
        self._window_start = 0
        self._steps_done = 0
        self._q_prev: np.ndarray | None = None
        self._grid_state: GridState | None = None
        self._observations: dict[int, Observation] | None = None
        self._snapshot_cache: tuple[int, _Snapshot] | None = None

    # -- public API ----------------------------------------------------------

    @property
    def n_agents(self) -> int:
        return len(self._agents)

    @property
    def agent_ids(self) -> tuple[int, ...]:
        return tuple(u.agent_id for u in self._agents)

    @property
    def action_bound(self) -> float:
        return self.case.action_bound

    def observation_sizes(self) -> tuple[int, ...]:
        sizes = []
        for unit in self._agents:
            buses = self._region_buses[unit.region_id]
            pvs = self._region_agents[unit.region_id]
            sizes.append(4 * len(buses) + 2 * len(pvs))
        return tuple(sizes)

    def reset(self, seed: int | None = None) -> dict[int, Observation]:
        """Start a new episode: sample the day window, the start offset, and
        the initial reactive setpoints; solve the initial power flow."""
        self._episode_seed = int(self.config.seed if seed is None else seed)
        rng = self._rng(_STREAM_RESET, 0)
        cfg = self.config
        day = int(rng.integers(self._n_days))
        max_offset = cfg.day_buffer - cfg.episode_length
        if cfg.offset_mode == "uniform" and max_offset > 0:
            offset = int(rng.integers(max_offset))
        else:
            offset = 0
        self._window_start = day * cfg.day_buffer
        self._clock = self._window_start + offset
        self._steps_done = 0
        self._terminated = False
        self._snapshot_cache = None

        snap = self._snapshot(self._clock)
        q0 = np.empty(self.n_agents)
        for k, unit in enumerate(self._agents):
            q_max = self._q_capacity(unit, snap.p_pv[unit.agent_id])
            bound = self.case.action_bound * q_max
            q0[k] = rng.uniform(-bound, bound)
        self._q_prev = q0
        state = solve_power_flow(self.case, self._injections(snap, q0))
        if not state.converged:
            raise RuntimeError("initial power flow did not converge")
        self._grid_state = state
        self._observations = self._observe_all(state, snap, q0, self._clock)
        return dict(self._observations)

    def step(self, actions: Sequence[float]) -> StepResult:
        """Apply one joint action; see the module docstring for the sequence."""
        if self._terminated or self._grid_state is None or self._q_prev is None:
            raise RuntimeError("step() on a terminated or unreset episode")
        acts = np.asarray(actions, dtype=float)
        if acts.shape != (self.n_agents,):
            raise ValueError(
                f"expected {self.n_agents} actions, got shape {acts.shape}"
            )
        snap = self._snapshot(self._clock)
        q = np.array(
            [
                action_to_reactive(
                    float(acts[k]),
                    snap.p_pv[unit.agent_id],
                    unit.s_max,
                    bound=self.case.action_bound,
                )
                for k, unit in enumerate(self._agents)
            ]
        )
        state = solve_power_flow(self.case, self._injections(snap, q))

        overload = None
        if state.converged and self._rated_branches:
            flows = branch_apparent_flows(self.case, state.v, state.theta)
            for k, rating in self._rated_branches:
                if flows[k] > rating:
                    overload = self.case.branches[k]
                    break
        if not state.converged or overload is not None:
            # Safety backtrack: the network rejected the operating point.
            self._terminated = True
            assert self._observations is not None
            return StepResult(
                observations=dict(self._observations),
                reward=self.config.reward.safety_penalty,
                terminated=True,
                info={
                    "grid_state": self._grid_state,
                    "safety_violation": True,
                    "safety_kind": (
                        "divergence"
                        if not state.converged
                        else f"branch {overload.from_bus}-{overload.to_bus} overload"
                    ),
                    "diverged_state": state,
                    "step": self._steps_done,
                },
            )

        self._grid_state = state
        self._q_prev = q
        self._steps_done += 1
        self._terminated = self._steps_done >= self.config.episode_length
        self._clock += self.config.control_interval
        next_snap = self._snapshot(self._clock)
        self._observations = self._observe_all(state, next_snap, q, self._clock)

        r = compute_reward(self.config.reward, state.v, q)
        v_ctl = self._controlled_voltages(state)
        info = {
            "grid_state": state,
            "safety_violation": False,
            "step": self._steps_done,
            "total_loss_mw": state.total_loss,
            "q_pv_mvar": q.copy(),
            "p_pv_mw": np.array([snap.p_pv[u.agent_id] for u in self._agents]),
            "v_min": float(v_ctl.min()),
            "v_max": float(v_ctl.max()),
            "n_out_of_range": int(np.sum((v_ctl < 0.95) | (v_ctl > 1.05))),
        }
        return StepResult(
            observations=dict(self._observations),
            reward=r,
            terminated=self._terminated,
            info=info,
        )

    def observe(self, agent_id: int) -> Observation:
        if self._observations is None:
            raise RuntimeError("environment has not been reset")
        try:
            return self._observations[agent_id]
        except KeyError:
            raise ValueError(f"unknown agent {agent_id}") from None

    def state_snapshot(self) -> dict:
        """Everything needed to restore the episode mid-flight."""
        return {
            "seed": self._episode_seed,
            "clock": self._clock,
            "window_start": self._window_start,
            "steps_done": self._steps_done,
            "terminated": self._terminated,
            "q_prev": None if self._q_prev is None else self._q_prev.copy(),
            "grid_state": self._grid_state,
            "observations": None
            if self._observations is None
            else dict(self._observations),
        }

    def restore_snapshot(self, snap: dict) -> None:
        self._episode_seed = snap["seed"]
        self._clock = snap["clock"]
        self._window_start = snap["window_start"]
        self._steps_done = snap["steps_done"]
        self._terminated = snap["terminated"]
        self._q_prev = None if snap["q_prev"] is None else snap["q_prev"].copy()
        self._grid_state = snap["grid_state"]
        self._observations = (
            None if snap["observations"] is None else dict(snap["observations"])
        )
        self._snapshot_cache = None

    # -- internals -----------------------------------------------------------

    def _rng(self, stream: int, index: int) -> np.random.Generator:
        if self._episode_seed is None:
            raise RuntimeError("environment has not been reset")
        seq = np.random.SeedSequence([self._episode_seed, stream, index])
        return np.random.Generator(np.random.PCG64(seq))

    def _q_capacity(self, unit: PvUnit, p_pv: float) -> float:
        head = unit.s_max * unit.s_max - p_pv * p_pv
        return float(np.sqrt(head)) if head > 0 else 0.0

    def _window_clamp(self, t: int) -> int:
        end = self._window_start + self.config.day_buffer - 1
        return min(t, end)

    def _snapshot(self, t: int) -> _Snapshot:
        t = self._window_clamp(t)
        if self._snapshot_cache is not None and self._snapshot_cache[0] == t:
            return self._snapshot_cache[1]
        sigma = self.config.data_noise_sigma
        rng = self._rng(_STREAM_DATA, t) if sigma > 0 else None
        p_load: dict[int, float] = {}
        q_load: dict[int, float] = {}
        for ld in sorted(self.case.loads, key=lambda d: d.bus):
            p_prof = self.store.profile(self.store.load_active[ld.bus])
            p_load[ld.bus] = (
                noisy_read(p_prof, t, sigma, rng) if rng else float(p_prof.values[t])
            )
            q_pid = self.store.load_reactive.get(ld.bus)
            if q_pid is not None:
                q_prof = self.store.profile(q_pid)
                q_load[ld.bus] = (
                    noisy_read(q_prof, t, sigma, rng)
                    if rng
                    else float(q_prof.values[t])
                )
            else:
                q_load[ld.bus] = 0.0
        p_pv: dict[int, float] = {}
        for unit in self._agents:
            prof = self.store.profile(self.store.pv_active[unit.agent_id])
            p_pv[unit.agent_id] = (
                noisy_read(prof, t, sigma, rng) if rng else float(prof.values[t])
            )
        snap = _Snapshot(p_load=p_load, q_load=q_load, p_pv=p_pv)
        self._snapshot_cache = (t, snap)
        return snap

    def _injections(self, snap: _Snapshot, q_pv: np.ndarray) -> InjectionSet:
        p_by_bus: dict[int, float] = {}
        q_by_bus: dict[int, float] = {}
        for k, unit in enumerate(self._agents):
            p_by_bus[unit.bus] = p_by_bus.get(unit.bus, 0.0) + snap.p_pv[unit.agent_id]
            q_by_bus[unit.bus] = q_by_bus.get(unit.bus, 0.0) + float(q_pv[k])
        return InjectionSet(
            p_pv=p_by_bus,
            q_pv=q_by_bus,
            p_load=dict(snap.p_load),
            q_load=dict(snap.q_load),
        )

    def _controlled_voltages(self, state: GridState) -> np.ndarray:
        slack_pos = self.case.bus_position(self.case.slack_bus)
        mask = np.ones(self.case.n_buses, dtype=bool)
        mask[slack_pos] = False
        return state.v[mask]

    def _observe_all(
        self,
        state: GridState,
        snap: _Snapshot,
        q_prev: np.ndarray,
        t: int,
    ) -> dict[int, Observation]:
        sigma = self.config.obs_noise_sigma
        rng = self._rng(_STREAM_OBS, t) if sigma > 0 else None
        q_by_agent = {u.agent_id: float(q_prev[k]) for k, u in enumerate(self._agents)}
        per_region: dict[int, dict[str, np.ndarray]] = {}
        for region in self._regions:
            buses = self._region_buses[region.id]
            pvs = self._region_agents[region.id]
            measures = {
                "p_load": np.array([snap.p_load.get(b, 0.0) for b in buses]),
                "q_load": np.array([snap.q_load.get(b, 0.0) for b in buses]),
                "v": np.array([state.v[self.case.bus_position(b)] for b in buses]),
                "theta": np.array(
                    [state.theta[self.case.bus_position(b)] for b in buses]
                ),
                "pv_p": np.array([snap.p_pv[u.agent_id] for u in pvs]),
                "pv_q_prev": np.array([q_by_agent[u.agent_id] for u in pvs]),
            }
            if rng is not None:
                for key in ("p_load", "q_load", "v", "theta", "pv_p", "pv_q_prev"):
                    measures[key] = measures[key] + sigma * rng.standard_normal(
                        len(measures[key])
                    )
            per_region[region.id] = measures
        out: dict[int, Observation] = {}
        for unit in self._agents:
            m = per_region[unit.region_id]
            out[unit.agent_id] = Observation(
                agent_id=unit.agent_id,
                region_id=unit.region_id,
                buses=self._region_buses[unit.region_id],
                p_load=m["p_load"],
                q_load=m["q_load"],
                v=m["v"],
                theta=m["theta"],
                pv_agent_ids=tuple(
                    u.agent_id for u in self._region_agents[unit.region_id]
                ),
                pv_p=m["pv_p"],
                pv_q_prev=m["pv_q_prev"],
            )
        return out

    # convenience used by controllers / harness

    def grid_state(self) -> GridState:
        if self._grid_state is None:
            raise RuntimeError("environment has not been reset")
        return self._grid_state

    def current_q(self) -> np.ndarray:
        if self._q_prev is None:
            raise RuntimeError("environment has not been reset")
        return self._q_prev.copy()

    def current_profile_reading(self) -> tuple[dict, dict, dict]:
        """Profile snapshot the next step will be solved against:
        (p_load by bus, q_load by bus, p_pv by agent), MW / MVAr."""
        if self._terminated and self._grid_state is None:
            raise RuntimeError("environment has not been reset")
        snap = self._snapshot(self._clock)
        return dict(snap.p_load), dict(snap.q_load), dict(snap.p_pv)

    def episode_window(self) -> tuple[int, int]:
        """(window_start, current clock) absolute profile indices."""
        return self._window_start, self._clock
