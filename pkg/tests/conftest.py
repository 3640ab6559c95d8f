import json
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
import pytest

from avcsim.data import bundle_path, case_path
from avcsim.env import EnvConfig, VoltageControlEnv
from avcsim.network import NetworkCase, parse_case
from avcsim.profiles import load_bundle
from avcsim.reward import BarrierSpec, RewardSpec


@pytest.fixture(scope="session")
def case33_raw() -> NetworkCase:
    return parse_case(case_path("case33"))


@pytest.fixture(scope="session")
def bundle33(case33_raw):
    store, case = load_bundle(case33_raw, bundle_path("profiles33"))
    return store, case


@pytest.fixture(scope="session")
def case141_raw() -> NetworkCase:
    return parse_case(case_path("case141"))


@pytest.fixture
def env33_factory(bundle33):
    """Builds fresh 33-bus environments with overridable config fields."""
    store, case = bundle33

    def build(**overrides) -> VoltageControlEnv:
        fields = dict(
            case=case,
            store=store,
            reward=RewardSpec(barrier=BarrierSpec(shape="l1")),
            episode_length=240,
            obs_noise_sigma=0.0,
            data_noise_sigma=0.01,
            seed=0,
        )
        fields.update(overrides)
        return VoltageControlEnv(EnvConfig(**fields))

    return build


def two_bus_case(
    r: float = 0.1,
    x: float = 0.1,
    *,
    with_pv: bool = False,
    s_max: float = 1.0,
    action_bound: float = 0.8,
) -> NetworkCase:
    """Smallest legal case: slack plus one load bus (optionally with a PV)."""
    doc = {
        "name": "twobus",
        "base_power_mva": 1.0,
        "v_ref_pu": 1.0,
        "action_bound_ratio": action_bound,
        "buses": [
            {"index": 0, "nominal_kv": 12.66, "v_min_pu": 0.95, "v_max_pu": 1.05},
            {"index": 1, "nominal_kv": 12.66, "v_min_pu": 0.95, "v_max_pu": 1.05},
        ],
        "branches": [{"from": 0, "to": 1, "r_pu": r, "x_pu": x, "tap_ratio": 1.0}],
        "loads": [{"bus": 1, "profile_id": 1}],
        "pvs": [],
        "regions": [],
    }
    if with_pv:
        doc["pvs"] = [{"bus": 1, "agent_id": 0, "s_max_mva": s_max, "region": 1}]
        doc["regions"] = [{"id": 1, "buses": [1]}]
    return parse_case(doc)


def fixed_point_two_bus(
    r: float,
    x: float,
    p_net: float,
    q_net: float,
    v0: float = 1.0,
    iterations: int = 500,
) -> complex:
    """Independent oracle: iterate the exact 2-bus branch relation.

    ``p_net``/``q_net`` are net consumption at the receiving bus (load minus
    generation), per-unit. Solves V1 = V0 - z * conj(s_net) / conj(V1).
    """
    z = complex(r, x)
    s = complex(p_net, q_net)
    v1 = complex(v0, 0.0)
    for _ in range(iterations):
        v1_next = v0 - z * np.conj(s / v1)
        if abs(v1_next - v1) < 1e-15:
            return v1_next
        v1 = v1_next
    return v1


def write_two_bus_bundle(
    directory: Path,
    load_p: np.ndarray,
    pv_p: np.ndarray | None = None,
    power_factor: float = 0.95,
    penetration_ratio: float | None = None,
) -> None:
    """Craft a minimal profile bundle for the two-bus case."""
    directory.mkdir(parents=True, exist_ok=True)
    n = len(load_p)
    start = datetime(2021, 1, 1)
    header = ["timestamp", "load-active_1"]
    columns = [load_p]
    if pv_p is not None:
        header.append("pv-active_101")
        columns.append(pv_p)
    lines = [",".join(header)]
    for t in range(n):
        stamp = (start + timedelta(seconds=180 * t)).isoformat()
        lines.append(stamp + "," + ",".join(f"{col[t]:.9f}" for col in columns))
    (directory / "profiles.csv").write_text("\n".join(lines) + "\n")
    manifest = {
        "name": directory.name,
        "resolution_s": 180,
        "power_factor_seed": 0,
        "power_factors": {"1": power_factor},
        "pv_assignments": {"1": 101} if pv_p is not None else {},
    }
    if penetration_ratio is not None:
        manifest["penetration_ratio"] = penetration_ratio
    (directory / "manifest.json").write_text(json.dumps(manifest) + "\n")
