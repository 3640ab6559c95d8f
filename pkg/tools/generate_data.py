"""Generate the bundled case documents and synthetic profile bundles.

Run from the repository root after an editable install:

    python tools/generate_data.py

The 33-bus feeder uses the standard Baran-Wu branch/load tables (12.66 kV,
tie lines dropped to keep the tree), with PVs on buses 13/18 (region 1),
22 (region 2), 25 (region 3), 29/33 (region 4). The 141-bus feeder is a
synthetic 12.5 kV deep feeder matching the published structural summary
(84 loads, 9 regions, 22 PVs). Profiles are synthetic daily shapes at 3-min
resolution; the generator calibrates amplitudes so the documented peak loads
and penetration ratios hold exactly, then bakes the pipeline-derived inverter
ratings back into the case files.
"""

from __future__ import annotations

import json
import sys
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from avcsim.network import parse_case  # noqa: E402
from avcsim.profiles import STEPS_PER_DAY, load_bundle  # noqa: E402

DATA = ROOT / "src" / "avcsim" / "data"

# Baran-Wu 33-bus tables: (from, to, r_ohm, x_ohm) and (bus, p_kw, q_kvar).
# MATPOWER labels with the substation collapsed into slack label 0; the five
# tie lines are dropped to keep the tree.
BW_BRANCHES = [
    (0, 2, 0.0922, 0.0470),
    (2, 3, 0.4930, 0.2511),
    (3, 4, 0.3660, 0.1864),
    (4, 5, 0.3811, 0.1941),
    (5, 6, 0.8190, 0.7070),
    (6, 7, 0.1872, 0.6188),
    (7, 8, 0.7114, 0.2351),
    (8, 9, 1.0300, 0.7400),
    (9, 10, 1.0440, 0.7400),
    (10, 11, 0.1966, 0.0650),
    (11, 12, 0.3744, 0.1238),
    (12, 13, 1.4680, 1.1550),
    (13, 14, 0.5416, 0.7129),
    (14, 15, 0.5910, 0.5260),
    (15, 16, 0.7463, 0.5450),
    (16, 17, 1.2890, 1.7210),
    (17, 18, 0.7320, 0.5740),
    (2, 19, 0.1640, 0.1565),
    (19, 20, 1.5042, 1.3554),
    (20, 21, 0.4095, 0.4784),
    (21, 22, 0.7089, 0.9373),
    (3, 23, 0.4512, 0.3083),
    (23, 24, 0.8980, 0.7091),
    (24, 25, 0.8960, 0.7011),
    (6, 26, 0.2030, 0.1034),
    (26, 27, 0.2842, 0.1447),
    (27, 28, 1.0590, 0.9337),
    (28, 29, 0.8042, 0.7006),
    (29, 30, 0.5075, 0.2585),
    (30, 31, 0.9744, 0.9630),
    (31, 32, 0.3105, 0.3619),
    (32, 33, 0.3410, 0.5302),
]
BW_LOADS = [
    (2, 100, 60), (3, 90, 40), (4, 120, 80), (5, 60, 30), (6, 60, 20),
    (7, 200, 100), (8, 200, 100), (9, 60, 20), (10, 60, 20), (11, 45, 30),
    (12, 60, 35), (13, 60, 35), (14, 120, 80), (15, 60, 10), (16, 60, 20),
    (17, 60, 20), (18, 90, 40), (19, 90, 40), (20, 90, 40), (21, 90, 40),
    (22, 90, 40), (23, 90, 50), (24, 420, 200), (25, 420, 200), (26, 60, 25),
    (27, 60, 25), (28, 60, 20), (29, 120, 70), (30, 200, 600), (31, 150, 70),
    (32, 210, 100), (33, 60, 40),
]
BW_KV = 12.66
BW_REGIONS = {
    1: list(range(7, 19)),
    2: list(range(19, 23)),
    3: list(range(23, 26)),
    4: list(range(26, 34)),
}
BW_PVS = {  # agent_id: (bus, region)
    0: (13, 1), 1: (18, 1), 2: (22, 2), 3: (25, 3), 4: (29, 4), 5: (33, 4),
}
BW_PEAK_LOAD_MW = 3.5
BW_PR = 2.5


def smooth_noise(rng: np.random.Generator, n: int, window: int, amplitude: float) -> np.ndarray:
    raw = rng.standard_normal(n + window)
    kernel = np.ones(window) / window
    return amplitude * np.convolve(raw, kernel, mode="valid")[:n]


def load_shape(rng: np.random.Generator, days: int, base: float) -> np.ndarray:
    """Per-device daily load series (MW before global rescaling)."""
    n = days * STEPS_PER_DAY
    hours = (np.arange(n) % STEPS_PER_DAY) * 24.0 / STEPS_PER_DAY
    morning_center = 8.2 + rng.uniform(-0.7, 0.7)
    midday_center = 13.0 + rng.uniform(-0.5, 0.5)
    evening_center = 19.3 + rng.uniform(-0.7, 0.7)
    morning = 0.18 + 0.08 * rng.uniform()
    midday = 0.16 + 0.10 * rng.uniform()
    evening = 0.46 + 0.14 * rng.uniform()
    day_scale = np.repeat(0.90 + 0.18 * rng.random(days), STEPS_PER_DAY)
    curve = (
        0.40
        + morning * np.exp(-(((hours - morning_center) / 1.8) ** 2))
        + midday * np.exp(-(((hours - midday_center) / 2.6) ** 2))
        + evening * np.exp(-(((hours - evening_center) / 2.4) ** 2))
    )
    curve = curve * day_scale + smooth_noise(rng, n, 20, 0.035)
    return np.maximum(curve, 0.05) * base


def pv_shape(rng: np.random.Generator, days: int, region_weight: float = 1.0) -> np.ndarray:
    """Per-region daily solar series (relative units; scaled by the pipeline).

    ``region_weight`` models distinct zonal radiation levels, so electrically
    stiff regions can carry a larger share of the installed generation.
    """
    n = days * STEPS_PER_DAY
    hours = (np.arange(n) % STEPS_PER_DAY) * 24.0 / STEPS_PER_DAY
    sunrise, sunset = 6.2, 18.3
    daylight = np.clip((hours - sunrise) / (sunset - sunrise), 0.0, 1.0)
    bell = np.sin(np.pi * daylight) ** 1.35
    bell[(hours < sunrise) | (hours > sunset)] = 0.0
    day_sun = np.repeat(0.55 + 0.30 * rng.random(days), STEPS_PER_DAY)
    clouds = 1.0 - np.clip(smooth_noise(rng, n, 30, 0.5), 0.0, 0.6)
    return np.maximum(bell * day_sun * clouds, 0.0) * region_weight


def write_bundle(
    directory: Path,
    start: datetime,
    load_series: dict[int, np.ndarray],
    pv_series: dict[int, np.ndarray],
    power_factors: dict[int, float],
    pv_assignments: dict[int, int],
    penetration_ratio: float,
    pf_seed: int,
) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    ids = list(load_series) + list(pv_series)
    names = [f"load-active_{i}" for i in load_series] + [
        f"pv-active_{i}" for i in pv_series
    ]
    columns = list(load_series.values()) + list(pv_series.values())
    n = len(columns[0])
    lines = ["timestamp," + ",".join(names)]
    for t in range(n):
        stamp = (start + timedelta(seconds=180 * t)).isoformat()
        lines.append(stamp + "," + ",".join(f"{col[t]:.6f}" for col in columns))
    (directory / "profiles.csv").write_text("\n".join(lines) + "\n")
    manifest = {
        "name": directory.name,
        "resolution_s": 180,
        "penetration_ratio": penetration_ratio,
        "power_factor_seed": pf_seed,
        "power_factors": {str(k): round(v, 6) for k, v in power_factors.items()},
        "pv_assignments": {str(k): v for k, v in pv_assignments.items()},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    del ids


def build_case33() -> dict:
    z_base = BW_KV * BW_KV / 1.0  # ohm, on 1 MVA
    doc = {
        "name": "case33",
        "base_power_mva": 1.0,
        "v_ref_pu": 1.0,
        "action_bound_ratio": 0.8,
        "buses": [{"index": 0, "nominal_kv": BW_KV, "v_min_pu": 0.95, "v_max_pu": 1.05}]
        + [
            {"index": b, "nominal_kv": BW_KV, "v_min_pu": 0.95, "v_max_pu": 1.05}
            for b in range(2, 34)
        ],
        "branches": [
            {
                "from": f,
                "to": t,
                "r_pu": round(r / z_base, 9),
                "x_pu": round(x / z_base, 9),
                "tap_ratio": 1.0,
            }
            for f, t, r, x in BW_BRANCHES
        ],
        "pvs": [
            {"bus": bus, "agent_id": aid, "s_max_mva": 1.0, "region": region}
            for aid, (bus, region) in BW_PVS.items()
        ],
        "loads": [{"bus": b, "profile_id": b} for b, _, _ in BW_LOADS],
        "regions": [{"id": rid, "buses": buses} for rid, buses in BW_REGIONS.items()],
    }
    return doc


def make_33_profiles(days: int = 6) -> None:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(3301)))
    start = datetime(2021, 6, 1)
    load_series: dict[int, np.ndarray] = {}
    for bus, p_kw, _ in BW_LOADS:
        load_series[bus] = load_shape(rng, days, p_kw / 1000.0)
    total = np.sum(list(load_series.values()), axis=0)
    factor = BW_PEAK_LOAD_MW / float(total.max())
    load_series = {k: v * factor for k, v in load_series.items()}

    # Stiff short laterals (regions 2, 3) carry more generation than the
    # weak feeder ends (regions 1, 4), keeping overvoltage correctable.
    region_weights = {1: 0.75, 2: 1.40, 3: 1.40, 4: 0.65}
    pv_series = {
        100 + rid: pv_shape(rng, days, region_weights[rid]) for rid in BW_REGIONS
    }
    power_factors = {
        bus: p / np.hypot(p, q) for bus, p, q in BW_LOADS
    }
    write_bundle(
        DATA / "profiles33",
        start,
        load_series,
        pv_series,
        power_factors,
        {rid: 100 + rid for rid in BW_REGIONS},
        BW_PR,
        pf_seed=7,
    )


# -- 141-bus synthetic feeder -------------------------------------------------

C141_KV = 12.5
C141_PEAK_LOAD_MW = 20.0
C141_PR = 4.0

# Lateral layout: region id -> (coupling main bus, list of chained label runs).
# The first run couples at the main bus; later runs branch off the bus given.
C141_MAIN = list(range(2, 26))  # chained from the slack: 0 -> 2 -> ... -> 25
C141_LATERALS = {
    1: [(4, list(range(26, 41))), (36, list(range(105, 116)))],
    2: [(6, list(range(41, 53)))],
    3: [(8, list(range(53, 65)))],
    4: [(10, list(range(65, 78)))],
    5: [(12, list(range(78, 91)))],
    6: [(14, list(range(91, 105)))],
    7: [(17, list(range(116, 127)))],
    8: [(20, list(range(127, 135)))],
    9: [(23, list(range(135, 142)))],
}
C141_PVS = {  # agent_id: (bus, region)
    0: (36, 1), 1: (40, 1), 2: (111, 1),
    3: (46, 2), 4: (52, 2),
    5: (58, 3), 6: (64, 3),
    7: (70, 4), 8: (77, 4),
    9: (84, 5), 10: (90, 5),
    11: (96, 6), 12: (100, 6), 13: (104, 6),
    14: (120, 7), 15: (126, 7),
    16: (130, 8), 17: (134, 8),
    18: (137, 9), 19: (139, 9), 20: (140, 9), 21: (141, 9),
}


def build_case141(rng: np.random.Generator) -> tuple[dict, list[int]]:
    z_base = C141_KV * C141_KV / 1.0
    branches = []

    def add_branch(f: int, t: int, main: bool) -> None:
        # Dense cable feeder: short sections, heavy conductors, so the 20 MW
        # demand and 80 MW PV peak stay within workable voltage excursions.
        if main:
            length = rng.uniform(0.15, 0.4)  # km
            r_km, x_km = 0.05, 0.035
        else:
            length = rng.uniform(0.15, 0.5)
            r_km, x_km = 0.12, 0.085
        branches.append(
            {
                "from": f,
                "to": t,
                "r_pu": round(r_km * length / z_base, 9),
                "x_pu": round(x_km * length / z_base, 9),
                "tap_ratio": 1.0,
            }
        )

    prev = 0
    for b in C141_MAIN:
        add_branch(prev, b, main=True)
        prev = b
    region_buses: dict[int, list[int]] = {}
    for rid, runs in C141_LATERALS.items():
        buses: list[int] = []
        for couple, run in runs:
            prev = couple
            for b in run:
                add_branch(prev, b, main=False)
                prev = b
            buses.extend(run)
        region_buses[rid] = sorted(buses)

    all_buses = [0] + C141_MAIN + [b for r in region_buses.values() for b in r]
    all_buses = sorted(set(all_buses))
    assert len(all_buses) == 141 and len(branches) == 140

    # 84 loads: all main-branch buses plus a deterministic lateral subset.
    lateral_buses = [b for r in sorted(region_buses) for b in region_buses[r]]
    picked = list(C141_MAIN)
    stride = len(lateral_buses) / (84 - len(picked))
    idx = 0.0
    while len(picked) < 84:
        picked.append(lateral_buses[int(idx) % len(lateral_buses)])
        idx += stride
    picked = sorted(set(picked))
    k = 0
    while len(picked) < 84:  # top up if stride collisions dropped any
        if lateral_buses[k] not in picked:
            picked.append(lateral_buses[k])
        k += 1
    picked = sorted(picked)

    doc = {
        "name": "case141",
        "base_power_mva": 1.0,
        "v_ref_pu": 1.0,
        "action_bound_ratio": 0.6,
        "buses": [
            {"index": b, "nominal_kv": C141_KV, "v_min_pu": 0.95, "v_max_pu": 1.05}
            for b in all_buses
        ],
        "branches": branches,
        "pvs": [
            {"bus": bus, "agent_id": aid, "s_max_mva": 1.0, "region": rid}
            for aid, (bus, rid) in C141_PVS.items()
        ],
        "loads": [{"bus": b, "profile_id": b} for b in picked],
        "regions": [
            {"id": rid, "buses": buses} for rid, buses in region_buses.items()
        ],
    }
    return doc, picked


def make_141(days: int = 3) -> None:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(14101)))
    doc, load_buses = build_case141(rng)
    start = datetime(2021, 6, 1)
    load_series: dict[int, np.ndarray] = {}
    power_factors: dict[int, float] = {}
    for bus in load_buses:
        base = float(rng.lognormal(mean=-1.6, sigma=0.55))
        load_series[bus] = load_shape(rng, days, base)
        industrial = rng.random() < 0.15
        power_factors[bus] = (
            float(rng.uniform(0.35, 0.6)) if industrial else float(rng.uniform(0.85, 0.98))
        )
    total = np.sum(list(load_series.values()), axis=0)
    factor = C141_PEAK_LOAD_MW / float(total.max())
    load_series = {k: v * factor for k, v in load_series.items()}

    region_weights = {1: 0.8, 2: 1.3, 3: 1.3, 4: 1.2, 5: 1.1, 6: 0.9, 7: 0.9, 8: 0.9, 9: 0.8}
    pv_series = {
        200 + rid: pv_shape(rng, days, region_weights[rid]) for rid in C141_LATERALS
    }
    (DATA / "case141.json").write_text(json.dumps(doc, indent=1) + "\n")
    write_bundle(
        DATA / "profiles141",
        start,
        load_series,
        pv_series,
        power_factors,
        {rid: 200 + rid for rid in C141_LATERALS},
        C141_PR,
        pf_seed=11,
    )


def bake_ratings(case_name: str, bundle_name: str) -> None:
    """Write the pipeline-derived inverter ratings back into the case file."""
    case_file = DATA / f"{case_name}.json"
    case = parse_case(case_file)
    _, scaled = load_bundle(case, DATA / bundle_name)
    doc = json.loads(case_file.read_text())
    ratings = {u.agent_id: u.s_max for u in scaled.pv_units}
    for entry in doc["pvs"]:
        entry["s_max_mva"] = ratings[entry["agent_id"]]
    case_file.write_text(json.dumps(doc, indent=1) + "\n")


def verify(case_name: str, bundle_name: str) -> None:
    from avcsim.powerflow import solve_power_flow, InjectionSet

    case = parse_case(DATA / f"{case_name}.json")
    store, case = load_bundle(case, DATA / bundle_name)
    n = store.n_steps()
    v_lo, v_hi, fails, in_range_steps = 2.0, 0.0, 0, 0
    slack = case.bus_position(case.slack_bus)
    for t in range(n):
        p_load = {ld.bus: float(store.profile(store.load_active[ld.bus]).values[t]) for ld in case.loads}
        q_load = {ld.bus: float(store.profile(store.load_reactive[ld.bus]).values[t]) for ld in case.loads}
        p_pv: dict[int, float] = {}
        for u in case.agents():
            p_pv[u.bus] = p_pv.get(u.bus, 0.0) + float(store.profile(store.pv_active[u.agent_id]).values[t])
        st = solve_power_flow(case, InjectionSet(p_pv=p_pv, p_load=p_load, q_load=q_load))
        if not st.converged:
            fails += 1
            continue
        v = np.delete(st.v, slack)
        v_lo = min(v_lo, float(v.min()))
        v_hi = max(v_hi, float(v.max()))
        if v.min() >= 0.95 and v.max() <= 1.05:
            in_range_steps += 1
    print(
        f"{case_name}: steps={n} pf_failures={fails} no-control v_min={v_lo:.4f} "
        f"v_max={v_hi:.4f} CR={in_range_steps / n:.3f}"
    )
    peaks = {u.agent_id: u.s_max / 1.2 for u in case.agents()}
    print(f"  s_max: {[round(u.s_max, 3) for u in case.agents()]}")
    total_load, total_pv = 0.0, 0.0
    for ld in case.loads:
        total_load = max(total_load, 0)  # placeholder, totals computed below
    from avcsim.profiles import rated_totals

    rl, rp = rated_totals(store, case)
    print(f"  rated load={rl:.4f} MW rated pv={rp:.4f} MW ratio={rp / rl:.4f}")
    del peaks, total_load, total_pv


def main() -> None:
    DATA.mkdir(parents=True, exist_ok=True)
    (DATA / "case33.json").write_text(json.dumps(build_case33(), indent=1) + "\n")
    make_33_profiles()
    bake_ratings("case33", "profiles33")
    make_141()
    bake_ratings("case141", "profiles141")
    verify("case33", "profiles33")
    verify("case141", "profiles141")


if __name__ == "__main__":
    main()
