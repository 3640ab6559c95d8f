"""Load/PV time-series pipeline: ingest, clean, resample, scale, assign.

Pipeline order is fixed: ingest -> outlier removal -> resample (part of
ingest) -> penetration scaling -> power-factor generation. Reads at
simulation time go through ``noisy_read`` so stored series stay clean.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Mapping

import numpy as np

from .network import NetworkCase

NATIVE_RESOLUTION_S = 180  # 3-minute control period
STEPS_PER_DAY = 24 * 3600 // NATIVE_RESOLUTION_S  # 480

LOAD_ACTIVE = "load-active"
LOAD_REACTIVE = "load-reactive"
PV_ACTIVE = "pv-active"
PROFILE_KINDS = (LOAD_ACTIVE, LOAD_REACTIVE, PV_ACTIVE)

# Generated reactive series get ids far above any bundled id.
REACTIVE_ID_OFFSET = 20000

MAX_MISSING_FRACTION = 0.2


class ProfileError(Exception):
    pass


@dataclass(frozen=True)
class Profile:
    id: int
    kind: str
    resolution: int  # seconds
    start: datetime
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.kind not in PROFILE_KINDS:
            raise ProfileError(f"profile {self.id}: unknown kind '{self.kind}'")
        if self.resolution <= 0:
            raise ProfileError(f"profile {self.id}: resolution must be positive")
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if self.kind == PV_ACTIVE and np.any(values < 0):
            raise ProfileError(f"profile {self.id}: pv-active values must be >= 0")
        if not np.all(np.isfinite(values)):
            raise ProfileError(f"profile {self.id}: non-finite values")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ProfileStore:
    """Simulation-ready series plus device assignments.

    ``load_active``/``load_reactive`` map bus label -> profile id;
    ``pv_active`` maps agent_id -> profile id. ``power_factors`` maps a
    load-active profile id to its default power factor.
    """

    profiles: Mapping[int, Profile]
    load_active: Mapping[int, int] = field(default_factory=dict)
    load_reactive: Mapping[int, int] = field(default_factory=dict)
    pv_active: Mapping[int, int] = field(default_factory=dict)
    power_factors: Mapping[int, float] = field(default_factory=dict)
    penetration_ratio: float | None = None

    def profile(self, pid: int) -> Profile:
        try:
            return self.profiles[pid]
        except KeyError:
            raise ProfileError(f"unknown profile id {pid}") from None

    def n_steps(self) -> int:
        used = set(self.load_active.values()) | set(self.load_reactive.values()) | set(
            self.pv_active.values()
        )
        if not used:
            return 0
        return min(len(self.profiles[pid]) for pid in used)


def validate_store(store: ProfileStore, case: NetworkCase) -> None:
    """Every device assignment must resolve; same-region PVs share a profile."""
    for ld in case.loads:
        if ld.bus not in store.load_active:
            raise ProfileError(f"load at bus {ld.bus}: no active profile assigned")
        store.profile(store.load_active[ld.bus])
        if store.load_reactive and ld.bus not in store.load_reactive:
            raise ProfileError(f"load at bus {ld.bus}: no reactive profile assigned")
    region_profile: dict[int, int] = {}
    for unit in case.pv_units:
        if unit.agent_id not in store.pv_active:
            raise ProfileError(f"pv agent {unit.agent_id}: no profile assigned")
        pid = store.pv_active[unit.agent_id]
        store.profile(pid)
        prior = region_profile.setdefault(unit.region_id, pid)
        if prior != pid:
            raise ProfileError(
                f"region {unit.region_id}: PVs assigned different profiles "
                f"({prior} vs {pid})"
            )


# -- ingestion ---------------------------------------------------------------


def _parse_timestamp(text: str, row: int) -> datetime:
    try:
        return datetime.fromisoformat(text.strip())
    except ValueError:
        raise ProfileError(f"row {row}: bad timestamp '{text.strip()}'") from None


def _parse_column_name(name: str) -> tuple[str, int]:
    kind, _, suffix = name.strip().rpartition("_")
    if kind not in PROFILE_KINDS or not suffix.isdigit():
        raise ProfileError(f"bad profile column name '{name.strip()}'")
    return kind, int(suffix)


def ingest_csv(
    text: str, resolution: int = NATIVE_RESOLUTION_S
) -> dict[int, Profile]:
    """Parse tabular profile text into uniform-resolution profiles.

    First column is an ISO-8601 timestamp; the rest are series named
    ``<kind>_<id>``. Empty cells are gaps: columns missing more than 20% are
    rejected, the rest are filled by linear interpolation. The series is
    then resampled onto a uniform ``resolution`` grid spanning (exactly) the
    original support.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise ProfileError("profile table needs a header and at least one row")
    header = [h.strip() for h in lines[0].split(",")]
    columns = [_parse_column_name(h) for h in header[1:]]
    seen = set()
    for _, pid in columns:
        if pid in seen:
            raise ProfileError(f"duplicate profile id {pid}")
        seen.add(pid)

    times: list[datetime] = []
    cells: list[list[float]] = []
    for row_no, line in enumerate(lines[1:], start=1):
        parts = line.split(",")
        if len(parts) != len(header):
            raise ProfileError(f"row {row_no}: expected {len(header)} cells")
        times.append(_parse_timestamp(parts[0], row_no))
        row_vals = []
        for raw in parts[1:]:
            raw = raw.strip()
            row_vals.append(math.nan if raw == "" else float(raw))
        cells.append(row_vals)

    seconds = np.array([(t - times[0]).total_seconds() for t in times])
    if np.any(np.diff(seconds) <= 0):
        raise ProfileError("timestamps are not strictly increasing")

    table = np.array(cells, dtype=float)
    profiles: dict[int, Profile] = {}
    span = seconds[-1]
    grid = np.arange(0.0, span + 0.5 * resolution, float(resolution))
    grid = grid[grid <= span + 1e-9]
    for col, (kind, pid) in enumerate(columns):
        series = table[:, col]
        missing = np.isnan(series)
        if missing.mean() > MAX_MISSING_FRACTION:
            raise ProfileError(
                f"column '{header[col + 1]}': more than "
                f"{MAX_MISSING_FRACTION:.0%} missing"
            )
        if missing.any():
            good = ~missing
            series = np.interp(seconds, seconds[good], series[good])
        resampled = np.interp(grid, seconds, series)
        if kind == PV_ACTIVE:
            resampled = np.maximum(resampled, 0.0)
        profiles[pid] = Profile(
            id=pid, kind=kind, resolution=resolution, start=times[0], values=resampled
        )
    return profiles


def remove_outliers(profile: Profile, threshold_sigmas: float = 7.0) -> Profile:
    """Replace samples farther than ``threshold_sigmas``·σ from the mean.

    Statistics come from the full input series; replacements interpolate the
    nearest surviving neighbors. A constant series (σ = 0) passes through.
    """
    values = profile.values
    if len(values) < 2:
        raise ProfileError("outlier removal needs at least two samples")
    mean = float(values.mean())
    sigma = float(values.std())
    if sigma == 0.0:
        return profile
    bad = np.abs(values - mean) > threshold_sigmas * sigma
    if not bad.any():
        return profile
    if bad.all():
        raise ProfileError(f"profile {profile.id}: every sample flagged as outlier")
    idx = np.arange(len(values))
    cleaned = values.copy()
    cleaned[bad] = np.interp(idx[bad], idx[~bad], values[~bad])
    return replace(profile, values=cleaned)


# -- scaling and reactive generation ----------------------------------------


def rated_totals(store: ProfileStore, case: NetworkCase) -> tuple[float, float]:
    """(peak total load MW, peak total PV MW) over the assigned series."""
    n = store.n_steps()
    if n == 0:
        raise ProfileError("store has no assigned profiles")
    load_total = np.zeros(n)
    for ld in case.loads:
        load_total += store.profile(store.load_active[ld.bus]).values[:n]
    pv_total = np.zeros(n)
    for unit in case.pv_units:
        pv_total += store.profile(store.pv_active[unit.agent_id]).values[:n]
    return float(load_total.max()), float(pv_total.max())


def scale_penetration(
    store: ProfileStore, case: NetworkCase, pr: float
) -> tuple[ProfileStore, NetworkCase]:
    """Rescale pv-active series so peak-PV / peak-load equals ``pr``.

    Inverter ratings are re-derived as s_max = 1.2 x the unit's peak active
    output, oversizing each inverter by 20%. Returns the updated store and a
    case with the new ratings.
    """
    if pr <= 0:
        raise ProfileError("penetration ratio must be positive")
    rated_load, rated_pv = rated_totals(store, case)
    if rated_load <= 0:
        raise ProfileError("rated load consumption is zero")
    if rated_pv <= 0:
        raise ProfileError("rated PV generation is zero")
    factor = pr * rated_load / rated_pv
    profiles = dict(store.profiles)
    for pid, prof in store.profiles.items():
        if prof.kind == PV_ACTIVE:
            profiles[pid] = replace(prof, values=prof.values * factor)
    new_store = replace(store, profiles=profiles, penetration_ratio=pr)
    s_max = {
        unit.agent_id: 1.2 * float(profiles[store.pv_active[unit.agent_id]].values.max())
        for unit in case.pv_units
    }
    return new_store, case.with_pv_capacities(s_max)


def reactive_from_power_factor(p: np.ndarray, pf: float) -> np.ndarray:
    """q = p * tan(arccos(pf))."""
    if not (0.0 < pf <= 1.0):
        raise ProfileError(f"power factor {pf} outside (0, 1]")
    return p * math.tan(math.acos(pf))


def perturb_power_factor(store: ProfileStore, seed: int) -> ProfileStore:
    """Regenerate load-reactive series from active ones with pf perturbed ±5%.

    Each load-active profile's default power factor is scaled by a uniform
    factor in [0.95, 1.05] (clamped back into (0, 1]), deterministically per
    seed, and the reactive series is rebuilt as p·tan(arccos(pf)).
    """
    if not store.load_active:
        raise ProfileError("no load-active profiles to generate reactive from")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    profiles = dict(store.profiles)
    load_reactive: dict[int, int] = {}
    for bus in sorted(store.load_active):
        pid = store.load_active[bus]
        prof = store.profile(pid)
        pf0 = store.power_factors.get(pid, 0.95)
        pf = pf0 * (1.0 + rng.uniform(-0.05, 0.05))
        pf = min(max(pf, 1e-6), 1.0)
        qid = pid + REACTIVE_ID_OFFSET
        profiles[qid] = Profile(
            id=qid,
            kind=LOAD_REACTIVE,
            resolution=prof.resolution,
            start=prof.start,
            values=reactive_from_power_factor(prof.values, pf),
        )
        load_reactive[bus] = qid
    return replace(store, profiles=profiles, load_reactive=load_reactive)


def noisy_read(
    profile: Profile, t: int, sigma: float, rng: np.random.Generator
) -> float:
    """Read values[t] with multiplicative Gaussian noise value·(1 + ε).

    ε ~ N(0, sigma²); pv-active reads are clamped at zero. sigma = 0 returns
    the stored value and consumes no randomness.
    """
    if not (0 <= t < len(profile.values)):
        raise IndexError(f"profile {profile.id}: step {t} out of range")
    value = float(profile.values[t])
    if sigma == 0.0:
        return value
    noisy = value * (1.0 + sigma * float(rng.standard_normal()))
    if profile.kind == PV_ACTIVE:
        noisy = max(noisy, 0.0)
    return noisy


# -- bundles -----------------------------------------------------------------


def load_bundle(
    case: NetworkCase,
    directory: str | Path,
    pf_seed: int | None = None,
) -> tuple[ProfileStore, NetworkCase]:
    """Load a profile bundle directory and run the full pipeline.

    The bundle holds ``profiles.csv`` plus ``manifest.json`` with the
    penetration ratio, per-profile default power factors, the per-region PV
    profile assignment, and the construction-time power-factor seed (used
    when ``pf_seed`` is not given). Returns the store and the case with
    penetration-scaled inverter ratings.
    """
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    csv_path = directory / "profiles.csv"
    if not manifest_path.is_file() or not csv_path.is_file():
        raise ProfileError(f"{directory}: not a profile bundle")
    manifest = json.loads(manifest_path.read_text())

    profiles = ingest_csv(csv_path.read_text())
    profiles = {pid: remove_outliers(p) for pid, p in profiles.items()}

    load_active = {ld.bus: ld.profile_id for ld in case.loads}
    pv_assign_by_region = {
        int(k): int(v) for k, v in manifest.get("pv_assignments", {}).items()
    }
    pv_active = {}
    for unit in case.pv_units:
        if unit.region_id not in pv_assign_by_region:
            raise ProfileError(f"manifest: no pv profile for region {unit.region_id}")
        pv_active[unit.agent_id] = pv_assign_by_region[unit.region_id]
    power_factors = {
        int(k): float(v) for k, v in manifest.get("power_factors", {}).items()
    }
    store = ProfileStore(
        profiles=profiles,
        load_active=load_active,
        pv_active=pv_active,
        power_factors=power_factors,
    )
    pr = manifest.get("penetration_ratio")
    if pr is not None:
        store, case = scale_penetration(store, case, float(pr))
    seed = pf_seed if pf_seed is not None else int(manifest.get("power_factor_seed", 0))
    store = perturb_power_factor(store, seed)
    validate_store(store, case)
    return store, case
