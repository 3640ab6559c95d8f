"""Static grid description: topology, electrical parameters, devices, regions.

A case is a radial (tree) network rooted at the slack bus (index 0). All
electrical parameters are stored per-unit on ``base_power`` MVA; device
powers are physical (MW / MVAr / MVA). Bus indices are arbitrary integer
labels and need not be contiguous.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping


class CaseError(Exception):
    """Base class for case document problems."""


class ParseError(CaseError):
    """The document does not conform to the case schema."""


class ValidationError(CaseError):
    """The document parses but violates a structural invariant."""


@dataclass(frozen=True)
class Bus:
    index: int
    nominal_kv: float
    v_min: float = 0.95
    v_max: float = 1.05


@dataclass(frozen=True)
class Branch:
    """Series element between two buses; ``tap_ratio != 1`` models a transformer.

    ``rating_mva`` is an optional loading limit: when any branch carries one,
    the environment's safety rule also trips on branch overloading.
    """

    from_bus: int
    to_bus: int
    r: float  # pu
    x: float  # pu
    tap_ratio: float = 1.0
    rating_mva: float | None = None


@dataclass(frozen=True)
class PvUnit:
    bus: int
    agent_id: int
    s_max: float  # MVA
    region_id: int


@dataclass(frozen=True)
class LoadUnit:
    bus: int
    profile_id: int


@dataclass(frozen=True)
class Region:
    id: int
    bus_set: frozenset[int]


@dataclass(frozen=True)
class NetworkCase:
    """Immutable grid description; safe to share across workers."""

    name: str
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    pv_units: tuple[PvUnit, ...]
    loads: tuple[LoadUnit, ...]
    regions: tuple[Region, ...]
    v_ref: float = 1.0
    base_power: float = 1.0  # MVA; default 1 so per-unit power == MW
    action_bound: float = 0.8
    slack_bus: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        _validate(self)

    # -- lookups -----------------------------------------------------------

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_agents(self) -> int:
        return len(self.pv_units)

    def bus_labels(self) -> list[int]:
        return [b.index for b in self.buses]

    def bus_position(self, label: int) -> int:
        """Dense position of a bus label in the case's bus ordering."""
        try:
            return self._positions()[label]
        except KeyError:
            raise ValidationError(f"unknown bus index {label}") from None

    def _positions(self) -> dict[int, int]:
        cache = object.__getattribute__(self, "__dict__").get("_pos_cache")
        if cache is None:
            cache = {b.index: i for i, b in enumerate(self.buses)}
            object.__setattr__(self, "_pos_cache", cache)
        return cache

    def agents(self) -> tuple[PvUnit, ...]:
        """PV units sorted by agent_id; the canonical action ordering."""
        return tuple(sorted(self.pv_units, key=lambda u: u.agent_id))

    def region_by_id(self, region_id: int) -> Region:
        for r in self.regions:
            if r.id == region_id:
                return r
        raise ValidationError(f"unknown region id {region_id}")

    def to_per_unit(self, mw: float) -> float:
        return mw / self.base_power

    def from_per_unit(self, pu: float) -> float:
        return pu * self.base_power

    def with_pv_capacities(self, s_max_by_agent: Mapping[int, float]) -> "NetworkCase":
        """Functional update of PV ratings (used by penetration scaling)."""
        new_pvs = tuple(
            replace(u, s_max=float(s_max_by_agent.get(u.agent_id, u.s_max)))
            for u in self.pv_units
        )
        return replace(self, pv_units=new_pvs)


def branch_admittance(branch: Branch) -> tuple[float, float]:
    """Series admittance (g, b) of a branch: g = r/(r²+x²), b = −x/(r²+x²)."""
    denom = branch.r * branch.r + branch.x * branch.x
    if denom == 0.0:
        raise ValidationError(
            f"degenerate branch {branch.from_bus}-{branch.to_bus}: zero impedance"
        )
    return branch.r / denom, -branch.x / denom


def region_of(case: NetworkCase, bus: int) -> Region | None:
    """The unique region containing ``bus``, or None for unassigned buses."""
    case.bus_position(bus)  # raises on unknown label
    for r in case.regions:
        if bus in r.bus_set:
            return r
    return None


def validate_radial(case: NetworkCase) -> None:
    """Check that the branch graph is a spanning tree rooted at the slack.

    Raises ValidationError naming the defect: cycle, disconnected component,
    or orphan bus.
    """
    labels = set(case.bus_labels())
    n = len(labels)
    if len(case.branches) != n - 1:
        raise ValidationError(
            f"not a tree: {len(case.branches)} branches for {n} buses "
            f"(expected {n - 1})"
        )
    adjacency: dict[int, list[int]] = {label: [] for label in labels}
    for br in case.branches:
        adjacency[br.from_bus].append(br.to_bus)
        adjacency[br.to_bus].append(br.from_bus)
    # BFS from the slack; with |E| = |V|-1, full coverage excludes cycles too.
    seen = {case.slack_bus}
    frontier = [case.slack_bus]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adjacency[u]:
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
    if len(seen) != n:
        orphans = sorted(labels - seen)
        raise ValidationError(
            f"not a tree: buses {orphans} unreachable from the slack "
            "(disconnected component or cycle elsewhere)"
        )


def _validate(case: NetworkCase) -> None:
    labels = [b.index for b in case.buses]
    label_set = set(labels)
    if len(label_set) != len(labels):
        raise ValidationError("duplicate bus index")
    if case.slack_bus not in label_set:
        raise ValidationError("slack bus (index 0) missing from bus list")
    if case.base_power <= 0:
        raise ValidationError("base_power must be positive")
    if case.action_bound <= 0:
        raise ValidationError("action_bound must be positive")
    for b in case.buses:
        if not (b.v_min < case.v_ref < b.v_max):
            raise ValidationError(
                f"bus {b.index}: requires v_min < v_ref < v_max "
                f"(got {b.v_min}, {case.v_ref}, {b.v_max})"
            )
        if b.nominal_kv <= 0:
            raise ValidationError(f"bus {b.index}: nominal_kv must be positive")
    for br in case.branches:
        if br.from_bus == br.to_bus:
            raise ValidationError(f"branch {br.from_bus}-{br.to_bus}: self-loop")
        for end in (br.from_bus, br.to_bus):
            if end not in label_set:
                raise ValidationError(
                    f"branch {br.from_bus}-{br.to_bus}: unknown bus {end}"
                )
        if br.r < 0:
            raise ValidationError(f"branch {br.from_bus}-{br.to_bus}: r < 0")
        if br.x <= 0:
            raise ValidationError(f"branch {br.from_bus}-{br.to_bus}: x <= 0")
        if br.tap_ratio <= 0:
            raise ValidationError(
                f"branch {br.from_bus}-{br.to_bus}: tap_ratio <= 0"
            )
        if br.rating_mva is not None and br.rating_mva <= 0:
            raise ValidationError(
                f"branch {br.from_bus}-{br.to_bus}: rating_mva <= 0"
            )
    validate_radial(case)

    agent_ids = [u.agent_id for u in case.pv_units]
    if len(set(agent_ids)) != len(agent_ids):
        raise ValidationError("duplicate agent_id among PV units")
    region_ids = [r.id for r in case.regions]
    if len(set(region_ids)) != len(region_ids):
        raise ValidationError("duplicate region id")
    seen_region_buses: dict[int, int] = {}
    for r in case.regions:
        if not r.bus_set:
            raise ValidationError(f"region {r.id} is empty")
        for bus in r.bus_set:
            if bus not in label_set:
                raise ValidationError(f"region {r.id}: unknown bus {bus}")
            if bus == case.slack_bus:
                raise ValidationError(f"region {r.id}: contains the slack bus")
            if bus in seen_region_buses:
                raise ValidationError(
                    f"bus {bus} appears in regions {seen_region_buses[bus]} and {r.id}"
                )
            seen_region_buses[bus] = r.id
    for u in case.pv_units:
        if u.bus not in label_set:
            raise ValidationError(f"pv agent {u.agent_id}: unknown bus {u.bus}")
        if u.s_max <= 0:
            raise ValidationError(f"pv agent {u.agent_id}: s_max must be positive")
        region = next((r for r in case.regions if r.id == u.region_id), None)
        if region is None:
            raise ValidationError(
                f"pv agent {u.agent_id}: unknown region {u.region_id}"
            )
        if u.bus not in region.bus_set:
            raise ValidationError(
                f"pv agent {u.agent_id}: bus {u.bus} not in region {u.region_id}"
            )
    load_buses: set[int] = set()
    for ld in case.loads:
        if ld.bus not in label_set:
            raise ValidationError(f"load at unknown bus {ld.bus}")
        if ld.bus in load_buses:
            raise ValidationError(f"more than one load at bus {ld.bus}")
        load_buses.add(ld.bus)


# -- case document (structured text) ---------------------------------------

_HEADER_FIELDS = ("name", "base_power_mva", "v_ref_pu")


def _require(mapping: Mapping, field_name: str, context: str):
    if field_name not in mapping:
        raise ParseError(f"{context}: missing field '{field_name}'")
    return mapping[field_name]


def _number(mapping: Mapping, field_name: str, context: str) -> float:
    value = _require(mapping, field_name, context)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{context}: field '{field_name}' is not a number")
    return float(value)


def _integer(mapping: Mapping, field_name: str, context: str) -> int:
    value = _require(mapping, field_name, context)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"{context}: field '{field_name}' is not an integer")
    return value


def parse_case(source: str | Path | Mapping) -> NetworkCase:
    """Parse a case document (JSON text, path to one, or parsed mapping)."""
    if isinstance(source, Mapping):
        doc = source
    else:
        if isinstance(source, Path):
            text = source.read_text()
        else:
            text = str(source)
            candidate = Path(text)
            if "\n" not in text and len(text) < 4096 and candidate.is_file():
                text = candidate.read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed case document: {exc}") from exc
    if not isinstance(doc, Mapping):
        raise ParseError("case document root must be an object")

    name = str(_require(doc, "name", "header"))
    base_power = _number(doc, "base_power_mva", "header")
    v_ref = _number(doc, "v_ref_pu", "header")

    buses = []
    for i, entry in enumerate(_require(doc, "buses", "document")):
        ctx = f"buses[{i}]"
        bus = Bus(
            index=_integer(entry, "index", ctx),
            nominal_kv=_number(entry, "nominal_kv", ctx),
            v_min=_number(entry, "v_min_pu", ctx) if "v_min_pu" in entry else 0.95,
            v_max=_number(entry, "v_max_pu", ctx) if "v_max_pu" in entry else 1.05,
        )
        buses.append(bus)
    branches = []
    for i, entry in enumerate(_require(doc, "branches", "document")):
        ctx = f"branches[{i}]"
        branches.append(
            Branch(
                from_bus=_integer(entry, "from", ctx),
                to_bus=_integer(entry, "to", ctx),
                r=_number(entry, "r_pu", ctx),
                x=_number(entry, "x_pu", ctx),
                tap_ratio=(
                    _number(entry, "tap_ratio", ctx) if "tap_ratio" in entry else 1.0
                ),
                rating_mva=(
                    _number(entry, "rating_mva", ctx)
                    if entry.get("rating_mva") is not None
                    else None
                ),
            )
        )
    pvs = []
    for i, entry in enumerate(doc.get("pvs", ())):
        ctx = f"pvs[{i}]"
        pvs.append(
            PvUnit(
                bus=_integer(entry, "bus", ctx),
                agent_id=_integer(entry, "agent_id", ctx),
                s_max=_number(entry, "s_max_mva", ctx),
                region_id=_integer(entry, "region", ctx),
            )
        )
    loads = []
    for i, entry in enumerate(doc.get("loads", ())):
        ctx = f"loads[{i}]"
        loads.append(
            LoadUnit(
                bus=_integer(entry, "bus", ctx),
                profile_id=_integer(entry, "profile_id", ctx),
            )
        )
    regions = []
    for i, entry in enumerate(doc.get("regions", ())):
        ctx = f"regions[{i}]"
        bus_list = _require(entry, "buses", ctx)
        if not isinstance(bus_list, Iterable) or isinstance(bus_list, (str, bytes)):
            raise ParseError(f"{ctx}: field 'buses' is not a list")
        regions.append(
            Region(id=_integer(entry, "id", ctx), bus_set=frozenset(int(b) for b in bus_list))
        )

    extra = doc.get("action_bound_ratio", 0.8)
    return NetworkCase(
        name=name,
        buses=tuple(buses),
        branches=tuple(branches),
        pv_units=tuple(pvs),
        loads=tuple(loads),
        regions=tuple(regions),
        v_ref=v_ref,
        base_power=base_power,
        action_bound=float(extra),
    )


def dump_case(case: NetworkCase) -> str:
    """Serialize a case back to its document form (parse/dump round-trips)."""
    doc = {
        "name": case.name,
        "base_power_mva": case.base_power,
        "v_ref_pu": case.v_ref,
        "action_bound_ratio": case.action_bound,
        "buses": [
            {
                "index": b.index,
                "nominal_kv": b.nominal_kv,
                "v_min_pu": b.v_min,
                "v_max_pu": b.v_max,
            }
            for b in case.buses
        ],
        "branches": [
            {
                "from": br.from_bus,
                "to": br.to_bus,
                "r_pu": br.r,
                "x_pu": br.x,
                "tap_ratio": br.tap_ratio,
                **({"rating_mva": br.rating_mva} if br.rating_mva is not None else {}),
            }
            for br in case.branches
        ],
        "pvs": [
            {
                "bus": u.bus,
                "agent_id": u.agent_id,
                "s_max_mva": u.s_max,
                "region": u.region_id,
            }
            for u in case.agents()
        ],
        "loads": [
            {"bus": ld.bus, "profile_id": ld.profile_id} for ld in case.loads
        ],
        "regions": [
            {"id": r.id, "buses": sorted(r.bus_set)} for r in case.regions
        ],
    }
    return json.dumps(doc, indent=1)


def load_case(path: str | Path) -> NetworkCase:
    return parse_case(Path(path))
