"""Radial low-voltage network model.

A network is a rooted tree: one slack bus (the transformer LV busbar, held
at the OLTC target voltage) plus load and junction buses connected by
branches. Equipment quality levels swap the transformer rating, the cable
ampacity, and the per-km cable impedance while leaving the topology and
line lengths untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

X_MIN_OHM = 0.001  # lower clamp for branch reactance

NOMINAL_V = 231.0  # line-to-neutral volts


class GridFormatError(ValueError):
    """Raised when a grid file is malformed or violates model invariants."""


@dataclass(frozen=True)
class Bus:
    """One network node.

    ``annual_energy_kwh`` is the billing-derived consumption proxy used for
    pseudo-measurement weighting; it is zero for buses without a customer
    connection (``has_ncp=False``).
    """

    id: str
    kind: str  # "slack" | "load" | "junction"
    has_ncp: bool = False
    nominal_voltage: float = NOMINAL_V
    annual_energy_kwh: float = 0.0
    household_units: int = 0

    def __post_init__(self):
        if self.kind not in ("slack", "load", "junction"):
            raise GridFormatError(f"bus {self.id}: unknown kind {self.kind!r}")
        if self.annual_energy_kwh < 0:
            raise GridFormatError(f"bus {self.id}: negative annual energy")
        if self.has_ncp and self.kind != "load":
            raise GridFormatError(f"bus {self.id}: NCP on non-load bus")


@dataclass(frozen=True)
class Branch:
    """A line segment between two buses, oriented from_bus -> to_bus."""

    id: str
    from_bus: str
    to_bus: str
    resistance: float  # ohm
    reactance: float  # ohm, clamped to X_MIN_OHM at load time
    thermal_limit: float  # ampacity I_z in A
    length_m: float

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise GridFormatError(f"branch {self.id}: from == to")
        if self.thermal_limit <= 0:
            raise GridFormatError(f"branch {self.id}: thermal limit must be > 0")

    @property
    def impedance(self) -> complex:
        return complex(self.resistance, self.reactance)


@dataclass(frozen=True)
class Transformer:
    """MV/LV transformer feeding the slack bus.

    ``oltc_target`` is the regulated per-unit voltage held at the LV busbar
    during simulation; ``se_slack_voltage`` is the reference the estimator
    assumes (nominally 1.0 p.u.).
    """

    rating_kva: float
    lv_bus: str
    oltc_target: float = 1.0
    se_slack_voltage: float = 1.0

    def __post_init__(self):
        if self.rating_kva <= 0:
            raise GridFormatError("transformer rating must be > 0")


@dataclass(frozen=True)
class EquipmentLevel:
    """One row of the equipment-quality table for a given area type."""

    level: str  # "good" | "medium" | "poor"
    area: str  # "rural" | "urban"
    transformer_kva: float
    cable_ampacity_a: float
    r_ohm_per_km: float
    x_ohm_per_km: float
    cable_type: str = ""


# Transformer kVA and cable ampacity per quality level. Per-km impedances are
# catalog values for the associated NAYY cross-sections; the source tables do
# not fix them, so they are grid-file data, not constants of the model.
EQUIPMENT_TABLE: dict[tuple[str, str], EquipmentLevel] = {
    ("good", "rural"): EquipmentLevel("good", "rural", 400.0, 270.0, 0.206, 0.080, "NAYY 4x150"),
    ("good", "urban"): EquipmentLevel("good", "urban", 630.0, 357.0, 0.125, 0.079, "NAYY 4x240"),
    ("medium", "rural"): EquipmentLevel("medium", "rural", 250.0, 242.0, 0.253, 0.080, "NAYY 4x120"),
    ("medium", "urban"): EquipmentLevel("medium", "urban", 400.0, 270.0, 0.206, 0.080, "NAYY 4x150"),
    ("poor", "rural"): EquipmentLevel("poor", "rural", 160.0, 142.0, 0.641, 0.085, "NAYY 4x50"),
    ("poor", "urban"): EquipmentLevel("poor", "urban", 250.0, 242.0, 0.253, 0.080, "NAYY 4x120"),
}


@dataclass
class GridNetwork:
    """Validated radial network with derived structural indexes.

    Buses and branches are immutable; the network object itself is treated
    as read-only after construction and is safe to share across workers.
    """

    name: str
    area: str
    buses: list[Bus]
    branches: list[Branch]
    transformer: Transformer
    equipment_levels: dict[tuple[str, str], EquipmentLevel] = field(default_factory=dict)
    applied_level: str | None = None

    # derived, filled by _index()
    bus_index: dict[str, int] = field(default_factory=dict, repr=False)
    parent_branch: dict[str, Branch] = field(default_factory=dict, repr=False)
    children: dict[str, list[str]] = field(default_factory=dict, repr=False)
    bfs_order: list[str] = field(default_factory=list, repr=False)
    feeders: dict[str, list[str]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._validate()
        self._index()

    # -- validation ---------------------------------------------------------

    def _validate(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise GridFormatError("duplicate bus ids")
        bids = [br.id for br in self.branches]
        if len(set(bids)) != len(bids):
            raise GridFormatError("duplicate branch ids")
        slacks = [b for b in self.buses if b.kind == "slack"]
        if len(slacks) != 1:
            raise GridFormatError(f"expected exactly one slack bus, found {len(slacks)}")
        if self.transformer.lv_bus != slacks[0].id:
            raise GridFormatError("transformer lv_bus must be the slack bus")
        known = set(ids)
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise GridFormatError(f"branch {br.id}: unknown endpoint")
        if len(self.branches) != len(self.buses) - 1:
            raise GridFormatError(
                f"not radial: {len(self.branches)} branches for {len(self.buses)} buses"
            )

    def _index(self):
        self.bus_index = {b.id: i for i, b in enumerate(self.buses)}
        adj: dict[str, list[tuple[str, Branch]]] = {b.id: [] for b in self.buses}
        for br in self.branches:
            adj[br.from_bus].append((br.to_bus, br))
            adj[br.to_bus].append((br.from_bus, br))

        root = self.slack_bus.id
        order = [root]
        seen = {root}
        parent: dict[str, Branch] = {}
        children: dict[str, list[str]] = {b.id: [] for b in self.buses}
        head = 0
        while head < len(order):
            u = order[head]
            head += 1
            for v, br in adj[u]:
                if v in seen:
                    continue
                seen.add(v)
                parent[v] = br
                children[u].append(v)
                order.append(v)
        if len(seen) != len(self.buses):
            raise GridFormatError("network is not connected")

        self.parent_branch = parent
        self.children = children
        self.bfs_order = order
        self.feeders = derive_feeders_from_tree(root, children)

    # -- convenience --------------------------------------------------------

    @property
    def slack_bus(self) -> Bus:
        return next(b for b in self.buses if b.kind == "slack")

    @property
    def load_buses(self) -> list[Bus]:
        return [b for b in self.buses if b.kind == "load"]

    @property
    def ncp_buses(self) -> list[Bus]:
        return [b for b in self.buses if b.has_ncp]

    def bus(self, bus_id: str) -> Bus:
        return self.buses[self.bus_index[bus_id]]

    def path_to_slack(self, bus_id: str) -> list[Branch]:
        """Branches from ``bus_id`` up to (excluding) the slack bus."""
        path = []
        u = bus_id
        while u in self.parent_branch:
            br = self.parent_branch[u]
            path.append(br)
            u = br.from_bus if br.to_bus == u else br.to_bus
        return path

    def feeder_of(self, bus_id: str) -> str:
        for head, members in self.feeders.items():
            if bus_id in members:
                return head
        raise KeyError(bus_id)


def derive_feeders_from_tree(root: str, children: dict[str, list[str]]) -> dict[str, list[str]]:
    """Partition all non-root buses into subtrees rooted at the root's children.

    Key = the slack-adjacent bus heading the feeder; value = every bus in
    that subtree (head included).
    """
    feeders: dict[str, list[str]] = {}
    for head in children[root]:
        members = [head]
        stack = [head]
        while stack:
            u = stack.pop()
            for v in children[u]:
                members.append(v)
                stack.append(v)
        feeders[head] = sorted(members)
    return feeders


def derive_feeders(net: GridNetwork) -> dict[str, list[str]]:
    """Feeder partition of all non-slack buses (recomputed from topology)."""
    return derive_feeders_from_tree(net.slack_bus.id, net.children)


def load_network(path: str | Path) -> GridNetwork:
    """Load and validate a grid JSON file.

    Reactances below ``X_MIN_OHM`` are clamped up; topology must be a
    connected tree with exactly one slack bus.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise GridFormatError(f"{path}: invalid JSON ({exc})") from exc

    for section in ("buses", "branches", "transformer"):
        if section not in raw:
            raise GridFormatError(f"{path}: missing section {section!r}")

    buses = [
        Bus(
            id=str(b["id"]),
            kind=b["kind"],
            has_ncp=bool(b.get("has_ncp", False)),
            nominal_voltage=float(b.get("nominal_voltage", NOMINAL_V)),
            annual_energy_kwh=float(b.get("annual_energy_kwh", 0.0)),
            household_units=int(b.get("household_units", 0)),
        )
        for b in raw["buses"]
    ]
    branches = [
        Branch(
            id=str(br["id"]),
            from_bus=str(br["from_bus"]),
            to_bus=str(br["to_bus"]),
            resistance=float(br["r_ohm"]),
            reactance=max(float(br["x_ohm"]), X_MIN_OHM),
            thermal_limit=float(br["thermal_limit_a"]),
            length_m=float(br["length_m"]),
        )
        for br in raw["branches"]
    ]
    t = raw["transformer"]
    transformer = Transformer(
        rating_kva=float(t["rating_kva"]),
        lv_bus=str(t["lv_bus"]),
        oltc_target=float(t.get("oltc_target", 1.0)),
        se_slack_voltage=float(t.get("se_slack_voltage", 1.0)),
    )

    levels: dict[tuple[str, str], EquipmentLevel] = {}
    for row in raw.get("equipment_levels", []):
        lv = EquipmentLevel(
            level=row["level"],
            area=row["area"],
            transformer_kva=float(row["transformer_kva"]),
            cable_ampacity_a=float(row["cable_ampacity_a"]),
            r_ohm_per_km=float(row["r_ohm_per_km"]),
            x_ohm_per_km=float(row["x_ohm_per_km"]),
            cable_type=row.get("cable_type", ""),
        )
        levels[(lv.level, lv.area)] = lv

    return GridNetwork(
        name=raw.get("name", path.stem),
        area=raw.get("area", "rural"),
        buses=buses,
        branches=branches,
        transformer=transformer,
        equipment_levels=levels,
        applied_level=raw.get("applied_level"),
    )


def apply_equipment_level(net: GridNetwork, level: str) -> GridNetwork:
    """Return a copy of ``net`` parameterized to the given quality level.

    Per-km impedances are recomputed from branch lengths (idempotent),
    ampacities and the transformer rating are replaced. Topology, lengths
    and the bus set are untouched.
    """
    key = (level, net.area)
    row = net.equipment_levels.get(key) or EQUIPMENT_TABLE.get(key)
    if row is None:
        raise GridFormatError(f"unknown equipment level {level!r} for area {net.area!r}")

    branches = [
        replace(
            br,
            resistance=row.r_ohm_per_km * br.length_m / 1000.0,
            reactance=max(row.x_ohm_per_km * br.length_m / 1000.0, X_MIN_OHM),
            thermal_limit=row.cable_ampacity_a,
        )
        for br in net.branches
    ]
    transformer = replace(net.transformer, rating_kva=row.transformer_kva)
    return GridNetwork(
        name=net.name,
        area=net.area,
        buses=list(net.buses),
        branches=branches,
        transformer=transformer,
        equipment_levels=dict(net.equipment_levels),
        applied_level=level,
    )
