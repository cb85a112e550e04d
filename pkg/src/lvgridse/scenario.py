"""Energy-transition scenarios: pathway tables, device scaling, assignment.

A scenario fixes (area, year, pathway) from the 26-row study matrix, scales
the pathway's per-100-household device densities to the network's household
count, and distributes the resulting integer device totals over the NCPs at
random. Everything is deterministic given the scenario seed.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from importlib import resources
from pathlib import Path

import numpy as np

from .grid import GridNetwork
from .profiles import PV_KWP

ANCHOR_YEARS = (2025, 2030, 2035, 2040, 2045)
PATHWAYS = ("federal_government", "agora", "fraunhofer")
CATEGORIES = ("public_cp", "ev", "pv", "heat_pump")

# national household stock in millions, linearly interpolated between anchors
_HOUSEHOLDS_M = {2025: 42.0, 2030: 42.15, 2035: 42.30, 2040: 42.45, 2045: 42.6}

PV_ORIENTATION_SHARES = (("south", 0.60), ("west", 0.21), ("east", 0.19))


class ScenarioError(ValueError):
    """Raised on inconsistent scenario inputs."""


@dataclass(frozen=True)
class PathwayTable:
    """Per-category anchor-year values for one pathway.

    ``values[category][year]`` uses the table's native units: device counts
    per 100 households, except rooftop PV which is national GW.
    """

    pathway: str
    values: dict[str, dict[int, float]]

    def __post_init__(self):
        for cat in CATEGORIES:
            if cat not in self.values:
                raise ScenarioError(f"{self.pathway}: missing category {cat!r}")


def load_pathway_csv(path: str | Path) -> dict[str, PathwayTable]:
    """Read a pathway CSV with columns (pathway, category, year, value, unit)."""
    tables: dict[str, dict[str, dict[int, float]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            tables.setdefault(row["pathway"], {}).setdefault(row["category"], {})[
                int(row["year"])
            ] = float(row["value"])
    return {p: PathwayTable(p, vals) for p, vals in tables.items()}


def builtin_pathways() -> dict[str, PathwayTable]:
    """The three bundled transition pathways (ranges resolved to upper bounds)."""
    ref = resources.files("lvgridse.data").joinpath("pathways.csv")
    with resources.as_file(ref) as path:
        return load_pathway_csv(path)


def interpolate_pathway(table: PathwayTable, year: float) -> dict[str, float]:
    """Piecewise-linear per-category values at ``year`` (exact at anchors)."""
    if not (ANCHOR_YEARS[0] <= year <= ANCHOR_YEARS[-1]):
        raise ScenarioError(f"year {year} outside {ANCHOR_YEARS[0]}-{ANCHOR_YEARS[-1]}")
    out = {}
    for cat in CATEGORIES:
        anchors = sorted(table.values[cat])
        ys = [table.values[cat][a] for a in anchors]
        out[cat] = float(np.interp(year, anchors, ys))
    return out


def households_million(year: float) -> float:
    anchors = sorted(_HOUSEHOLDS_M)
    return float(np.interp(year, anchors, [_HOUSEHOLDS_M[a] for a in anchors]))


def pv_gw_to_per_100hh(gw: float, year: float) -> float:
    """Convert national rooftop-PV GW to systems per 100 households.

    Systems are counted at the simulated typical size (PV_KWP); the
    household stock follows the interpolated national projection.
    """
    systems = gw * 1e6 / PV_KWP
    return systems / (households_million(year) * 1e6) * 100.0


def _round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def scale_to_network(per_100hh: float, net: GridNetwork) -> int:
    """Scale a per-100-household density to the network's household stock."""
    total_hh = sum(b.household_units for b in net.ncp_buses)
    return _round_half_away(per_100hh / 100.0 * total_hh)


def device_totals(table: PathwayTable, year: float, net: GridNetwork) -> dict[str, int]:
    """Integer device totals for one network at one pathway year."""
    raw = interpolate_pathway(table, year)
    per_100hh = {
        "public_cp": raw["public_cp"],
        "ev": raw["ev"],
        "pv": pv_gw_to_per_100hh(raw["pv"], year),
        "heat_pump": raw["heat_pump"],
    }
    return {cat: scale_to_network(v, net) for cat, v in per_100hh.items()}


@dataclass
class DeviceAssignment:
    """Devices and profile bindings attached to one NCP.

    ``household_scale`` captures the drift of the scenario-year household
    demand relative to the historical billing proxy: billing records lag
    occupancy and efficiency changes, so actual consumption is the proxy
    level times this factor.
    """

    ncp_id: str
    household_units: int
    household_variant: int
    household_scale: float = 1.0
    ev_count: int = 0
    heat_pump_count: int = 0
    public_cp_count: int = 0
    pv_orientations: list[str] = field(default_factory=list)
    ev_variants: list[int] = field(default_factory=list)

    @property
    def pv_count(self) -> int:
        return len(self.pv_orientations)


def _allocate_orientations(n: int) -> list[str]:
    """Split n PV systems 60/21/19 south/west/east by largest remainder."""
    if n == 0:
        return []
    quotas = [(name, n * share) for name, share in PV_ORIENTATION_SHARES]
    counts = {name: math.floor(q) for name, q in quotas}
    remainder = n - sum(counts.values())
    by_frac = sorted(quotas, key=lambda t: (-(t[1] - math.floor(t[1])), t[0]))
    for name, _ in by_frac[:remainder]:
        counts[name] += 1
    out = []
    for name, _ in PV_ORIENTATION_SHARES:
        out.extend([name] * counts[name])
    return out


def _billing_drift(
    rng: np.random.Generator, sigma: float, vacancy_prob: float, energy_ratio: float,
) -> float:
    """Scenario-year household level relative to the historical billing proxy.

    Most homes drift mildly. A minority consume far below their recorded
    billing energy (moves, vacancies, and in particular legacy
    electric-heating retrofits); that group skews toward homes with high
    recorded consumption, so its draw probability scales with the bus's
    energy relative to the network mean.
    """
    p = min(vacancy_prob * energy_ratio, 0.55)
    if rng.random() < p:
        return float(rng.uniform(0.20, 0.50))
    return float(np.clip(rng.lognormal(mean=0.0, sigma=sigma), 0.60, 1.90))


def assign_devices(
    totals: dict[str, int], net: GridNetwork, seed: int, n_household_variants: int = 12,
    n_ev_variants: int = 16, billing_drift_sigma: float = 0.10,
    vacancy_prob: float = 0.22,
) -> list[DeviceAssignment]:
    """Distribute device totals uniformly at random over the NCPs.

    Each NCP offers ``household_units`` placement slots per category, so
    multi-family buildings can host several devices of the same kind.
    Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    ncps = sorted(net.ncp_buses, key=lambda b: b.id)
    mean_e = np.mean([b.annual_energy_kwh for b in ncps]) or 1.0
    assignments = {
        b.id: DeviceAssignment(
            ncp_id=b.id,
            household_units=b.household_units,
            household_variant=int(rng.integers(0, n_household_variants)),
            household_scale=_billing_drift(rng, billing_drift_sigma, vacancy_prob,
                                           b.annual_energy_kwh / mean_e),
        )
        for b in ncps
    }

    # per-NCP placement capacity in household units; EVs may reach two per
    # household (pathway densities exceed one per household by 2045)
    slot_multiplier = {"ev": 2, "heat_pump": 1, "pv": 1, "public_cp": 1}

    def draw(total: int, category: str) -> list[str]:
        slots = [b.id for b in ncps
                 for _ in range(slot_multiplier[category] * b.household_units)]
        if total < 0:
            raise ScenarioError(f"{category}: negative total")
        if total > len(slots):
            raise ScenarioError(
                f"{category}: total {total} exceeds {len(slots)} placement slots"
            )
        picked = rng.choice(len(slots), size=total, replace=False)
        return [slots[i] for i in sorted(picked)]

    for bus_id in draw(totals.get("ev", 0), "ev"):
        a = assignments[bus_id]
        a.ev_count += 1
        a.ev_variants.append(int(rng.integers(0, n_ev_variants)))
    for bus_id in draw(totals.get("heat_pump", 0), "heat_pump"):
        assignments[bus_id].heat_pump_count += 1
    for bus_id in draw(totals.get("public_cp", 0), "public_cp"):
        assignments[bus_id].public_cp_count += 1

    orientations = _allocate_orientations(totals.get("pv", 0))
    pv_buses = draw(len(orientations), "pv")
    order = rng.permutation(len(orientations))
    for bus_id, k in zip(pv_buses, order):
        assignments[bus_id].pv_orientations.append(orientations[int(k)])

    return [assignments[b.id] for b in ncps]


# --- study matrix -------------------------------------------------------------

# (scenario_id, area, year, pathway); id 1 and 14 are the 2025 current state,
# identical across pathways by construction.
SCENARIO_MATRIX: list[tuple[int, str, int, str]] = [
    (1, "urban", 2025, "current_state"),
    (2, "urban", 2030, "federal_government"),
    (3, "urban", 2030, "agora"),
    (4, "urban", 2030, "fraunhofer"),
    (5, "urban", 2035, "federal_government"),
    (6, "urban", 2035, "agora"),
    (7, "urban", 2035, "fraunhofer"),
    (8, "urban", 2040, "federal_government"),
    (9, "urban", 2040, "agora"),
    (10, "urban", 2040, "fraunhofer"),
    (11, "urban", 2045, "federal_government"),
    (12, "urban", 2045, "agora"),
    (13, "urban", 2045, "fraunhofer"),
    (14, "rural", 2025, "current_state"),
    (15, "rural", 2030, "federal_government"),
    (16, "rural", 2030, "agora"),
    (17, "rural", 2030, "fraunhofer"),
    (18, "rural", 2035, "federal_government"),
    (19, "rural", 2035, "agora"),
    (20, "rural", 2035, "fraunhofer"),
    (21, "rural", 2040, "federal_government"),
    (22, "rural", 2040, "agora"),
    (23, "rural", 2040, "fraunhofer"),
    (24, "rural", 2045, "federal_government"),
    (25, "rural", 2045, "agora"),
    (26, "rural", 2045, "fraunhofer"),
]


@dataclass
class ScenarioSpec:
    """One fully specified scenario run (before equipment-level expansion)."""

    scenario_id: int
    area: str
    year: int
    pathway: str
    equipment_level: str
    seed: int
    totals: dict[str, int]
    assignments: list[DeviceAssignment]

    def to_json(self) -> str:
        payload = asdict(self)
        return json.dumps(payload, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        raw = json.loads(text)
        raw["assignments"] = [DeviceAssignment(**a) for a in raw["assignments"]]
        return cls(**raw)


def build_scenario(
    scenario_id: int,
    net: GridNetwork,
    equipment_level: str,
    seed: int = 0,
    pathways: dict[str, PathwayTable] | None = None,
) -> ScenarioSpec:
    """Instantiate one row of the study matrix on a concrete network."""
    row = next((r for r in SCENARIO_MATRIX if r[0] == scenario_id), None)
    if row is None:
        raise ScenarioError(f"unknown scenario id {scenario_id}")
    _, area, year, pathway = row
    if area != net.area:
        raise ScenarioError(
            f"scenario {scenario_id} is {area}, network {net.name!r} is {net.area}"
        )
    tables = pathways or builtin_pathways()
    # the 2025 current state equals the shared baseline column of every pathway
    table = tables["federal_government" if pathway == "current_state" else pathway]
    totals = device_totals(table, year, net)
    assignments = assign_devices(totals, net, seed=seed)
    return ScenarioSpec(
        scenario_id=scenario_id,
        area=area,
        year=year,
        pathway=pathway,
        equipment_level=equipment_level,
        seed=seed,
        totals=totals,
        assignments=assignments,
    )
