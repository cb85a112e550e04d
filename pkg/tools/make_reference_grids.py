"""Regenerate the bundled reference networks under src/lvgridse/data/.

The two reference networks mirror the structural statistics of typical
German LV benchmark grids (bus counts, feeder counts and sizes, NCP
shares) without redistributing any third-party data. Deterministic:
rerunning reproduces identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "lvgridse" / "data"

EQUIPMENT_ROWS = {
    "rural": [
        dict(level="good", area="rural", transformer_kva=400.0, cable_ampacity_a=270.0,
             r_ohm_per_km=0.206, x_ohm_per_km=0.080, cable_type="NAYY 4x150"),
        dict(level="medium", area="rural", transformer_kva=250.0, cable_ampacity_a=242.0,
             r_ohm_per_km=0.253, x_ohm_per_km=0.080, cable_type="NAYY 4x120"),
        dict(level="poor", area="rural", transformer_kva=160.0, cable_ampacity_a=142.0,
             r_ohm_per_km=0.641, x_ohm_per_km=0.085, cable_type="NAYY 4x50"),
    ],
    "urban": [
        dict(level="good", area="urban", transformer_kva=630.0, cable_ampacity_a=357.0,
             r_ohm_per_km=0.125, x_ohm_per_km=0.079, cable_type="NAYY 4x240"),
        dict(level="medium", area="urban", transformer_kva=400.0, cable_ampacity_a=270.0,
             r_ohm_per_km=0.206, x_ohm_per_km=0.080, cable_type="NAYY 4x150"),
        dict(level="poor", area="urban", transformer_kva=250.0, cable_ampacity_a=242.0,
             r_ohm_per_km=0.253, x_ohm_per_km=0.080, cable_type="NAYY 4x120"),
    ],
}


def _chain_with_spur(prefix: str, head_idx: int, n_total: int, spur_at: int, spur_len: int):
    """Bus ids and (from, to) pairs for a chain with one side spur."""
    main_len = n_total - spur_len
    ids = [f"{prefix}{head_idx + i:03d}" for i in range(n_total)]
    main = ids[:main_len]
    spur = ids[main_len:]
    edges = []
    for a, b in zip(main[:-1], main[1:]):
        edges.append((a, b))
    if spur:
        edges.append((main[min(spur_at, main_len - 1)], spur[0]))
        for a, b in zip(spur[:-1], spur[1:]):
            edges.append((a, b))
    return ids, edges


def build_network(
    name: str,
    area: str,
    feeder_sizes: list[int],
    spur_plan: dict[int, tuple[int, int]],
    n_ncp: int,
    non_ncp_picks: list[int],
    junction_picks: list[int],
    household_units: int,
    length_range: tuple[float, float],
    energy_mean: float,
    energy_sd: float,
    seed: int,
) -> dict:
    rng = np.random.default_rng(seed)
    good = EQUIPMENT_ROWS[area][0]

    buses = [dict(id="slack", kind="slack", has_ncp=False, annual_energy_kwh=0.0,
                  household_units=0)]
    branches = []
    bus_counter = 1
    branch_counter = 1
    all_lv_ids = []

    for f_idx, size in enumerate(feeder_sizes):
        spur_at, spur_len = spur_plan.get(f_idx, (0, 0))
        ids, edges = _chain_with_spur("b", bus_counter, size, spur_at, spur_len)
        bus_counter += size
        all_lv_ids.extend(ids)
        # feeder head hangs off the slack busbar
        edges = [("slack", ids[0])] + edges
        for a, b in edges:
            length = round(float(rng.uniform(*length_range)), 1)
            branches.append(dict(
                id=f"L{branch_counter:03d}", from_bus=a, to_bus=b,
                r_ohm=round(good["r_ohm_per_km"] * length / 1000.0, 6),
                x_ohm=round(good["x_ohm_per_km"] * length / 1000.0, 6),
                thermal_limit_a=good["cable_ampacity_a"],
                length_m=length,
            ))
            branch_counter += 1

    junction_ids = {all_lv_ids[i] for i in junction_picks}
    non_ncp_ids = {all_lv_ids[i] for i in non_ncp_picks}
    assert not junction_ids & non_ncp_ids

    n_load = 0
    for bus_id in all_lv_ids:
        if bus_id in junction_ids:
            buses.append(dict(id=bus_id, kind="junction", has_ncp=False,
                              annual_energy_kwh=0.0, household_units=0))
            continue
        n_load += 1
        if bus_id in non_ncp_ids:
            buses.append(dict(id=bus_id, kind="load", has_ncp=False,
                              annual_energy_kwh=0.0, household_units=0))
        else:
            e = float(np.clip(rng.normal(energy_mean, energy_sd),
                              0.55 * energy_mean, 1.75 * energy_mean))
            buses.append(dict(id=bus_id, kind="load", has_ncp=True,
                              annual_energy_kwh=round(e, 1),
                              household_units=household_units))

    ncp_count = sum(1 for b in buses if b["has_ncp"])
    assert ncp_count == n_ncp, (ncp_count, n_ncp)

    return dict(
        name=name,
        area=area,
        buses=buses,
        branches=branches,
        transformer=dict(rating_kva=good["transformer_kva"], lv_bus="slack",
                         oltc_target=1.0, se_slack_voltage=1.0),
        equipment_levels=EQUIPMENT_ROWS[area],
        applied_level="good",
    )


def make_rural() -> dict:
    # 9 feeders; 128 LV buses = 127 load (109 NCP + 18 non-NCP) + 1 junction
    feeder_sizes = [29, 25, 20, 17, 12, 10, 8, 6, 1]
    spur_plan = {0: (12, 9), 1: (9, 8), 2: (8, 6)}
    # junction sits mid-way in the largest feeder
    junction_picks = [10]
    # 18 dispersed non-NCP buses (historic cabinets, pumps, unconnected plots)
    non_ncp_picks = [4, 13, 21, 27, 33, 40, 48, 52, 60, 66, 73, 79, 85, 94, 101, 108, 115, 122]
    return build_network(
        name="rural_reference", area="rural",
        feeder_sizes=feeder_sizes, spur_plan=spur_plan,
        n_ncp=109, non_ncp_picks=non_ncp_picks, junction_picks=junction_picks,
        household_units=1, length_range=(28.0, 62.0),
        energy_mean=3500.0, energy_sd=950.0, seed=20240501,
    )


def make_urban() -> dict:
    # 7 feeders; 57 LV load buses = 53 NCP + 4 non-NCP, no junctions
    feeder_sizes = [18, 12, 9, 7, 6, 4, 1]
    spur_plan = {0: (8, 6), 1: (5, 4)}
    non_ncp_picks = [6, 20, 35, 49]
    return build_network(
        name="urban_reference", area="urban",
        feeder_sizes=feeder_sizes, spur_plan=spur_plan,
        n_ncp=53, non_ncp_picks=non_ncp_picks, junction_picks=[],
        household_units=6, length_range=(14.0, 34.0),
        energy_mean=21000.0, energy_sd=4200.0, seed=20240502,
    )


def make_three_bus() -> dict:
    return dict(
        name="three_bus", area="rural",
        buses=[
            dict(id="slack", kind="slack", has_ncp=False, annual_energy_kwh=0.0,
                 household_units=0),
            dict(id="b001", kind="load", has_ncp=True, annual_energy_kwh=3500.0,
                 household_units=1),
            dict(id="b002", kind="load", has_ncp=True, annual_energy_kwh=4200.0,
                 household_units=1),
        ],
        branches=[
            dict(id="L001", from_bus="slack", to_bus="b001", r_ohm=0.10, x_ohm=0.05,
                 thermal_limit_a=270.0, length_m=485.0),
            dict(id="L002", from_bus="b001", to_bus="b002", r_ohm=0.08, x_ohm=0.04,
                 thermal_limit_a=270.0, length_m=388.0),
        ],
        transformer=dict(rating_kva=400.0, lv_bus="slack", oltc_target=1.0,
                         se_slack_voltage=1.0),
        equipment_levels=EQUIPMENT_ROWS["rural"],
        applied_level="good",
    )


def make_ten_bus() -> dict:
    # slack + 9 load buses in two feeders; used by the UQ calibration check
    rng = np.random.default_rng(77)
    buses = [dict(id="slack", kind="slack", has_ncp=False, annual_energy_kwh=0.0,
                  household_units=0)]
    for i in range(1, 10):
        buses.append(dict(id=f"b{i:03d}", kind="load", has_ncp=True,
                          annual_energy_kwh=round(float(rng.uniform(2500, 5200)), 1),
                          household_units=1))
    edges = [("slack", "b001"), ("b001", "b002"), ("b002", "b003"), ("b003", "b004"),
             ("b004", "b005"), ("slack", "b006"), ("b006", "b007"), ("b007", "b008"),
             ("b008", "b009")]
    branches = []
    for k, (a, b) in enumerate(edges, start=1):
        length = round(float(rng.uniform(35, 60)), 1)
        branches.append(dict(id=f"L{k:03d}", from_bus=a, to_bus=b,
                             r_ohm=round(0.206 * length / 1000.0, 6),
                             x_ohm=round(0.080 * length / 1000.0, 6),
                             thermal_limit_a=270.0, length_m=length))
    return dict(
        name="ten_bus", area="rural",
        buses=buses, branches=branches,
        transformer=dict(rating_kva=400.0, lv_bus="slack", oltc_target=1.0,
                         se_slack_voltage=1.0),
        equipment_levels=EQUIPMENT_ROWS["rural"],
        applied_level="good",
    )


def main():
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    for fname, builder in [
        ("rural_reference.json", make_rural),
        ("urban_reference.json", make_urban),
        ("three_bus.json", make_three_bus),
        ("ten_bus.json", make_ten_bus),
    ]:
        payload = builder()
        out = DATA_DIR / fname
        out.write_text(json.dumps(payload, indent=1) + "\n")
        print(f"wrote {out} ({len(payload['buses'])} buses, {len(payload['branches'])} branches)")


if __name__ == "__main__":
    main()
