"""Estimator input assembly: placement, real and pseudo measurements.

Three measurement constellations are modeled. K1 meters each feeder head,
K2 meters the transformer total, K3 has smart-meter data only. Buses
without a smart meter receive pseudo-measurements: profile-based under K3,
residual power distributed proportionally to annual consumption under K2
(grid level) and K1 (feeder level).

Power values in a MeasurementSet are device-total kW (signed, consumption
positive); the estimator converts to per-phase quantities internally.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GridNetwork
from .powerflow import SnapshotState
from .profiles import Profile

SIGMA_REAL = 0.017  # relative, smart meter gateway P/Q readings
SIGMA_SLACK = 0.005  # relative, slack voltage reference
PSEUDO_COS_PHI = 0.95
HOURS_PER_YEAR = 8760.0


class MeasurementError(ValueError):
    """Raised on infeasible measurement configurations."""


@dataclass(frozen=True)
class Constellation:
    kind: str
    pseudo_sigma: float


CONSTELLATIONS = {
    "K1": Constellation("K1", 0.15),
    "K2": Constellation("K2", 0.25),
    "K3": Constellation("K3", 0.40),
}

PLACEMENT_STRATEGIES = ("power_first", "consumption_first", "random")
RANDOM_PLACEMENT_SEEDS = tuple(range(10))


@dataclass
class MeasurementSet:
    """All estimator inputs for one snapshot."""

    constellation: str
    real: dict[str, tuple[float, float]]  # bus -> (P_kw, Q_kw), metered
    pseudo: dict[str, tuple[float, float]]  # bus -> (P_kw, Q_kw), synthetic
    sigma_real: float
    sigma_pseudo: float
    slack_v_pu: float
    sigma_slack: float
    grid_p_kw: float | None = None  # K2 transformer total
    feeder_p_kw: dict[str, float] | None = None  # K1 per feeder head
    voltage_meas: dict[str, complex] = field(default_factory=dict)  # volts

    def validate_coverage(self, net: GridNetwork):
        load_ids = {b.id for b in net.load_buses}
        covered = set(self.real) | set(self.pseudo)
        if set(self.real) & set(self.pseudo):
            raise MeasurementError("bus with both real and pseudo measurement")
        if covered != load_ids:
            raise MeasurementError("real/pseudo sets do not partition the load buses")

    def count_per_phase(self, net: GridNetwork) -> int:
        """Measurement count per phase, pseudo and slack reference included."""
        n = 2 * (len(self.real) + len(self.pseudo))
        n += 2 * sum(1 for b in net.buses if b.kind == "junction")
        n += 1  # slack voltage reference
        if self.grid_p_kw is not None:
            n += 1
        if self.feeder_p_kw is not None:
            n += len(self.feeder_p_kw)
        n += len(self.voltage_meas)
        return n

    def to_json(self) -> str:
        payload = {
            "constellation": self.constellation,
            "real": self.real,
            "pseudo": self.pseudo,
            "sigma_real": self.sigma_real,
            "sigma_pseudo": self.sigma_pseudo,
            "slack_v_pu": self.slack_v_pu,
            "sigma_slack": self.sigma_slack,
            "grid_p_kw": self.grid_p_kw,
            "feeder_p_kw": self.feeder_p_kw,
            "voltage_meas": {k: [v.real, v.imag] for k, v in self.voltage_meas.items()},
        }
        return json.dumps(payload, indent=1)


# --- placement ----------------------------------------------------------------


def place_smgw(
    net: GridNetwork,
    n_real: int,
    strategy: str,
    snapshot: SnapshotState | None = None,
    seed: int = 0,
) -> list[str]:
    """Choose the metered NCP buses.

    power_first ranks by instantaneous apparent power (an oracle that needs
    the snapshot), consumption_first by the annual billing proxy, random is
    a uniform draw. Ties break toward ascending bus id.
    """
    ncps = sorted(net.ncp_buses, key=lambda b: b.id)
    if not (0 <= n_real <= len(ncps)):
        raise MeasurementError(f"n_real={n_real} outside [0, {len(ncps)}]")
    if n_real == 0:
        return []

    if strategy == "power_first":
        if snapshot is None or snapshot.s_injection is None:
            raise MeasurementError("power_first placement needs a converged snapshot")
        key = {b.id: abs(snapshot.s_injection[net.bus_index[b.id]]) for b in ncps}
        ranked = sorted(ncps, key=lambda b: (-key[b.id], b.id))
    elif strategy == "consumption_first":
        ranked = sorted(ncps, key=lambda b: (-b.annual_energy_kwh, b.id))
    elif strategy == "random":
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(ncps), size=n_real, replace=False)
        return sorted(ncps[i].id for i in picked)
    else:
        raise MeasurementError(f"unknown placement strategy {strategy!r}")
    return sorted(b.id for b in ranked[:n_real])


# --- weights and pseudo models --------------------------------------------------


def compute_weights(net: GridNetwork, subset: list[str]) -> dict[str, float]:
    """Consumption-proportional weights over ``subset``, summing to one."""
    energies = {bus_id: net.bus(bus_id).annual_energy_kwh for bus_id in subset}
    total = sum(energies.values())
    if total <= 0:
        raise MeasurementError("all-zero annual consumption in weight subset")
    return {bus_id: e / total for bus_id, e in energies.items()}


def snapshot_injections_kw(net: GridNetwork, snapshot: SnapshotState) -> dict[str, tuple[float, float]]:
    """True device-total (P, Q) in kW per load bus at the snapshot."""
    out = {}
    for b in net.load_buses:
        s = snapshot.s_injection[net.bus_index[b.id]]
        out[b.id] = (s.real * 3.0 / 1e3, s.imag * 3.0 / 1e3)
    return out


def trafo_power_kw(net: GridNetwork, snapshot: SnapshotState) -> float:
    """Transformer total active power, approximated from the snapshot as the
    sum of positive node injections."""
    inj = snapshot_injections_kw(net, snapshot)
    return sum(max(p, 0.0) for p, _ in inj.values())


def feeder_power_kw(net: GridNetwork, snapshot: SnapshotState) -> dict[str, float]:
    """Per-feeder active power, positive node injections summed per feeder."""
    inj = snapshot_injections_kw(net, snapshot)
    out = {}
    for head, members in net.feeders.items():
        out[head] = sum(max(inj[m][0], 0.0) for m in members if m in inj)
    return out


def unit_mean_h0(h0: Profile) -> np.ndarray:
    """Generic household reference shape normalized to unit mean."""
    return h0.values / h0.values.mean()


def pseudo_k3(
    net: GridNetwork, f_h0_t: float, buses: list[str] | None = None,
) -> dict[str, float]:
    """Profile-only pseudo active power: H0 shape times each bus's mean demand."""
    targets = buses if buses is not None else [b.id for b in net.load_buses]
    out = {}
    for bus_id in targets:
        p_mean_kw = net.bus(bus_id).annual_energy_kwh / HOURS_PER_YEAR
        out[bus_id] = f_h0_t * p_mean_kw
    return out


def _distribute_residual(
    residual_kw: float, unmetered: list[str], net: GridNetwork,
) -> dict[str, float]:
    """Spread a residual power over buses proportionally to annual energy.

    A zero-weight group (all proxies zero, e.g. only non-NCP buses remain
    unmetered) receives zero-valued pseudos; the residual is then
    unattributable under the proportional model.
    """
    if not unmetered:
        return {}
    energies = {b: net.bus(b).annual_energy_kwh for b in unmetered}
    total = sum(energies.values())
    if total <= 0:
        return {b: 0.0 for b in unmetered}
    return {b: residual_kw * energies[b] / total for b in unmetered}


def pseudo_k2(
    p_trafo_kw: float,
    real: dict[str, tuple[float, float]] | dict[str, float],
    net: GridNetwork,
    buses: list[str] | None = None,
) -> dict[str, float]:
    """Distribute the metered-residual transformer power over unmetered buses."""
    metered_p = sum(v[0] if isinstance(v, tuple) else v for v in real.values())
    if buses is None:
        buses = [b.id for b in net.load_buses if b.id not in real]
    return _distribute_residual(p_trafo_kw - metered_p, buses, net)


def pseudo_k1(
    p_feeder_kw: dict[str, float],
    real: dict[str, tuple[float, float]] | dict[str, float],
    net: GridNetwork,
) -> dict[str, float]:
    """Feeder-level variant of the residual distribution."""
    out: dict[str, float] = {}
    load_ids = {b.id for b in net.load_buses}
    for head, members in net.feeders.items():
        feeder_loads = [m for m in members if m in load_ids]
        metered_p = sum(
            (real[m][0] if isinstance(real[m], tuple) else real[m])
            for m in feeder_loads if m in real
        )
        unmetered = [m for m in feeder_loads if m not in real]
        residual = p_feeder_kw.get(head, 0.0) - metered_p
        out.update(_distribute_residual(residual, unmetered, net))
    return out


# --- real measurement synthesis -------------------------------------------------


def synthesize_real(
    net: GridNetwork,
    snapshot: SnapshotState,
    metered: list[str],
    rng: np.random.Generator,
    sigma: float = SIGMA_REAL,
) -> dict[str, tuple[float, float]]:
    """Noisy (P, Q) readings at the metered buses, sigma relative to value."""
    truth = snapshot_injections_kw(net, snapshot)
    out = {}
    for bus_id in metered:
        p, q = truth[bus_id]
        if sigma > 0:
            p = p + rng.normal(0.0, sigma * abs(p))
            q = q + rng.normal(0.0, sigma * abs(q))
        out[bus_id] = (p, q)
    return out


def _pseudo_pq(p_kw: dict[str, float]) -> dict[str, tuple[float, float]]:
    tan_phi = math.tan(math.acos(PSEUDO_COS_PHI))
    return {b: (p, p * tan_phi) for b, p in p_kw.items()}


def build_measurement_set(
    net: GridNetwork,
    snapshot: SnapshotState,
    constellation: str,
    n_real: int,
    strategy: str = "power_first",
    seed: int = 0,
    f_h0_t: float = 1.0,
    sigma_real: float = SIGMA_REAL,
    slack_v_pu: float | None = None,
    grid_noise: bool = False,
) -> MeasurementSet:
    """Assemble the full estimator input for one snapshot.

    Grid-level totals are taken pre-noise from the snapshot unless
    ``grid_noise`` is set. The slack reference defaults to the network's
    configured estimation-side voltage.
    """
    if constellation not in CONSTELLATIONS:
        raise MeasurementError(f"unknown constellation {constellation!r}")
    con = CONSTELLATIONS[constellation]
    rng = np.random.default_rng(seed)

    metered = place_smgw(net, n_real, strategy, snapshot=snapshot, seed=seed)
    real = synthesize_real(net, snapshot, metered, rng, sigma=sigma_real)
    unmetered = [b.id for b in net.load_buses if b.id not in real]

    grid_p = None
    feeder_p = None
    if constellation == "K2":
        grid_p = trafo_power_kw(net, snapshot)
        if grid_noise and sigma_real > 0:
            grid_p += rng.normal(0.0, sigma_real * abs(grid_p))
        pseudo_p = pseudo_k2(grid_p, real, net, buses=unmetered)
    elif constellation == "K1":
        feeder_p = feeder_power_kw(net, snapshot)
        if grid_noise and sigma_real > 0:
            feeder_p = {
                h: p + rng.normal(0.0, sigma_real * abs(p)) for h, p in feeder_p.items()
            }
        pseudo_p = pseudo_k1(feeder_p, real, net)
    else:
        pseudo_p = pseudo_k3(net, f_h0_t, buses=unmetered)

    ms = MeasurementSet(
        constellation=constellation,
        real=real,
        pseudo=_pseudo_pq(pseudo_p),
        sigma_real=sigma_real,
        sigma_pseudo=con.pseudo_sigma,
        slack_v_pu=(slack_v_pu if slack_v_pu is not None
                    else net.transformer.se_slack_voltage),
        sigma_slack=SIGMA_SLACK,
        grid_p_kw=grid_p,
        feeder_p_kw=feeder_p,
    )
    ms.validate_coverage(net)
    return ms


def mirror_measurement_set(
    net: GridNetwork,
    snapshot: SnapshotState,
    sigma_real: float = SIGMA_REAL,
    noisy: bool = False,
    seed: int = 0,
    slack_v_pu: float | None = None,
) -> MeasurementSet:
    """Full-coverage input: exact P/Q everywhere plus true node voltages.

    The mirror configuration feeds the estimator its own ground truth; any
    residual deviation is algorithmic, not observational.
    """
    rng = np.random.default_rng(seed)
    all_loads = [b.id for b in net.load_buses]
    real = synthesize_real(net, snapshot, all_loads, rng,
                           sigma=sigma_real if noisy else 0.0)
    voltage_meas = {
        b.id: complex(snapshot.v[net.bus_index[b.id]]) for b in net.load_buses
    }
    ms = MeasurementSet(
        constellation="mirror",
        real=real,
        pseudo={},
        sigma_real=sigma_real,
        sigma_pseudo=0.0,
        slack_v_pu=(slack_v_pu if slack_v_pu is not None
                    else net.transformer.se_slack_voltage),
        sigma_slack=SIGMA_SLACK,
        voltage_meas=voltage_meas,
    )
    return ms
