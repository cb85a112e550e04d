"""Full-year 15-minute device profiles and ZIP load parameters.

All profiles span a non-leap year, 365 days x 96 quarter-hours = 35,040
steps, step 0 = Jan 1 00:00-00:15. Values are device-total kW; consumption
is positive, generation (PV) negative.

The synthetic generators stand in for non-redistributable measurement
datasets. They reproduce the documented structural constraints (household
3,500 kWh/a with an evening peak, EV charging as 3.68 kW blocks with a 70%
daily plug-in factor, winter-weighted heat pumps with urban demand 4x
rural, an 11.5 kWp PV bell with south/west/east orientation shifts) while
everything finer-grained is an assumption of this package.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STEPS_PER_DAY = 96
DAYS_PER_YEAR = 365
STEPS_PER_YEAR = STEPS_PER_DAY * DAYS_PER_YEAR  # 35,040
STEP_HOURS = 0.25

HOUSEHOLD_KWH_PER_YEAR = 3500.0
EV_CHARGE_KW = 3.68
EV_PLUGIN_PROB = 0.70
PV_KWP = 11.5
URBAN_HH_PER_NCP = 6

DEVICE_CLASSES = ("household", "ev_private", "heat_pump", "pv", "public_cp")

N_HOUSEHOLD_VARIANTS = 12
N_EV_VARIANTS = 16

# Jan 1 of the modeled year falls on a Wednesday.
_FIRST_WEEKDAY = 2

_MONTH_DAYS = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)
_MONTH_OF_DAY = np.repeat(np.arange(12), _MONTH_DAYS)


class ProfileError(ValueError):
    """Raised on malformed or inconsistent profile data."""


@dataclass(frozen=True)
class ZipParams:
    """Voltage-dependence split (constant Z / I / P shares) and power factor."""

    z_share: float
    i_share: float
    p_share: float
    cos_phi: float

    def __post_init__(self):
        s = self.z_share + self.i_share + self.p_share
        if not math.isclose(s, 1.0, abs_tol=1e-9):
            raise ProfileError(f"ZIP shares must sum to 1, got {s}")
        if not (0.0 < self.cos_phi <= 1.0):
            raise ProfileError(f"cos phi out of (0, 1]: {self.cos_phi}")

    @property
    def tan_phi(self) -> float:
        return math.tan(math.acos(self.cos_phi))


_ZIP_TABLE = {
    "household": ZipParams(0.20, 0.10, 0.70, 0.98),
    "ev_private": ZipParams(0.05, 0.05, 0.90, 0.99),
    "heat_pump": ZipParams(0.10, 0.10, 0.80, 0.97),
    "pv": ZipParams(0.0, 0.0, 1.0, 1.00),
}


def builtin_zip(device_class: str) -> ZipParams:
    """ZIP parameters per device class; public charging behaves like EV."""
    key = "ev_private" if device_class == "public_cp" else device_class
    try:
        return _ZIP_TABLE[key]
    except KeyError:
        raise ProfileError(f"unknown device class {device_class!r}") from None


@dataclass
class Profile:
    device_class: str
    values: np.ndarray  # kW, length STEPS_PER_YEAR
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (STEPS_PER_YEAR,):
            raise ProfileError(
                f"{self.device_class}: expected {STEPS_PER_YEAR} steps, "
                f"got {self.values.shape}"
            )
        if self.device_class == "pv":
            if np.any(self.values > 1e-12):
                raise ProfileError("pv profile contains positive (consuming) values")
        elif np.any(self.values < -1e-12):
            raise ProfileError(f"{self.device_class}: negative load values")

    @property
    def annual_kwh(self) -> float:
        return float(self.values.sum() * STEP_HOURS)


@dataclass
class ProfileSet:
    """All profiles one scenario run needs, keyed by class and variant."""

    household: list[Profile]  # per-home shape variants, each 3,500 kWh/a
    h0: Profile  # generic household reference shape for pseudo-measurements
    ev_private: list[Profile]
    heat_pump: dict[str, Profile]  # area -> profile
    pv: dict[str, Profile]  # orientation -> profile (values <= 0)
    public_cp: Profile
    seed: int | None = None

    def household_variant(self, k: int) -> Profile:
        return self.household[k % len(self.household)]

    def ev_variant(self, k: int) -> Profile:
        return self.ev_private[k % len(self.ev_private)]


# --- synthetic generation ----------------------------------------------------


def _day_grid():
    """Hour-of-day midpoint for each of the 96 quarter-hour steps."""
    return (np.arange(STEPS_PER_DAY) + 0.5) * 0.25


def _bump(hours, center, width):
    d = np.minimum(np.abs(hours - center), 24.0 - np.abs(hours - center))
    return np.exp(-0.5 * (d / width) ** 2)


def _weekday_of_day(day: np.ndarray | int):
    return (day + _FIRST_WEEKDAY) % 7


def _season_factor(amplitude: float, phase_day: float = 15.0):
    """Smooth annual modulation, maximum mid-January."""
    day = np.arange(DAYS_PER_YEAR)
    return 1.0 + amplitude * np.cos(2 * np.pi * (day - phase_day) / DAYS_PER_YEAR)


def _household_shape(rng: np.random.Generator, variant: bool) -> np.ndarray:
    """One full-year household curve, unnormalized."""
    hours = _day_grid()
    if variant:
        ev_peak = rng.uniform(16.8, 22.0)
        ev_w = rng.uniform(1.1, 2.6)
        mo_peak = rng.uniform(6.0, 9.2)
        mo_amp = rng.uniform(0.2, 1.1)
        noon_amp = rng.uniform(0.1, 0.8)
        base = rng.uniform(0.12, 0.38)
        ev_amp = rng.uniform(0.55, 2.1)
    else:
        ev_peak, ev_w, mo_peak, mo_amp, noon_amp, base, ev_amp = (
            19.25, 1.8, 7.5, 0.6, 0.32, 0.22, 1.25)

    weekday_day = (base + mo_amp * _bump(hours, mo_peak, 1.1)
                   + noon_amp * _bump(hours, 12.5, 1.6)
                   + ev_amp * _bump(hours, ev_peak, ev_w))
    weekend_day = (base * 1.1 + 0.5 * mo_amp * _bump(hours, mo_peak + 1.5, 1.4)
                   + 1.5 * noon_amp * _bump(hours, 12.8, 2.0)
                   + 0.95 * ev_amp * _bump(hours, ev_peak + 0.3, ev_w * 1.1))

    days = np.arange(DAYS_PER_YEAR)
    weekend = _weekday_of_day(days) >= 5
    year = np.where(weekend[:, None], weekend_day[None, :], weekday_day[None, :])
    year = year * _season_factor(0.18)[:, None]
    return year.ravel()


def _normalize_annual(values: np.ndarray, target_kwh: float) -> np.ndarray:
    return values * (target_kwh / (values.sum() * STEP_HOURS))


def _ev_profile(rng: np.random.Generator) -> np.ndarray:
    """Daily 3.68 kW charging blocks with a 70% plug-in probability."""
    values = np.zeros((DAYS_PER_YEAR, STEPS_PER_DAY))
    n_plug_days = round(EV_PLUGIN_PROB * DAYS_PER_YEAR)
    plug_days = np.sort(rng.choice(DAYS_PER_YEAR, size=n_plug_days, replace=False))
    for day in plug_days:
        start_h = rng.normal(18.7, 1.6)
        start_h = float(np.clip(start_h, 15.5, 22.5))
        dur_steps = int(rng.integers(8, 13))  # 2.0 - 3.0 h
        s0 = int(start_h * 4)
        for k in range(dur_steps):
            idx = s0 + k
            if idx < STEPS_PER_DAY:
                values[day, idx] = EV_CHARGE_KW
            else:  # charging past midnight rolls into the next day
                nd = day + 1
                if nd < DAYS_PER_YEAR:
                    values[nd, idx - STEPS_PER_DAY] = EV_CHARGE_KW
    return values.ravel()


def _heat_pump_profile(rng: np.random.Generator, annual_kwh: float) -> np.ndarray:
    """Winter-weighted heating demand with intraday emphasis and night setback."""
    hours = _day_grid()
    intraday = (0.55 + 0.55 * _bump(hours, 7.0, 2.2) + 0.65 * _bump(hours, 19.0, 2.8)
                - 0.30 * _bump(hours, 2.5, 2.0))
    intraday = np.clip(intraday, 0.08, None)
    seasonal = np.clip(_season_factor(0.95), 0.035, None)
    daily_jitter = rng.uniform(0.75, 1.25, DAYS_PER_YEAR)
    year = (seasonal * daily_jitter)[:, None] * intraday[None, :]
    return _normalize_annual(year.ravel(), annual_kwh)


def _pv_profile(rng: np.random.Generator, peak_hour: float) -> np.ndarray:
    """Clear-sky bell scaled to PV_KWP, with seasonal daylight and cloudiness.

    Returned values are negative (generation); night steps are exactly zero.
    """
    hours = _day_grid()
    days = np.arange(DAYS_PER_YEAR)
    season = np.cos(2 * np.pi * (days - 172) / DAYS_PER_YEAR)  # +1 midsummer
    # daylight half-width 4.1 h (winter) to 8.3 h (summer)
    half = 6.2 + 2.1 * season
    amp = np.clip(0.58 + 0.42 * season, 0.16, 1.0)
    clouds = rng.uniform(0.45, 1.0, DAYS_PER_YEAR)

    d = np.abs(hours[None, :] - peak_hour)
    window = np.abs(hours[None, :] - 12.75) < half[:, None]
    bell = np.clip(np.cos(np.pi * d / (2.0 * (half[:, None] * 0.92))), 0.0, None) ** 1.6
    bell = np.where(window, bell, 0.0)
    year = bell * (amp * clouds)[:, None] * (0.85 * PV_KWP)
    return -year.ravel()


def _public_cp_profile(rng: np.random.Generator) -> np.ndarray:
    """Robust-average public charging demand: daytime plateau plus peaks."""
    hours = _day_grid()
    weekday_day = 0.4 + 3.2 * _bump(hours, 11.0, 3.1) + 2.6 * _bump(hours, 17.5, 2.2)
    weekend_day = 0.4 + 2.0 * _bump(hours, 13.0, 3.5)
    days = np.arange(DAYS_PER_YEAR)
    weekend = _weekday_of_day(days) >= 5
    year = np.where(weekend[:, None], weekend_day[None, :], weekday_day[None, :])
    # sporadic high-utilization events (fast-charge sessions)
    n_events = 240
    event_days = rng.integers(0, DAYS_PER_YEAR, n_events)
    event_steps = rng.integers(30, 86, n_events)
    for d, s in zip(event_days, event_steps):
        year[d, s : s + 2] += rng.uniform(8.0, 14.0)
    return year.ravel()


def synthesize_profiles(seed: int = 0) -> ProfileSet:
    """Deterministic synthetic profile set for one scenario run."""
    rng = np.random.default_rng(seed)

    h0_values = _normalize_annual(_household_shape(rng, variant=False),
                                  HOUSEHOLD_KWH_PER_YEAR)
    h0 = Profile("household", h0_values, {"role": "h0_reference", "seed": seed})

    household = []
    for k in range(N_HOUSEHOLD_VARIANTS):
        vals = _normalize_annual(_household_shape(rng, variant=True),
                                 HOUSEHOLD_KWH_PER_YEAR)
        household.append(Profile("household", vals, {"variant": k, "seed": seed}))

    ev_private = [
        Profile("ev_private", _ev_profile(rng), {"variant": k, "seed": seed})
        for k in range(N_EV_VARIANTS)
    ]

    hp_rural_kwh = 2600.0
    heat_pump = {
        "rural": Profile("heat_pump", _heat_pump_profile(rng, hp_rural_kwh),
                         {"area": "rural", "seed": seed}),
        "urban": Profile("heat_pump", _heat_pump_profile(rng, 4.0 * hp_rural_kwh),
                         {"area": "urban", "seed": seed}),
    }

    pv = {
        "south": Profile("pv", _pv_profile(rng, 12.75), {"orientation": "south"}),
        "east": Profile("pv", _pv_profile(rng, 10.75), {"orientation": "east"}),
        "west": Profile("pv", _pv_profile(rng, 14.75), {"orientation": "west"}),
    }

    public_cp = Profile("public_cp", _public_cp_profile(rng), {"seed": seed})

    return ProfileSet(household=household, h0=h0, ev_private=ev_private,
                      heat_pump=heat_pump, pv=pv, public_cp=public_cp, seed=seed)


# --- import path -------------------------------------------------------------


def _read_profile_csv(path: Path) -> np.ndarray:
    values = np.full(STEPS_PER_YEAR, np.nan)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ProfileError(f"{path}: empty file")
        rows = list(reader)
    if len(rows) != STEPS_PER_YEAR:
        raise ProfileError(f"{path}: expected {STEPS_PER_YEAR} rows, got {len(rows)}")
    for row in rows:
        idx = int(row[0])
        if not (0 <= idx < STEPS_PER_YEAR):
            raise ProfileError(f"{path}: step index {idx} out of range")
        values[idx] = float(row[1])
    if np.isnan(values).any():
        raise ProfileError(f"{path}: missing step indices")
    return values


def load_profiles(directory: str | Path) -> ProfileSet:
    """Load one CSV per device class from ``directory``.

    Expects household.csv, ev_private.csv, heat_pump.csv (optionally
    heat_pump_urban.csv), pv.csv (optionally pv_east/pv_west), public_cp.csv
    and optionally h0.csv; each with columns (step_index, power_kw).
    """
    directory = Path(directory)

    def read(name: str, device_class: str, **meta) -> Profile:
        return Profile(device_class, _read_profile_csv(directory / f"{name}.csv"), meta)

    hh = read("household", "household")
    if abs(hh.annual_kwh - HOUSEHOLD_KWH_PER_YEAR) > 1e-3 * HOUSEHOLD_KWH_PER_YEAR:
        raise ProfileError(
            f"household annual energy {hh.annual_kwh:.1f} kWh deviates more than "
            f"0.1% from {HOUSEHOLD_KWH_PER_YEAR:.0f} kWh"
        )

    h0_path = directory / "h0.csv"
    h0 = read("h0", "household", role="h0_reference") if h0_path.exists() else hh

    hp_rural = read("heat_pump", "heat_pump", area="rural")
    hp_urban_path = directory / "heat_pump_urban.csv"
    if hp_urban_path.exists():
        hp_urban = read("heat_pump_urban", "heat_pump", area="urban")
    else:
        hp_urban = Profile("heat_pump", hp_rural.values * 4.0, {"area": "urban"})

    pv = {"south": read("pv", "pv", orientation="south")}
    for orient in ("east", "west"):
        p = directory / f"pv_{orient}.csv"
        pv[orient] = (read(f"pv_{orient}", "pv", orientation=orient)
                      if p.exists() else pv["south"])

    return ProfileSet(
        household=[hh],
        h0=h0,
        ev_private=[read("ev_private", "ev_private")],
        heat_pump={"rural": hp_rural, "urban": hp_urban},
        pv=pv,
        public_cp=read("public_cp", "public_cp"),
        seed=None,
    )
