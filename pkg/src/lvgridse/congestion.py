"""Congestion event detection, classification, aggregation and sampling.

A period is congested when any element loading strictly exceeds 100%, any
bus voltage leaves the 0.95-1.05 p.u. band, or the power flow failed to
converge. Violations entirely inside the near-limit bands (loading up to
110%, voltage down to 0.90 / up to 1.10 p.u., bounds included) are "grey";
anything beyond is "hard".
"""

from __future__ import annotations

import calendar
from dataclasses import dataclass, field

import numpy as np

from .grid import GridNetwork
from .powerflow import SnapshotState, TimeseriesResult

LOADING_LIMIT = 100.0
GREY_LOADING_MAX = 110.0
UV_LIMIT = 0.95
OV_LIMIT = 1.05
GREY_UV_MIN = 0.90
GREY_OV_MAX = 1.10

_MONTH_DAYS = [calendar.monthrange(2025, m)[1] for m in range(1, 13)]
_MONTH_OF_DAY = np.repeat(np.arange(12), _MONTH_DAYS)


def month_of_step(step: int) -> int:
    return int(_MONTH_OF_DAY[(step // 96) % 365])


def hour_of_step(step: int) -> int:
    return (step % 96) // 4


@dataclass
class CongestionEvent:
    step: int
    triggers: frozenset[str]
    severity: str  # "grey" | "hard"
    root_cause: str = "unclassified"
    affected: list[tuple[str, str, float]] = field(default_factory=list)
    max_trafo_loading: float = float("nan")
    max_line_loading: float = float("nan")
    bottleneck_branch: str | None = None
    min_v_pu: float = float("nan")
    max_v_pu: float = float("nan")


def classify_period(state: SnapshotState, net: GridNetwork) -> CongestionEvent | None:
    """Return the event for one period, or None if nothing is violated."""
    if not state.converged:
        return CongestionEvent(
            step=state.step,
            triggers=frozenset({"non_convergence"}),
            severity="hard",
            root_cause="not_converged",
        )

    triggers = set()
    affected: list[tuple[str, str, float]] = []
    hard = False

    if state.trafo_loading_pct > LOADING_LIMIT:
        triggers.add("thermal_overload")
        affected.append(("transformer", "transformer", state.trafo_loading_pct))
        hard |= state.trafo_loading_pct > GREY_LOADING_MAX
    for k, br in enumerate(net.branches):
        loading = state.branch_loading_pct[k]
        if loading > LOADING_LIMIT:
            triggers.add("thermal_overload")
            affected.append(("line", br.id, float(loading)))
            hard |= loading > GREY_LOADING_MAX

    v_pu = state.v_pu()
    for i, bus in enumerate(net.buses):
        if bus.kind == "slack":
            continue
        v = float(v_pu[i])
        if v < UV_LIMIT:
            triggers.add("undervoltage")
            affected.append(("bus", bus.id, v))
            hard |= v < GREY_UV_MIN
        elif v > OV_LIMIT:
            triggers.add("overvoltage")
            affected.append(("bus", bus.id, v))
            hard |= v > GREY_OV_MAX

    if not triggers:
        return None

    k_max = int(np.argmax(state.branch_loading_pct))
    return CongestionEvent(
        step=state.step,
        triggers=frozenset(triggers),
        severity="hard" if hard else "grey",
        affected=affected,
        max_trafo_loading=float(state.trafo_loading_pct),
        max_line_loading=float(state.branch_loading_pct[k_max]),
        bottleneck_branch=net.branches[k_max].id,
        min_v_pu=state.min_v_pu,
        max_v_pu=state.max_v_pu,
    )


def classify_root_cause(
    state: SnapshotState,
    event: CongestionEvent,
    pv_total_w: float | None = None,
    demand_total_w: float | None = None,
) -> str:
    """Single load/generation attribution for one event.

    Thermal overloads inherit the period's generation/load dominance,
    voltage violations follow their direction, and periods showing both
    voltage directions are combined.
    """
    if "non_convergence" in event.triggers:
        return "not_converged"
    pv = state.pv_total_w if pv_total_w is None else pv_total_w
    demand = state.demand_total_w if demand_total_w is None else demand_total_w
    generation_dominant = pv > demand

    sides = set()
    if "thermal_overload" in event.triggers:
        sides.add("generation_side" if generation_dominant else "load_side")
    if "overvoltage" in event.triggers:
        sides.add("generation_side")
    if "undervoltage" in event.triggers:
        sides.add("load_side")
    if sides == {"generation_side", "load_side"}:
        return "combined"
    return sides.pop()


def detect_events(result: TimeseriesResult, net: GridNetwork) -> list[CongestionEvent]:
    """Classify every retained period of a run, in step order."""
    events = []
    for step in sorted(result.retained):
        state = result.retained[step]
        event = classify_period(state, net)
        if event is None:
            continue
        event.root_cause = classify_root_cause(state, event)
        events.append(event)
    return events


@dataclass
class CongestionSummary:
    n_steps: int
    n_events: int
    share_pct: float
    n_grey: int
    n_hard: int
    trigger_counts: dict[str, int]
    root_cause_counts: dict[str, int]
    max_trafo_loading: float
    max_line_loading: float
    monthly_counts: list[int]  # 12, all events
    monthly_share_pct: list[float]
    hourly_load_side: list[int]  # 24
    hourly_generation_side: list[int]  # 24, reported negative downstream
    element_violation_counts: dict[str, int]
    month_hour_counts: list[list[int]]  # 12 x 24 heatmap grid

    def as_dict(self) -> dict:
        return {
            "n_steps": self.n_steps,
            "n_events": self.n_events,
            "share_pct": self.share_pct,
            "n_grey": self.n_grey,
            "n_hard": self.n_hard,
            "trigger_counts": self.trigger_counts,
            "root_cause_counts": self.root_cause_counts,
            "max_trafo_loading": self.max_trafo_loading,
            "max_line_loading": self.max_line_loading,
            "monthly_counts": self.monthly_counts,
            "monthly_share_pct": self.monthly_share_pct,
            "hourly_load_side": self.hourly_load_side,
            "hourly_generation_side": self.hourly_generation_side,
            "element_violation_counts": self.element_violation_counts,
            "month_hour_counts": self.month_hour_counts,
        }


def aggregate(events: list[CongestionEvent], n_steps: int) -> CongestionSummary:
    """Fold a year's events into the scenario-level summary."""
    monthly = [0] * 12
    hourly_load = [0] * 24
    hourly_gen = [0] * 24
    month_hour = [[0] * 24 for _ in range(12)]
    triggers: dict[str, int] = {}
    causes: dict[str, int] = {}
    elements: dict[str, int] = {}
    max_trafo = 0.0
    max_line = 0.0

    for ev in events:
        m, h = month_of_step(ev.step), hour_of_step(ev.step)
        monthly[m] += 1
        month_hour[m][h] += 1
        if ev.root_cause in ("generation_side",):
            hourly_gen[h] += 1
        else:
            hourly_load[h] += 1
        for t in ev.triggers:
            triggers[t] = triggers.get(t, 0) + 1
        causes[ev.root_cause] = causes.get(ev.root_cause, 0) + 1
        for kind, elem_id, _ in ev.affected:
            key = f"{kind}:{elem_id}"
            elements[key] = elements.get(key, 0) + 1
        if np.isfinite(ev.max_trafo_loading):
            max_trafo = max(max_trafo, ev.max_trafo_loading)
        if np.isfinite(ev.max_line_loading):
            max_line = max(max_line, ev.max_line_loading)

    steps_per_month = [d * 96 for d in _MONTH_DAYS]
    monthly_share = [
        100.0 * monthly[m] / steps_per_month[m] if n_steps >= 35040 else
        (100.0 * monthly[m] / n_steps if n_steps else 0.0)
        for m in range(12)
    ]
    return CongestionSummary(
        n_steps=n_steps,
        n_events=len(events),
        share_pct=100.0 * len(events) / n_steps if n_steps else 0.0,
        n_grey=sum(1 for e in events if e.severity == "grey"),
        n_hard=sum(1 for e in events if e.severity == "hard"),
        trigger_counts=triggers,
        root_cause_counts=causes,
        max_trafo_loading=max_trafo,
        max_line_loading=max_line,
        monthly_counts=monthly,
        monthly_share_pct=monthly_share,
        hourly_load_side=hourly_load,
        hourly_generation_side=hourly_gen,
        element_violation_counts=elements,
        month_hour_counts=month_hour,
    )


def _largest_remainder(quotas: list[float], total: int) -> list[int]:
    floors = [int(np.floor(q)) for q in quotas]
    rem = total - sum(floors)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - floors[i]), i))
    for i in order[:rem]:
        floors[i] += 1
    return floors


def stratified_sample(
    events: list[CongestionEvent], k: int, n_loading_bins: int = 4, n_lines: int = 5,
) -> list[CongestionEvent]:
    """Severity x location stratified subsample of congestion periods.

    Strata are transformer-loading quartile bins crossed with the most
    frequent bottleneck lines (plus a residual group). Sample sizes are
    proportional to stratum shares; within a stratum, picks are evenly
    spaced in temporal order. When k covers everything, all periods are
    returned.
    """
    if k <= 0:
        return []
    usable = [e for e in events if np.isfinite(e.max_trafo_loading)]
    if k >= len(usable):
        return list(usable)

    loadings = np.array([e.max_trafo_loading for e in usable])
    qs = np.percentile(loadings, [25, 50, 75])

    freq: dict[str, int] = {}
    for e in usable:
        if e.bottleneck_branch:
            freq[e.bottleneck_branch] = freq.get(e.bottleneck_branch, 0) + 1
    top_lines = [b for b, _ in sorted(freq.items(), key=lambda t: (-t[1], t[0]))[:n_lines]]

    def stratum(e: CongestionEvent) -> tuple[int, str]:
        b = int(np.sum(e.max_trafo_loading > qs))  # right-closed bins
        line = e.bottleneck_branch if e.bottleneck_branch in top_lines else "_residual"
        return b, line

    groups: dict[tuple[int, str], list[CongestionEvent]] = {}
    for e in usable:
        groups.setdefault(stratum(e), []).append(e)

    keys = sorted(groups)
    quotas = [k * len(groups[key]) / len(usable) for key in keys]
    sizes = _largest_remainder(quotas, k)

    sample = []
    for key, m in zip(keys, sizes):
        members = sorted(groups[key], key=lambda e: e.step)
        if m >= len(members):
            sample.extend(members)
            continue
        picks = (np.floor((np.arange(m) + 0.5) * len(members) / m)).astype(int)
        sample.extend(members[i] for i in picks)
    sample.sort(key=lambda e: e.step)
    return sample
