"""Branch-current WLS state estimation for radial networks.

State vector: real and imaginary parts of the complex branch currents
(oriented parent to child), one block per phase; under balanced inputs the
three phase blocks are identical and a single block is solved.

Power measurements are converted to equivalent current injections at the
current voltage iterate of an internal frame anchored at the estimator's
slack reference. The measurement Jacobian contains only topology-derived
+/-1 incidence entries, so it is independent of the measurement values.
Node voltages are recovered by a forward sweep; available node voltage
measurements are used exclusively in a backward sweep that refines the
substation voltage for the output frame. The anchored internal frame is
deliberately not re-rooted at the refined substation voltage: the
estimator linearizes around its own slack reference, which reproduces the
characteristic systematic deviation when that reference does not match
the simulated regulation target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .grid import GridNetwork
from .measurements import MeasurementSet

N_PHASES = 3


class ObservabilityError(ValueError):
    """Measurement set cannot determine the branch-current state."""


@dataclass
class EstimatorConfig:
    max_outer: int = 20
    slack_tol_pu: float = 1e-6
    vlin_tol_pu: float = 1e-9
    sigma_floor_w: float = 20.0  # per-phase floor for P/Q row deviations
    sigma_junction_w: float = 0.1  # zero-injection constraint tightness
    include_grid_rows: bool = True
    compute_uq: bool = True
    check_rank: bool = False  # explicit SVD rank check (slow; tests only)


class _NetStructure:
    """Index arrays for the rooted tree, cached per network object."""

    def __init__(self, net: GridNetwork):
        n = len(net.buses)
        m = len(net.branches)
        idx = net.bus_index
        branch_idx = {br.id: k for k, br in enumerate(net.branches)}

        self.slack = idx[net.slack_bus.id]
        self.z = np.array([br.impedance for br in net.branches])
        self.parent_branch = np.full(n, -1, dtype=int)
        self.parent_bus = np.full(n, -1, dtype=int)
        self.children_branches: list[list[int]] = [[] for _ in range(n)]
        for bus_id, br in net.parent_branch.items():
            k = branch_idx[br.id]
            b = idx[bus_id]
            parent = br.from_bus if br.to_bus == bus_id else br.to_bus
            self.parent_branch[b] = k
            self.parent_bus[b] = idx[parent]
            self.children_branches[idx[parent]].append(k)
        self.bfs = np.array([idx[b] for b in net.bfs_order], dtype=int)
        # branch indices on the path from each bus up to the slack
        self.paths: list[np.ndarray] = []
        for i in range(n):
            path = []
            u = i
            while self.parent_branch[u] >= 0:
                path.append(self.parent_branch[u])
                u = self.parent_bus[u]
            self.paths.append(np.array(path, dtype=int))
        self.feeder_root_branch = {
            head: self.parent_branch[idx[head]] for head in net.feeders
        }


_STRUCTURE_CACHE: dict[int, tuple[GridNetwork, _NetStructure]] = {}


def _structure(net: GridNetwork) -> _NetStructure:
    key = id(net)
    hit = _STRUCTURE_CACHE.get(key)
    if hit is not None and hit[0] is net:
        return hit[1]
    s = _NetStructure(net)
    _STRUCTURE_CACHE[key] = (net, s)
    if len(_STRUCTURE_CACHE) > 64:
        _STRUCTURE_CACHE.pop(next(iter(_STRUCTURE_CACHE)))
    return s


@dataclass
class MeasurementModel:
    """Fixed Jacobian plus row metadata for value/weight assembly."""

    net: GridNetwork
    h: np.ndarray  # (n_rows, 2M) single-phase block
    rows: list[tuple]  # (kind, ref, component)
    meas: MeasurementSet
    sigma_floor_w: float
    sigma_junction_w: float

    @property
    def n_branches(self) -> int:
        return len(self.net.branches)

    def count_per_phase(self) -> int:
        return len(self.rows) + 1 + len(self.meas.voltage_meas)


@dataclass
class BranchCurrentState:
    """Three-phase branch-current state; balanced phases are identical."""

    per_phase: np.ndarray  # (2M,)

    @property
    def x(self) -> np.ndarray:
        """Full state across phases, length 6M."""
        return np.tile(self.per_phase, N_PHASES)

    def phase_block(self, phase: int) -> np.ndarray:
        if not (0 <= phase < N_PHASES):
            raise IndexError(phase)
        return self.per_phase

    @property
    def currents(self) -> np.ndarray:
        m = self.per_phase.size // 2
        return self.per_phase[:m] + 1j * self.per_phase[m:]


@dataclass
class CredibilityIntervals:
    sigma_current_re: np.ndarray
    sigma_current_im: np.ndarray
    sigma_current_mag: np.ndarray
    sigma_voltage_mag: np.ndarray
    z95: float = 1.96

    @property
    def current_half_width(self) -> np.ndarray:
        return self.z95 * self.sigma_current_mag

    @property
    def voltage_half_width(self) -> np.ndarray:
        return self.z95 * self.sigma_voltage_mag


@dataclass
class EstimationResult:
    state: BranchCurrentState
    i_branch: np.ndarray  # complex, parent->child per branch
    v: np.ndarray  # complex volts per bus, output frame
    slack_voltage: complex
    residual: np.ndarray
    objective: float
    iterations: int
    converged: bool
    condition_estimate: float
    intervals: CredibilityIntervals | None = None
    branch_loading_pct: np.ndarray | None = None

    def v_pu(self, nominal: float = 231.0) -> np.ndarray:
        return np.abs(self.v) / nominal


# --- model construction ---------------------------------------------------------


def build_model(
    net: GridNetwork, meas: MeasurementSet, config: EstimatorConfig | None = None,
) -> MeasurementModel:
    """Assemble the topology-only Jacobian for one measurement structure.

    Rows: one (Re, Im) pair per covered load bus, zero-injection pairs for
    junctions, and aggregate active-power rows for transformer or feeder
    metering. Raises when the per-phase count falls below 2n-1 or the
    columns are rank deficient.
    """
    config = config or EstimatorConfig()
    s = _structure(net)
    m = len(net.branches)

    rows: list[tuple] = []
    entries: list[list[tuple[int, float]]] = []

    def injection_row(bus_i: int, comp: str):
        off = 0 if comp == "re" else m
        cols = []
        if s.parent_branch[bus_i] >= 0:
            cols.append((off + s.parent_branch[bus_i], 1.0))
        for k in s.children_branches[bus_i]:
            cols.append((off + k, -1.0))
        return cols

    covered = sorted(set(meas.real) | set(meas.pseudo))
    for bus_id in covered:
        for comp in ("re", "im"):
            kind = "real" if bus_id in meas.real else "pseudo"
            rows.append((kind, bus_id, comp))
            entries.append(injection_row(net.bus_index[bus_id], comp))

    for bus in net.buses:
        if bus.kind == "junction":
            for comp in ("re", "im"):
                rows.append(("zero_injection", bus.id, comp))
                entries.append(injection_row(net.bus_index[bus.id], comp))

    if config.include_grid_rows and meas.grid_p_kw is not None:
        cols = [(s.feeder_root_branch[head], 1.0) for head in net.feeders]
        rows.append(("grid_p", "transformer", "re"))
        entries.append(cols)
    if config.include_grid_rows and meas.feeder_p_kw is not None:
        for head in sorted(meas.feeder_p_kw):
            rows.append(("feeder_p", head, "re"))
            entries.append([(s.feeder_root_branch[head], 1.0)])

    h = np.zeros((len(rows), 2 * m))
    for r, cols in enumerate(entries):
        for c, val in cols:
            h[r, c] = val

    model = MeasurementModel(net=net, h=h, rows=rows, meas=meas,
                             sigma_floor_w=config.sigma_floor_w,
                             sigma_junction_w=config.sigma_junction_w)

    n = len(net.buses)
    if model.count_per_phase() < 2 * n - 1:
        raise ObservabilityError(
            f"{model.count_per_phase()} measurements per phase < 2n-1 = {2 * n - 1}"
        )
    if config.check_rank and np.linalg.matrix_rank(h) < 2 * m:
        raise ObservabilityError("measurement Jacobian is column rank deficient")
    return model


def _assemble_z(model: MeasurementModel, v_lin: np.ndarray, with_sigma: bool):
    """Convert P/Q rows into equivalent current values (and deviations).

    Values use the anchored voltage iterate; deviations are evaluated at
    the flat reference voltage and frozen afterwards (uniform weight
    scaling does not move the WLS optimum).
    """
    net, meas = model.net, model.meas
    v_ref = meas.slack_v_pu * net.slack_bus.nominal_voltage
    z = np.zeros(len(model.rows))
    sigma = np.zeros(len(model.rows)) if with_sigma else None

    cache: dict[str, complex] = {}

    def inj_current(bus_id: str, pq: tuple[float, float]) -> complex:
        cur = cache.get(bus_id)
        if cur is None:
            s_phase = (pq[0] + 1j * pq[1]) * 1e3 / 3.0
            vb = v_lin[net.bus_index[bus_id]]
            cur = np.conj(s_phase / vb)
            cache[bus_id] = cur
        return cur

    for r, (kind, ref, comp) in enumerate(model.rows):
        if kind in ("real", "pseudo"):
            pq = meas.real[ref] if kind == "real" else meas.pseudo[ref]
            cur = inj_current(ref, pq)
            z[r] = cur.real if comp == "re" else cur.imag
            if with_sigma:
                rel = meas.sigma_real if kind == "real" else meas.sigma_pseudo
                p_or_q = pq[0] if comp == "re" else pq[1]
                sigma_w = max(rel * abs(p_or_q) * 1e3 / 3.0, model.sigma_floor_w)
                sigma[r] = sigma_w / v_ref
        elif kind == "zero_injection":
            z[r] = 0.0
            if with_sigma:
                sigma[r] = model.sigma_junction_w / v_ref
        elif kind == "grid_p":
            p_phase = meas.grid_p_kw * 1e3 / 3.0
            z[r] = p_phase / v_ref
            if with_sigma:
                sigma[r] = max(meas.sigma_real * abs(p_phase),
                               model.sigma_floor_w) / v_ref
        elif kind == "feeder_p":
            p_phase = meas.feeder_p_kw[ref] * 1e3 / 3.0
            z[r] = p_phase / v_ref
            if with_sigma:
                sigma[r] = max(meas.sigma_real * abs(p_phase),
                               model.sigma_floor_w) / v_ref
        else:  # pragma: no cover
            raise AssertionError(kind)
    return z, sigma


def solve_wls(h: np.ndarray, w: np.ndarray, z: np.ndarray):
    """One-shot weighted least squares (Cholesky on the normal equations)."""
    hw = h * w[:, None]
    g = hw.T @ h
    try:
        factor = cho_factor(g)
    except np.linalg.LinAlgError as exc:
        raise ObservabilityError("singular gain matrix") from exc
    x = cho_solve(factor, hw.T @ z)
    return x, factor, g


# --- sweeps ---------------------------------------------------------------------


def forward_sweep(
    net: GridNetwork, currents: np.ndarray, slack_voltage: complex,
) -> np.ndarray:
    """Node voltages from branch currents, slack outward (v_l = v_k - Z*i)."""
    s = _structure(net)
    v = np.zeros(len(net.buses), dtype=complex)
    v[s.slack] = slack_voltage
    drop = s.z * currents
    for b in s.bfs[1:]:
        v[b] = v[s.parent_bus[b]] - drop[s.parent_branch[b]]
    return v


def backward_sweep(
    net: GridNetwork,
    currents: np.ndarray,
    voltage_meas: dict[str, complex],
    slack_voltage: complex,
) -> complex:
    """Back-propagate measured node voltages to a refined substation voltage.

    Returns the input slack unchanged when no voltage measurements exist.
    """
    if not voltage_meas:
        return slack_voltage
    s = _structure(net)
    drop = s.z * currents
    total = 0j
    for bus_id, v_meas in voltage_meas.items():
        path = s.paths[net.bus_index[bus_id]]
        total += complex(v_meas) + drop[path].sum()
    return total / len(voltage_meas)


# --- uncertainty ---------------------------------------------------------------


def quantify_uncertainty(
    model: MeasurementModel,
    factor,
    currents: np.ndarray,
    slack_sigma_v: float,
) -> CredibilityIntervals:
    """Gain-matrix covariance projected onto currents and node voltages."""
    m = model.n_branches
    net = model.net
    s = _structure(net)
    cov = cho_solve(factor, np.eye(2 * m))

    sig_re = np.sqrt(np.clip(np.diag(cov)[:m], 0.0, None))
    sig_im = np.sqrt(np.clip(np.diag(cov)[m:], 0.0, None))

    mag = np.abs(currents)
    safe = np.where(mag > 1e-12, mag, 1.0)
    gr = currents.real / safe
    gi = currents.imag / safe
    var_mag = (gr**2 * np.diag(cov)[:m] + gi**2 * np.diag(cov)[m:]
               + 2.0 * gr * gi * np.array([cov[k, m + k] for k in range(m)]))
    sig_mag = np.sqrt(np.clip(var_mag, 0.0, None))

    # voltage: slack variance plus the path-aggregated drop variance
    n = len(net.buses)
    a = np.zeros((n, 2 * m))
    for i in range(n):
        path = s.paths[i]
        a[i, path] += s.z[path].real
        a[i, m + path] -= s.z[path].imag
    var_v = np.einsum("ij,ij->i", a @ cov, a) + slack_sigma_v**2
    sig_v = np.sqrt(np.clip(var_v, 0.0, None))

    return CredibilityIntervals(
        sigma_current_re=sig_re,
        sigma_current_im=sig_im,
        sigma_current_mag=sig_mag,
        sigma_voltage_mag=sig_v,
    )


# --- driver ---------------------------------------------------------------------


def estimate(
    net: GridNetwork,
    meas: MeasurementSet,
    config: EstimatorConfig | None = None,
    model: MeasurementModel | None = None,
) -> EstimationResult:
    """Run the full estimation loop for one snapshot.

    Iterates (convert P/Q at the anchored voltage iterate -> WLS ->
    forward sweep -> backward sweep) until both the refined substation
    voltage and the anchored frame are stable, or the iteration cap hits.
    The gain matrix is factorized once: the Jacobian and weights are
    value-independent, so only the right-hand side changes per iteration.
    """
    config = config or EstimatorConfig()
    if model is None:
        model = build_model(net, meas, config)

    v_nom = net.slack_bus.nominal_voltage
    v_ref = complex(meas.slack_v_pu * v_nom)
    n = len(net.buses)
    v_lin = np.full(n, v_ref, dtype=complex)
    slack_out = v_ref

    slack_tol = config.slack_tol_pu * v_nom
    vlin_tol = config.vlin_tol_pu * v_nom

    m = model.n_branches
    x = np.zeros(2 * m)
    factor = None
    hw_t = None
    w = None
    z = None
    cond = float("nan")
    converged = False
    iterations = 0

    for it in range(1, config.max_outer + 1):
        iterations = it
        if factor is None:
            z, sigma = _assemble_z(model, v_lin, with_sigma=True)
            w = 1.0 / sigma**2
            x, factor, g = solve_wls(model.h, w, z)
            hw_t = (model.h * w[:, None]).T
            diag = np.diag(g)
            cond = float(diag.max() / diag.min()) if diag.min() > 0 else float("inf")
        else:
            z, _ = _assemble_z(model, v_lin, with_sigma=False)
            x = cho_solve(factor, hw_t @ z)
        currents = x[:m] + 1j * x[m:]

        v_anchor = forward_sweep(net, currents, v_ref)
        slack_new = backward_sweep(net, currents, meas.voltage_meas, slack_out)

        dv = float(np.max(np.abs(v_anchor - v_lin)))
        ds = abs(slack_new - slack_out)
        v_lin = v_anchor
        slack_out = slack_new
        if ds < slack_tol and dv < vlin_tol:
            converged = True
            break

    currents = x[:m] + 1j * x[m:]
    v_out = forward_sweep(net, currents, slack_out)
    residual = z - model.h @ x
    objective = float(residual @ (w * residual))

    intervals = None
    if config.compute_uq:
        intervals = quantify_uncertainty(
            model, factor, currents, slack_sigma_v=meas.sigma_slack * v_nom
        )

    loading = np.array([
        abs(currents[k]) / br.thermal_limit * 100.0
        for k, br in enumerate(net.branches)
    ])
    return EstimationResult(
        state=BranchCurrentState(per_phase=x),
        i_branch=currents,
        v=v_out,
        slack_voltage=slack_out,
        residual=residual,
        objective=objective,
        iterations=iterations,
        converged=converged,
        condition_estimate=cond,
        intervals=intervals,
        branch_loading_pct=loading,
    )
