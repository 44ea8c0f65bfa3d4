"""Closed-loop scenario engine.

Wires the plant and the controllers into a sampled-data loop with a
zero-order hold on the inputs: at every control period the controllers see
the measurement produced by the inputs applied one period earlier, compute
their updates, and the new set-points take effect for the next period.
Scenarios are plain JSON documents (see ``load_scenario``); runs produce a
:class:`SimLog` that serializes to RFC-4180 CSV series plus a JSON summary.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridloopError, MalformedTable, NonConvergence, PlantNonConvergence
from .multiarea import (
    AreaController,
    GameState,
    Gains,
    NashCertificate,
    certify_nash,
    estimate_cocoercivity,
    multiarea_step,
)
from .netmodel import (
    AreaPartition,
    Branch,
    GridCase,
    area_output_indices,
    parse_json_case,
    parse_matpower_case,
)
from .ofo import (
    ControllerConfig,
    ControllerMode,
    CostModel,
    DescentStep,
    DualState,
    PenaltyModel,
    cost_value,
    curtailed_power,
    curtailment_cost,
    penalty_gradient_step,
    phi_value,
    primal_dual_step,
    projected_descent_step,
)
from .powerflow import Disturbance, GridPlant, InputLayout, PFOptions

log = logging.getLogger(__name__)

_DATA_DIR = Path(__file__).parent / "data"


# ---------------------------------------------------------------------------
# Scenario model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScheduleEntry:
    """Piecewise-constant disturbance segment starting at time ``t``."""

    t: float
    load_scale: float = 1.0
    avail_scale: float = 1.0


@dataclass(frozen=True)
class RunSettings:
    sampling_period: float = 10.0
    horizon: float = 8040.0
    steady_residual: float = 1e-6
    steady_periods: int = 10
    stop_at_steady: bool = False
    seed: int = 0

    def __post_init__(self):
        if not (self.horizon >= self.sampling_period > 0):
            raise ValueError("need horizon >= sampling_period > 0")


@dataclass(frozen=True)
class ControllerSettings:
    mode: str = "multiarea"                # "multiarea" | "centralized"
    algorithm: str = "penalty_gradient"    # centralized algorithm choice
    alpha: float | str = "auto"
    beta: float = 0.1
    gamma: float | tuple | str = "auto"
    rho: float = 1e3
    safety: float = 0.5                    # gamma = safety * mu_hat when auto
    mu_samples: int = 100
    mu_seed: int = 1
    mu_box: float = 0.2                    # sampling box, fraction of input range
    loss_weight: float = 0.0


@dataclass
class Scenario:
    """Fully resolved scenario: case, partition, controllers, schedule, run."""

    case: GridCase
    partition: AreaPartition
    controllers: ControllerSettings
    schedule: tuple[ScheduleEntry, ...]
    run: RunSettings
    initial_u: np.ndarray | None = None
    config_echo: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.schedule or self.schedule[0].t > 0:
            raise ValueError("schedule must start at t = 0")

    def n_periods(self) -> int:
        return int(round(self.run.horizon / self.run.sampling_period))

    def segment_at(self, t: float) -> ScheduleEntry:
        current = self.schedule[0]
        for entry in self.schedule:
            if entry.t <= t + 1e-9:
                current = entry
        return current


def _apply_limit_overrides(case: GridCase, overrides: dict) -> GridCase:
    """Replace branch current limits; keys are 1-based branch rows."""
    if not overrides:
        return case
    branches = list(case.branches)
    for key, limit in overrides.items():
        row = int(key)
        if not (1 <= row <= len(branches)):
            raise MalformedTable(f"branch limit override row {row} out of range")
        br = branches[row - 1]
        branches[row - 1] = Branch(
            from_bus=br.from_bus, to_bus=br.to_bus, r=br.r, x=br.x,
            b_charging=br.b_charging, current_limit=float(limit),
            tap_ratio=br.tap_ratio, phase_shift=br.phase_shift,
            in_service=br.in_service)
    return GridCase(base_mva=case.base_mva, buses=case.buses,
                    branches=tuple(branches), generators=case.generators)


def builtin_path(name: str) -> Path:
    """Path of a case or scenario file shipped with the package."""
    path = _DATA_DIR / name
    if not path.exists():
        raise FileNotFoundError(f"no builtin data file {name!r}")
    return path


def _load_case(spec: dict, base_dir: Path) -> GridCase:
    if "builtin" in spec:
        path = builtin_path(spec["builtin"])
    elif "matpower" in spec:
        path = base_dir / spec["matpower"]
    elif "json" in spec:
        path = base_dir / spec["json"]
    else:
        raise MalformedTable("scenario case must give builtin/matpower/json")
    text = Path(path).read_text()
    if path.suffix == ".json":
        return parse_json_case(text)
    return parse_matpower_case(text)


def scenario_from_dict(doc: dict, base_dir: Path = Path(".")) -> Scenario:
    """Build a scenario from a parsed JSON document."""
    doc = copy.deepcopy(doc)
    case = _load_case(doc.get("case", {}), base_dir)
    case = _apply_limit_overrides(case, doc.get("limits", {}).get("branch_current", {}))

    part_doc = doc.get("partition", {})
    if "bus_area" in part_doc:
        partition = AreaPartition.build(case, part_doc["bus_area"])
    else:
        partition = AreaPartition.single_area(case)

    ctrl_doc = doc.get("controllers", {})
    gamma = ctrl_doc.get("gamma", "auto")
    if isinstance(gamma, list):
        gamma = tuple(float(g) for g in gamma)
    controllers = ControllerSettings(
        mode=ctrl_doc.get("mode", "multiarea"),
        algorithm=ctrl_doc.get("algorithm", "penalty_gradient"),
        alpha=ctrl_doc.get("alpha", "auto"),
        beta=float(ctrl_doc.get("beta", 0.1)),
        gamma=gamma,
        rho=float(ctrl_doc.get("rho", 1e3)),
        safety=float(ctrl_doc.get("safety", 0.5)),
        mu_samples=int(ctrl_doc.get("mu_samples", 100)),
        mu_seed=int(ctrl_doc.get("mu_seed", 1)),
        mu_box=float(ctrl_doc.get("mu_box", 0.2)),
        loss_weight=float(ctrl_doc.get("loss_weight", 0.0)),
    )
    if controllers.mode not in ("multiarea", "centralized"):
        raise MalformedTable(f"unknown controller mode {controllers.mode!r}")
    if controllers.algorithm not in (m.value for m in ControllerMode):
        raise MalformedTable(f"unknown algorithm {controllers.algorithm!r}")

    schedule = tuple(
        ScheduleEntry(t=float(e.get("t", 0.0)),
                      load_scale=float(e.get("load_scale", 1.0)),
                      avail_scale=float(e.get("avail_scale", 1.0)))
        for e in doc.get("schedule", [{"t": 0.0}])
    )
    run_doc = doc.get("run", {})
    run = RunSettings(
        sampling_period=float(run_doc.get("sampling_period", 10.0)),
        horizon=float(run_doc.get("horizon", 8040.0)),
        steady_residual=float(run_doc.get("steady_residual", 1e-6)),
        steady_periods=int(run_doc.get("steady_periods", 10)),
        stop_at_steady=bool(run_doc.get("stop_at_steady", False)),
        seed=int(run_doc.get("seed", 0)),
    )
    initial = doc.get("initial_u")
    initial_u = None if initial in (None, "case") else np.asarray(initial, dtype=float)
    return Scenario(case=case, partition=partition, controllers=controllers,
                    schedule=schedule, run=run, initial_u=initial_u,
                    config_echo=doc)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedTable(f"invalid scenario JSON: {exc}") from exc
    return scenario_from_dict(doc, base_dir=path.parent)


# ---------------------------------------------------------------------------
# Constraint and cost assembly
# ---------------------------------------------------------------------------

def input_box(case: GridCase, layout: InputLayout,
              avail_scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise input bounds (lo, hi) in p.u."""
    dim = layout.dim
    lo = np.empty(dim)
    hi = np.empty(dim)
    base = case.base_mva
    for k, g in enumerate(layout.gen_order):
        gen = case.generators[g]
        p_hi = min(gen.p_available * avail_scale, gen.p_max) / base
        p_lo = min(gen.p_min / base, p_hi)
        lo[2 * k], hi[2 * k] = p_lo, p_hi
        lo[2 * k + 1], hi[2 * k + 1] = gen.q_min / base, gen.q_max / base
    return lo, hi


def box_rows(lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Polyhedral rows (A, b) for lo <= x <= hi."""
    n = lo.size
    a = np.zeros((2 * n, n))
    b = np.empty(2 * n)
    for j in range(n):
        a[2 * j, j] = 1.0
        b[2 * j] = hi[j]
        a[2 * j + 1, j] = -1.0
        b[2 * j + 1] = -lo[j]
    return a, b


def _output_row_triplets(case: GridCase, out_idx: np.ndarray) -> list[tuple[int, float, float]]:
    """(global output index, sign, bound) for every limit on the given outputs."""
    rows = []
    n_bus = case.n_bus
    for g in out_idx:
        g = int(g)
        if g < n_bus:
            bus = case.buses[g]
            rows.append((g, 1.0, bus.v_max))
            rows.append((g, -1.0, -bus.v_min))
        else:
            br = case.branches[g - n_bus]
            if br.current_limit > 0:
                rows.append((g, 1.0, br.current_limit))
    return rows


def _rows_to_matrix(triplets, col_of: dict[int, int], width: int):
    c = np.zeros((len(triplets), width))
    d = np.empty(len(triplets))
    for r, (g, sign, bound) in enumerate(triplets):
        c[r, col_of[g]] = sign
        d[r] = bound
    return c, d


def global_output_constraints(case: GridCase) -> tuple[np.ndarray, np.ndarray]:
    """Unique global output rows: voltage bands plus finite current limits."""
    all_idx = np.arange(case.n_bus + case.n_branch)
    triplets = _output_row_triplets(case, all_idx)
    return _rows_to_matrix(triplets, {int(g): int(g) for g in all_idx},
                           case.n_bus + case.n_branch)


def build_cost_model(case: GridCase, layout: InputLayout,
                     avail_scale: float = 1.0, loss_weight: float = 0.0) -> CostModel:
    """Global cost model in per-unit currency from the case coefficients."""
    base = case.base_mva
    n = len(layout.gen_order)
    weights = np.empty(n)
    targets = np.empty(n)
    q_weights = np.empty(n)
    for k, g in enumerate(layout.gen_order):
        gen = case.generators[g]
        weights[k] = gen.cost_curtail * base * base
        targets[k] = min(gen.p_available * avail_scale, gen.p_max) / base
        q_weights[k] = gen.cost_q * base * base
    return CostModel(curtail_weights=weights, curtail_targets=targets,
                     q_weights=q_weights, loss_weight=loss_weight)


def build_area_controllers(scenario: Scenario, avail_scale: float = 1.0,
                           gammas=None) -> list[AreaController]:
    """Per-area controllers (penalty-based local law) for the scenario."""
    case, partition = scenario.case, scenario.partition
    layout = InputLayout.from_case(case, partition)
    cost = build_cost_model(case, layout, avail_scale,
                            scenario.controllers.loss_weight)
    lo, hi = input_box(case, layout, avail_scale)
    out_idx = area_output_indices(case, partition)
    rho = scenario.controllers.rho

    slices = dict(layout.area_slices)
    controllers = []
    for a in range(1, partition.n_areas + 1):
        sl = slices.get(a, slice(0, 0))
        pairs = np.array([k for k, ar in enumerate(layout.area_of) if ar == a],
                         dtype=int)
        idx = out_idx[a - 1]
        triplets = _output_row_triplets(case, idx)
        col_of = {int(g): j for j, g in enumerate(idx)}
        c_loc, d_loc = _rows_to_matrix(triplets, col_of, idx.size)
        a_loc, b_loc = box_rows(lo[sl], hi[sl])
        gamma = 1.0 if gammas is None else float(gammas[a - 1])
        controllers.append(AreaController(
            area=a, gamma=gamma, cost=cost.restrict(pairs),
            penalty=PenaltyModel(rho=rho, C=c_loc, d=d_loc),
            a_ineq=a_loc, b_ineq=b_loc, input_slice=sl,
            output_indices=idx))
    return controllers


def build_centralized_config(scenario: Scenario, alpha: float,
                             avail_scale: float = 1.0) -> ControllerConfig:
    """One controller over the union of all inputs.

    Its penalty stacks every area's output rows (tie-line rows appear once
    per adjacent area), so the centralized objective equals the social cost
    sum of the per-area objectives.
    """
    case, partition = scenario.case, scenario.partition
    layout = InputLayout.from_case(case, partition)
    cost = build_cost_model(case, layout, avail_scale,
                            scenario.controllers.loss_weight)
    lo, hi = input_box(case, layout, avail_scale)
    a_in, b_in = box_rows(lo, hi)

    triplets = []
    for idx in area_output_indices(case, partition):
        triplets.extend(_output_row_triplets(case, idx))
    width = case.n_bus + case.n_branch
    c_all, d_all = _rows_to_matrix(
        triplets, {g: g for g in range(width)}, width)

    mode = ControllerMode(scenario.controllers.algorithm)
    return ControllerConfig(
        alpha=alpha, mode=mode, cost=cost, A=a_in, b=b_in, C=c_all, d=d_all,
        beta=scenario.controllers.beta,
        penalty=PenaltyModel(rho=scenario.controllers.rho, C=c_all, d=d_all))


def make_plant(scenario: Scenario, entry: ScheduleEntry | None = None,
               tol: float = 1e-8) -> GridPlant:
    """Plant at a schedule segment's disturbance, warm-start enabled."""
    entry = entry or scenario.schedule[0]
    case = scenario.case
    w = Disturbance.from_case(case)
    w.p_load *= entry.load_scale
    w.q_load *= entry.load_scale
    layout = InputLayout.from_case(case, scenario.partition)
    return GridPlant(case, w, PFOptions(tol=tol, flat_start=False), layout)


def _mu_region(lo: np.ndarray, hi: np.ndarray, u0: np.ndarray,
               frac: float) -> tuple[np.ndarray, np.ndarray]:
    half = 0.5 * frac * (hi - lo)
    return np.clip(u0 - half, lo, hi), np.clip(u0 + half, lo, hi)


def resolve_gains(scenario: Scenario, controllers: list[AreaController],
                  plant: GridPlant, u0: np.ndarray) -> tuple[list[AreaController], float]:
    """Fill in automatic gains: gamma_i = safety * mu_hat.

    Returns the controllers (mutated in place) and the sampled mu_hat, which
    is NaN when explicit gains were supplied.
    """
    settings = scenario.controllers
    if settings.gamma != "auto":
        gammas = settings.gamma
        if isinstance(gammas, (int, float)):
            gammas = [float(gammas)] * len(controllers)
        for ctrl, g in zip(controllers, gammas):
            ctrl.gamma = float(g)
        return controllers, float("nan")

    layout = plant.layout
    lo, hi = input_box(scenario.case, layout)
    region = _mu_region(lo, hi, u0, settings.mu_box)
    est = estimate_cocoercivity(controllers, plant.fork(), settings.mu_samples,
                                region, seed=settings.mu_seed)
    if est.mu_hat <= 0:
        raise GridloopError(
            f"sampled cocoercivity ratio nonpositive ({est.mu_hat:.3e}); "
            "cannot pick stable gains automatically")
    gamma = settings.safety * est.mu_hat
    for ctrl in controllers:
        ctrl.gamma = gamma
    log.info("auto gains: mu_hat=%.6g gamma=%.6g (safety %.2f)",
             est.mu_hat, gamma, settings.safety)
    return controllers, est.mu_hat


# ---------------------------------------------------------------------------
# Closed-loop driver
# ---------------------------------------------------------------------------

@dataclass
class SimLog:
    """Per-period records of one closed-loop run."""

    k: np.ndarray
    t: np.ndarray
    u: np.ndarray               # (K, dim u)
    y: np.ndarray               # (K, dim y)
    area_costs: np.ndarray      # (K, N)
    social_cost: np.ndarray
    max_violation: np.ndarray
    residual: np.ndarray
    steady_at: int | None
    mu_hat: float
    meta: dict

    def n_periods(self) -> int:
        return int(self.k.size)

    def final_state(self) -> GameState:
        return GameState(u=self.u[-1].copy(), y=self.y[-1].copy(),
                         k=int(self.k[-1]))


class _LogBuilder:
    def __init__(self, meta: dict, mu_hat: float):
        self.rows = {name: [] for name in
                     ("k", "t", "u", "y", "area_costs", "social_cost",
                      "max_violation", "residual")}
        self.meta = meta
        self.mu_hat = mu_hat
        self.steady_at: int | None = None
        self._streak = 0

    def add(self, k, t, u, y, area_costs, maxviol, residual,
            steady_residual, steady_periods):
        r = self.rows
        r["k"].append(k)
        r["t"].append(t)
        r["u"].append(u.copy())
        r["y"].append(y.copy())
        r["area_costs"].append(np.asarray(area_costs, dtype=float))
        r["social_cost"].append(float(np.sum(area_costs)))
        r["max_violation"].append(maxviol)
        r["residual"].append(residual)
        if residual < steady_residual:
            self._streak += 1
            if self._streak >= steady_periods and self.steady_at is None:
                self.steady_at = k
        else:
            self._streak = 0

    def build(self) -> SimLog:
        r = self.rows
        return SimLog(
            k=np.asarray(r["k"], dtype=int),
            t=np.asarray(r["t"], dtype=float),
            u=np.asarray(r["u"], dtype=float),
            y=np.asarray(r["y"], dtype=float),
            area_costs=np.asarray(r["area_costs"], dtype=float),
            social_cost=np.asarray(r["social_cost"], dtype=float),
            max_violation=np.asarray(r["max_violation"], dtype=float),
            residual=np.asarray(r["residual"], dtype=float),
            steady_at=self.steady_at, mu_hat=self.mu_hat, meta=self.meta)


def _log_meta(scenario: Scenario, mode: str) -> dict:
    case = scenario.case
    layout = InputLayout.from_case(case, scenario.partition)
    return {
        "mode": mode,
        "bus_ids": [b.id for b in case.buses],
        "n_branch": case.n_branch,
        "input_gen_bus": [case.generators[g].bus for g in layout.gen_order],
        "n_areas": scenario.partition.n_areas,
        "base_mva": case.base_mva,
        "config": scenario.config_echo,
        "branch_limits": [br.current_limit for br in case.branches],
    }


def run_closed_loop(scenario: Scenario, mode: str | None = None,
                    progress=None) -> SimLog:
    """Run the scenario's closed loop and log every control period.

    Parameters
    ----------
    scenario : Scenario
    mode : str, optional
        Override the scenario's controller mode ("multiarea"/"centralized").
    progress : callable, optional
        Called as ``progress(k, residual, max_violation)`` once per period.

    Raises
    ------
    PlantNonConvergence
        The plant lost convergence mid-run; the exception carries the
        partial log.
    """
    mode = mode or scenario.controllers.mode
    case = scenario.case
    layout = InputLayout.from_case(case, scenario.partition)
    period = scenario.run.sampling_period
    n_periods = scenario.n_periods()

    entry = scenario.segment_at(0.0)
    plant = make_plant(scenario, entry)
    u = scenario.initial_u.copy() if scenario.initial_u is not None \
        else layout.default_input(case)

    area_ctrls = build_area_controllers(scenario, entry.avail_scale)
    mu_hat = float("nan")
    if mode == "multiarea":
        area_ctrls, mu_hat = resolve_gains(scenario, area_ctrls, plant, u)
        step_ctrls = area_ctrls
        central_cfg = None
        dual = None
    else:
        alpha = scenario.controllers.alpha
        if alpha == "auto":
            # The centralized iterate is the N=1 game; reuse the sampler.
            single = Scenario(case=case, partition=AreaPartition.single_area(case),
                              controllers=scenario.controllers,
                              schedule=scenario.schedule, run=scenario.run,
                              initial_u=scenario.initial_u,
                              config_echo=scenario.config_echo)
            probe = build_area_controllers(single, entry.avail_scale)
            _, mu_hat = resolve_gains(single, probe, make_plant(single, entry), u)
            alpha = scenario.controllers.safety * mu_hat
        central_cfg = build_centralized_config(scenario, float(alpha),
                                               entry.avail_scale)
        dual = DualState(lam=np.zeros(central_cfg.C.shape[0]))
        step_ctrls = None

    c_glob, d_glob = global_output_constraints(case)
    meta = _log_meta(scenario, mode)
    meta["alpha"] = None if central_cfg is None else central_cfg.alpha
    meta["gamma"] = [c.gamma for c in area_ctrls] if mode == "multiarea" else None
    builder = _LogBuilder(meta, mu_hat)

    current_entry = entry
    try:
        y = plant.measure(u)
    except NonConvergence as exc:
        raise PlantNonConvergence(
            f"initial power flow failed: {exc}", builder.build()) from exc

    for k in range(n_periods):
        t = k * period
        entry = scenario.segment_at(t)
        if entry is not current_entry:
            plant = make_plant(scenario, entry)
            if mode == "multiarea":
                gammas = [c.gamma for c in area_ctrls]
                area_ctrls = build_area_controllers(scenario, entry.avail_scale,
                                                    gammas=gammas)
                step_ctrls = area_ctrls
            else:
                central_cfg = build_centralized_config(
                    scenario, central_cfg.alpha, entry.avail_scale)
                area_ctrls = build_area_controllers(scenario, entry.avail_scale)
            current_entry = entry
            try:
                y = plant.measure(u)
            except NonConvergence as exc:
                raise PlantNonConvergence(
                    f"power flow failed at period {k}: {exc}",
                    builder.build()) from exc

        try:
            sens = plant.sensitivity(u)
            if mode == "multiarea":
                state = multiarea_step(step_ctrls, GameState(u=u, y=y, k=k),
                                       sens, plant)
                u_next, y_next = state.u, state.y
            else:
                if central_cfg.mode is ControllerMode.PENALTY_GRADIENT:
                    u_next = penalty_gradient_step(central_cfg, u, y, sens)
                elif central_cfg.mode is ControllerMode.PROJECTED_DESCENT:
                    u_next = projected_descent_step(central_cfg, u, y, sens).u_next
                else:
                    u_next, dual = primal_dual_step(central_cfg, u, y, sens, dual)
                y_next = plant.measure(u_next)
        except NonConvergence as exc:
            raise PlantNonConvergence(
                f"power flow failed at period {k}: {exc}", builder.build()) from exc

        costs = [c.local_cost(u, y) for c in area_ctrls]
        maxviol = float(np.max(c_glob @ y - d_glob)) if d_glob.size else 0.0
        residual = float(np.linalg.norm(u_next - u))
        builder.add(k, t, u, y, costs, maxviol, residual,
                    scenario.run.steady_residual, scenario.run.steady_periods)
        if progress is not None:
            progress(k, residual, maxviol)
        u, y = u_next, y_next
        if scenario.run.stop_at_steady and builder.steady_at is not None:
            break

    return builder.build()


# ---------------------------------------------------------------------------
# Centralized-vs-multi-area comparison
# ---------------------------------------------------------------------------

@dataclass
class ComparisonReport:
    """Steady-state economics of the multi-area game versus one controller."""

    area_curtailed_mw_multi: np.ndarray
    area_curtailed_mw_central: np.ndarray
    area_curtail_cost_multi: np.ndarray
    area_curtail_cost_central: np.ndarray
    area_local_cost_multi: np.ndarray
    area_local_cost_central: np.ndarray
    total_curtailed_mw_multi: float
    total_curtailed_mw_central: float
    total_curtail_cost_multi: float
    total_curtail_cost_central: float
    social_cost_multi: float
    social_cost_central: float
    cost_ratio: float

    def to_dict(self) -> dict:
        out = {}
        for name, val in self.__dict__.items():
            out[name] = val.tolist() if isinstance(val, np.ndarray) else val
        return out


def _steady_economics(scenario: Scenario, log_: SimLog):
    """Per-area curtailment, curtailment cost and local cost at the final state."""
    state = log_.final_state()
    entry = scenario.segment_at(float(log_.t[-1]))
    controllers = build_area_controllers(scenario, entry.avail_scale)
    base = scenario.case.base_mva
    curtailed = np.array([curtailed_power(c.cost, state.u[c.input_slice], base)
                          for c in controllers])
    curt_cost = np.array([curtailment_cost(c.cost, state.u[c.input_slice])
                          for c in controllers])
    local = np.array([c.local_cost(state.u, state.y) for c in controllers])
    return curtailed, curt_cost, local


def run_comparison(scenario: Scenario, require_steady: bool = True) -> ComparisonReport:
    """Run the scenario in multi-area and centralized mode and compare.

    Both runs use steady-state stopping; the centralized run applies the
    penalty-gradient controller to the union of all controllable inputs with
    the stacked (social) objective.

    Raises
    ------
    GridloopError
        A run failed to reach steady state within the horizon (when
        ``require_steady``), or the centralized social cost exceeded the
        multi-area one beyond tolerance.
    """
    steady = Scenario(case=scenario.case, partition=scenario.partition,
                      controllers=scenario.controllers,
                      schedule=scenario.schedule,
                      run=RunSettings(
                          sampling_period=scenario.run.sampling_period,
                          horizon=scenario.run.horizon,
                          steady_residual=scenario.run.steady_residual,
                          steady_periods=scenario.run.steady_periods,
                          stop_at_steady=True, seed=scenario.run.seed),
                      initial_u=scenario.initial_u,
                      config_echo=scenario.config_echo)

    log_multi = run_closed_loop(steady, mode="multiarea")
    log_central = run_closed_loop(steady, mode="centralized")
    if require_steady:
        for name, lg in (("multi-area", log_multi), ("centralized", log_central)):
            if lg.steady_at is None:
                raise GridloopError(
                    f"{name} run did not reach steady state within the horizon")

    mw_m, cc_m, local_m = _steady_economics(steady, log_multi)
    mw_c, cc_c, local_c = _steady_economics(steady, log_central)
    social_m = float(np.sum(local_m))
    social_c = float(np.sum(local_c))
    if social_c > social_m + 1e-9 * (1.0 + abs(social_m)):
        raise GridloopError(
            f"centralized social cost {social_c} exceeds multi-area {social_m}")

    total_cc_c = float(np.sum(cc_c))
    ratio = float(np.sum(cc_m)) / total_cc_c if total_cc_c > 0 else float("nan")
    return ComparisonReport(
        area_curtailed_mw_multi=mw_m, area_curtailed_mw_central=mw_c,
        area_curtail_cost_multi=cc_m, area_curtail_cost_central=cc_c,
        area_local_cost_multi=local_m, area_local_cost_central=local_c,
        total_curtailed_mw_multi=float(np.sum(mw_m)),
        total_curtailed_mw_central=float(np.sum(mw_c)),
        total_curtail_cost_multi=float(np.sum(cc_m)),
        total_curtail_cost_central=total_cc_c,
        social_cost_multi=social_m, social_cost_central=social_c,
        cost_ratio=ratio)


# ---------------------------------------------------------------------------
# Series emission
# ---------------------------------------------------------------------------

def _csv_bytes(header: list[str], rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return buf.getvalue().encode()


def _g12(x: float) -> str:
    return format(float(x), ".12g")


def emit_series(log_: SimLog, outdir,
                certificate: NashCertificate | None = None) -> list[Path]:
    """Write the log as CSV series plus a JSON summary; returns the paths.

    Output bytes are a pure function of the log (and certificate), so
    re-emission is byte-identical.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    meta = log_.meta
    n_bus = len(meta["bus_ids"])
    paths = []

    def write(name: str, data: bytes) -> None:
        path = outdir / name
        path.write_bytes(data)
        paths.append(path)

    kt = [[int(k), _g12(t)] for k, t in zip(log_.k, log_.t)]

    header = ["k", "t"] + [f"bus_{b}_vm" for b in meta["bus_ids"]]
    rows = [kt[i] + [_g12(v) for v in log_.y[i, :n_bus]]
            for i in range(log_.n_periods())]
    write("voltages.csv", _csv_bytes(header, rows))

    header = ["k", "t"] + [f"branch_{j + 1}_im" for j in range(meta["n_branch"])]
    rows = [kt[i] + [_g12(v) for v in log_.y[i, n_bus:]]
            for i in range(log_.n_periods())]
    write("currents.csv", _csv_bytes(header, rows))

    base = meta["base_mva"]
    header = ["k", "t"]
    for bus in meta["input_gen_bus"]:
        header += [f"gen_{bus}_p_mw", f"gen_{bus}_q_mvar"]
    rows = [kt[i] + [_g12(v * base) for v in log_.u[i]]
            for i in range(log_.n_periods())]
    write("injections.csv", _csv_bytes(header, rows))

    header = ["k", "t"] + [f"area_{a + 1}_cost" for a in range(meta["n_areas"])] \
        + ["social_cost", "max_violation", "residual"]
    rows = [kt[i] + [_g12(v) for v in log_.area_costs[i]]
            + [_g12(log_.social_cost[i]), _g12(log_.max_violation[i]),
               _g12(log_.residual[i])]
            for i in range(log_.n_periods())]
    write("costs.csv", _csv_bytes(header, rows))

    summary = {
        "mode": meta["mode"],
        "n_periods": log_.n_periods(),
        "steady_at": log_.steady_at,
        "mu_hat": None if np.isnan(log_.mu_hat) else log_.mu_hat,
        "alpha": meta.get("alpha"),
        "gamma": meta.get("gamma"),
        "final_social_cost": float(log_.social_cost[-1]),
        "final_max_violation": float(log_.max_violation[-1]),
        "final_residual": float(log_.residual[-1]),
        "config": meta.get("config", {}),
    }
    if certificate is not None:
        summary["nash_certificate"] = certificate.to_dict()
    write("summary.json", (json.dumps(summary, indent=2, sort_keys=True) + "\n").encode())
    return paths


def certify_scenario(scenario: Scenario, log_: SimLog) -> NashCertificate:
    """Certify the final state of a closed-loop run as a Nash candidate."""
    entry = scenario.segment_at(float(log_.t[-1]))
    controllers = build_area_controllers(scenario, entry.avail_scale)
    plant = make_plant(scenario, entry)
    gammas = log_.meta.get("gamma")
    mu_hat = log_.mu_hat
    if gammas:
        for ctrl, g in zip(controllers, gammas):
            ctrl.gamma = float(g)
    else:
        # Centralized logs carry no game gains; sample them for the
        # best-response inner solver.
        controllers, mu_hat = resolve_gains(scenario, controllers, plant,
                                            log_.final_state().u)
    return certify_nash(controllers, log_.final_state(), plant, mu_hat=mu_hat)
