"""The physical plant: AC power flow, output extraction, and input sensitivities.

The controllable input vector ``u`` stacks one ``(p_inject, q_inject)`` pair
per controllable generator, in per-unit, with generators ordered by
``(area, generator-table index)``.  The output vector ``y`` stacks all bus
voltage magnitudes (bus-table order) followed by all branch current
magnitudes measured at the "from" end (branch-table order), both per-unit.

Generator reactive limits are not enforced inside the power flow (no PV/PQ
switching) so the plant map stays smooth; those limits belong in the
controllers' constraint sets.  A controllable unit on a PV bus acts through
its active-power component only — the bus keeps its voltage set-point and the
``q_inject`` entry has no effect on the network.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NonConvergence, SingularJacobian
from .netmodel import AreaPartition, BusKind, GridCase, build_admittance

log = logging.getLogger(__name__)

_FLAT_V = 1.0
_CURRENT_EPS = 1e-9  # below this magnitude the current derivative is treated as 0


@dataclass(frozen=True)
class PFOptions:
    """Newton-Raphson settings."""

    tol: float = 1e-8       # max |power mismatch| in p.u.
    max_iter: int = 20
    flat_start: bool = True

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class VoltageState:
    """Converged power flow solution in polar coordinates."""

    v_mag: np.ndarray  # p.u., length n_bus
    v_ang: np.ndarray  # rad, length n_bus

    def complex_voltage(self) -> np.ndarray:
        return self.v_mag * np.exp(1j * self.v_ang)


@dataclass
class Disturbance:
    """Exogenous injections: loads plus non-controllable generation."""

    p_load: np.ndarray          # p.u. per bus
    q_load: np.ndarray          # p.u. per bus
    p_uncontrolled: np.ndarray  # p.u. per generator-table row

    @classmethod
    def from_case(cls, case: GridCase) -> "Disturbance":
        base = case.base_mva
        return cls(
            p_load=np.array([b.p_load for b in case.buses]) / base,
            q_load=np.array([b.q_load for b in case.buses]) / base,
            p_uncontrolled=np.array(
                [0.0 if g.controllable else g.p_set for g in case.generators]
            ) / base,
        )

    def copy(self) -> "Disturbance":
        return Disturbance(self.p_load.copy(), self.q_load.copy(),
                           self.p_uncontrolled.copy())


@dataclass(frozen=True)
class InputLayout:
    """Ordering of the controllable input vector.

    ``gen_order`` holds generator-table indices of controllable units sorted
    by ``(area, table index)``; entry ``k`` owns input components ``2k``
    (active power) and ``2k + 1`` (reactive power).
    """

    gen_order: tuple[int, ...]
    area_of: tuple[int, ...]               # area per gen_order entry
    area_slices: tuple[tuple[int, slice], ...]  # (area, slice into u)

    @classmethod
    def from_case(cls, case: GridCase,
                  partition: AreaPartition | None = None) -> "InputLayout":
        ctrl = [i for i, g in enumerate(case.generators) if g.controllable]
        if partition is None:
            order = tuple(ctrl)
            areas = tuple(1 for _ in ctrl)
        else:
            order = tuple(sorted(ctrl, key=lambda i:
                                 (partition.bus_area[case.generators[i].bus], i)))
            areas = tuple(partition.bus_area[case.generators[i].bus] for i in order)
        slices = []
        start = 0
        for a in sorted(set(areas)) if areas else []:
            width = 2 * sum(1 for x in areas if x == a)
            slices.append((a, slice(start, start + width)))
            start += width
        return cls(gen_order=order, area_of=areas, area_slices=tuple(slices))

    @property
    def dim(self) -> int:
        return 2 * len(self.gen_order)

    def default_input(self, case: GridCase) -> np.ndarray:
        """Initial u from the case set-points, converted to per-unit."""
        u = np.empty(self.dim)
        for k, g in enumerate(self.gen_order):
            gen = case.generators[g]
            u[2 * k] = gen.p_set / case.base_mva
            u[2 * k + 1] = gen.q_set / case.base_mva
        return u


@functools.lru_cache(maxsize=8)
def _compiled(case: GridCase) -> dict:
    """Index arrays and dense admittance data reused across solves."""
    pos = case.bus_positions()
    n = case.n_bus
    kinds = [b.kind for b in case.buses]
    slack = case.slack_position()
    pv = np.array([i for i, k in enumerate(kinds) if k is BusKind.PV], dtype=int)
    pq = np.array([i for i, k in enumerate(kinds) if k is BusKind.PQ], dtype=int)
    pvpq = np.concatenate([pv, pq])

    # Voltage set-points for slack and PV buses (first generator wins).
    v_sched = np.full(n, _FLAT_V)
    for gen in case.generators:
        b = pos[gen.bus]
        if kinds[b] is not BusKind.PQ:
            v_sched[b] = gen.v_set

    f_idx = np.array([pos[br.from_bus] for br in case.branches], dtype=int)
    t_idx = np.array([pos[br.to_bus] for br in case.branches], dtype=int)
    yff = np.zeros(case.n_branch, dtype=complex)
    yft = np.zeros(case.n_branch, dtype=complex)
    for i, br in enumerate(case.branches):
        if br.in_service:
            yff[i], yft[i], _, _ = br.admittance_terms()

    pvpq_pos = {int(b): i for i, b in enumerate(pvpq)}
    pq_pos = {int(b): i for i, b in enumerate(pq)}
    gen_bus_pos = np.array([pos[g.bus] for g in case.generators], dtype=int)

    return {
        "Y": build_admittance(case).toarray(),
        "slack": slack, "pv": pv, "pq": pq, "pvpq": pvpq,
        "pvpq_pos": pvpq_pos, "pq_pos": pq_pos,
        "v_sched": v_sched, "f_idx": f_idx, "t_idx": t_idx,
        "yff": yff, "yft": yft, "gen_bus_pos": gen_bus_pos,
    }


def _injections(case: GridCase, u: np.ndarray, w: Disturbance,
                layout: InputLayout) -> np.ndarray:
    """Specified complex bus injections S_spec in p.u."""
    cmp = _compiled(case)
    s = -(w.p_load + 1j * w.q_load).astype(complex)
    controllable = {g: k for k, g in enumerate(layout.gen_order)}
    base = case.base_mva
    for g, gen in enumerate(case.generators):
        b = cmp["gen_bus_pos"][g]
        if g in controllable:
            k = controllable[g]
            s[b] += u[2 * k] + 1j * u[2 * k + 1]
        else:
            q = gen.q_set / base if case.buses[b].kind is BusKind.PQ else 0.0
            s[b] += w.p_uncontrolled[g] + 1j * q
    return s


def _mismatch(case: GridCase, v: np.ndarray, s_spec: np.ndarray) -> np.ndarray:
    """Stacked mismatch F = [dP at PV+PQ; dQ at PQ]."""
    cmp = _compiled(case)
    mis = v * np.conj(cmp["Y"] @ v) - s_spec
    return np.concatenate([mis[cmp["pvpq"]].real, mis[cmp["pq"]].imag])


def _jacobian(case: GridCase, v: np.ndarray) -> np.ndarray:
    """NR Jacobian of the mismatch w.r.t. x = [theta(pvpq); vm(pq)]."""
    cmp = _compiled(case)
    y = cmp["Y"]
    i_bus = y @ v
    diag_v = np.diag(v)
    diag_i = np.diag(i_bus)
    diag_vn = np.diag(v / np.abs(v))
    ds_dth = 1j * diag_v @ np.conj(diag_i - y @ diag_v)
    ds_dvm = diag_v @ np.conj(y @ diag_vn) + np.conj(diag_i) @ diag_vn
    pvpq, pq = cmp["pvpq"], cmp["pq"]
    return np.block([
        [ds_dth[np.ix_(pvpq, pvpq)].real, ds_dvm[np.ix_(pvpq, pq)].real],
        [ds_dth[np.ix_(pq, pvpq)].imag, ds_dvm[np.ix_(pq, pq)].imag],
    ])


def solve_pf(case: GridCase, u: np.ndarray, w: Disturbance,
             opts: PFOptions = PFOptions(),
             layout: InputLayout | None = None,
             initial: VoltageState | None = None) -> VoltageState:
    """Solve the AC power flow for the plant state.

    Parameters
    ----------
    case : GridCase
    u : ndarray
        Controllable input vector (p.u.), see :class:`InputLayout`.
    w : Disturbance
        Loads and non-controllable injections (p.u.).
    opts : PFOptions
    layout : InputLayout, optional
        Input ordering; defaults to generator-table order.
    initial : VoltageState, optional
        Warm-start state; used when ``opts.flat_start`` is False or when
        provided explicitly.

    Returns
    -------
    VoltageState
        State with max |power mismatch| <= ``opts.tol`` at every non-slack
        bus; PV buses hold their voltage set-points, the slack bus absorbs
        the residual.

    Raises
    ------
    NonConvergence
        Iteration cap hit; signals voltage-stability loss or infeasible
        injections.
    SingularJacobian
    """
    layout = layout or InputLayout.from_case(case)
    cmp = _compiled(case)
    n = case.n_bus

    if initial is not None:
        vm = initial.v_mag.copy()
        ang = initial.v_ang.copy()
    else:
        vm = np.full(n, _FLAT_V)
        ang = np.zeros(n)
    # Scheduled magnitudes and the angle reference are held exactly.
    fixed = np.concatenate([[cmp["slack"]], cmp["pv"]]).astype(int)
    vm[fixed] = cmp["v_sched"][fixed]
    ang[cmp["slack"]] = 0.0

    s_spec = _injections(case, u, w, layout)
    pvpq, pq = cmp["pvpq"], cmp["pq"]
    n_a = len(pvpq)

    for it in range(opts.max_iter + 1):
        v = vm * np.exp(1j * ang)
        f = _mismatch(case, v, s_spec)
        worst = np.max(np.abs(f)) if f.size else 0.0
        if worst <= opts.tol:
            log.debug("power flow converged in %d iterations (mismatch %.3e)", it, worst)
            return VoltageState(v_mag=vm, v_ang=ang)
        if it == opts.max_iter:
            break
        jac = _jacobian(case, v)
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(f"power flow Jacobian singular at iteration {it}") from exc
        ang[pvpq] += dx[:n_a]
        vm[pq] += dx[n_a:]
    raise NonConvergence(
        f"power flow did not reach tol {opts.tol} in {opts.max_iter} iterations "
        f"(last mismatch {worst:.3e})"
    )


def compute_outputs(case: GridCase, state: VoltageState) -> np.ndarray:
    """Measured outputs: bus voltage magnitudes then branch current magnitudes.

    Currents are taken at the "from" end of each branch; out-of-service
    branches read zero.
    """
    cmp = _compiled(case)
    v = state.complex_voltage()
    i_from = cmp["yff"] * v[cmp["f_idx"]] + cmp["yft"] * v[cmp["t_idx"]]
    return np.concatenate([state.v_mag, np.abs(i_from)])


def output_dim(case: GridCase) -> int:
    return case.n_bus + case.n_branch


def _output_state_jacobian(case: GridCase, state: VoltageState) -> np.ndarray:
    """d(outputs)/d(x) with x = [theta(pvpq); vm(pq)]."""
    cmp = _compiled(case)
    pvpq, pq = cmp["pvpq"], cmp["pq"]
    n_bus, n_br = case.n_bus, case.n_branch
    n_x = len(pvpq) + len(pq)
    v = state.complex_voltage()
    dy = np.zeros((n_bus + n_br, n_x))

    for j, b in enumerate(pq):
        dy[b, len(pvpq) + j] = 1.0

    i_from = cmp["yff"] * v[cmp["f_idx"]] + cmp["yft"] * v[cmp["t_idx"]]
    for br in range(n_br):
        mag = abs(i_from[br])
        if mag < _CURRENT_EPS:
            continue
        w = np.conj(i_from[br]) / mag
        row = n_bus + br
        for end, coef in ((cmp["f_idx"][br], cmp["yff"][br]),
                          (cmp["t_idx"][br], cmp["yft"][br])):
            d_dth = 1j * coef * v[end]
            d_dvm = coef * v[end] / abs(v[end])
            if end in cmp["pvpq_pos"]:
                dy[row, cmp["pvpq_pos"][end]] += (w * d_dth).real
            if end in cmp["pq_pos"]:
                dy[row, len(pvpq) + cmp["pq_pos"][end]] += (w * d_dvm).real
    return dy


def _input_mismatch_jacobian(case: GridCase, layout: InputLayout) -> np.ndarray:
    """-dF/du: unit rows marking which mismatch equation each input feeds."""
    cmp = _compiled(case)
    pvpq, pq = cmp["pvpq"], cmp["pq"]
    n_x = len(pvpq) + len(pq)
    e = np.zeros((n_x, layout.dim))
    for k, g in enumerate(layout.gen_order):
        b = int(cmp["gen_bus_pos"][g])
        if b in cmp["pvpq_pos"]:
            e[cmp["pvpq_pos"][b], 2 * k] = 1.0
        if b in cmp["pq_pos"]:
            e[len(pvpq) + cmp["pq_pos"][b], 2 * k + 1] = 1.0
    return e


def sensitivity(case: GridCase, state: VoltageState, u: np.ndarray,
                layout: InputLayout | None = None) -> np.ndarray:
    """Input-output sensitivity of the plant map at a converged state.

    Applies the implicit function theorem to the mismatch system: with
    F(x, u) = 0 at the solution, dx/du = J(x)^-1 * (-dF/du), and the
    returned matrix is d(outputs)/dx @ dx/du, shape (dim y, dim u).

    Raises
    ------
    SingularJacobian
    """
    layout = layout or InputLayout.from_case(case)
    v = state.complex_voltage()
    jac = _jacobian(case, v)
    rhs = _input_mismatch_jacobian(case, layout)
    try:
        dx_du = np.linalg.solve(jac, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularJacobian("power flow Jacobian singular; no sensitivity") from exc
    return _output_state_jacobian(case, state) @ dx_du


def finite_diff_sensitivity(case: GridCase, u: np.ndarray, w: Disturbance,
                            step: float = 1e-5,
                            opts: PFOptions = PFOptions(),
                            layout: InputLayout | None = None) -> np.ndarray:
    """Central-difference sensitivity through the full solve.

    Verification oracle for :func:`sensitivity`; used in tests and
    diagnostics only.  Propagates :class:`NonConvergence`.
    """
    layout = layout or InputLayout.from_case(case)
    tight = PFOptions(tol=min(opts.tol, 1e-12), max_iter=max(opts.max_iter, 40),
                      flat_start=opts.flat_start)
    base_state = solve_pf(case, u, w, tight, layout)
    cols = []
    for j in range(layout.dim):
        du = np.zeros(layout.dim)
        du[j] = step
        y_plus = compute_outputs(case, solve_pf(case, u + du, w, tight, layout,
                                                initial=base_state))
        y_minus = compute_outputs(case, solve_pf(case, u - du, w, tight, layout,
                                                 initial=base_state))
        cols.append((y_plus - y_minus) / (2 * step))
    return np.column_stack(cols) if cols else np.zeros((output_dim(case), 0))


class GridPlant:
    """Stateful plant wrapper: measurement and sensitivity for one trajectory.

    With ``opts.flat_start`` False, each solve warm-starts from the previous
    converged state, so repeated measurements are cheap and a fixed call
    sequence is deterministic.
    """

    def __init__(self, case: GridCase, disturbance: Disturbance,
                 opts: PFOptions = PFOptions(),
                 layout: InputLayout | None = None):
        self.case = case
        self.disturbance = disturbance
        self.opts = opts
        self.layout = layout or InputLayout.from_case(case)
        self._state: VoltageState | None = None
        self._state_u: np.ndarray | None = None

    def fork(self) -> "GridPlant":
        """Fresh plant with the same parameters and no warm state."""
        return GridPlant(self.case, self.disturbance.copy(), self.opts, self.layout)

    def set_disturbance(self, w: Disturbance) -> None:
        self.disturbance = w
        self._state = self._state_u = None

    def _ensure_state(self, u: np.ndarray) -> VoltageState:
        if self._state is None or self._state_u is None or \
                not np.array_equal(self._state_u, u):
            warm = None if self.opts.flat_start else self._state
            try:
                self._state = solve_pf(self.case, u, self.disturbance, self.opts,
                                       self.layout, initial=warm)
            except NonConvergence:
                if warm is None:
                    raise
                # A stale warm start can sit in the wrong basin; retry flat.
                self._state = solve_pf(self.case, u, self.disturbance, self.opts,
                                       self.layout, initial=None)
            self._state_u = u.copy()
        return self._state

    def measure(self, u: np.ndarray) -> np.ndarray:
        """Outputs y = h(u; w) at the current disturbance."""
        return compute_outputs(self.case, self._ensure_state(u))

    def state(self, u: np.ndarray) -> VoltageState:
        return self._ensure_state(u)

    def sensitivity(self, u: np.ndarray) -> np.ndarray:
        return sensitivity(self.case, self._ensure_state(u), u, self.layout)

    @property
    def dim_u(self) -> int:
        return self.layout.dim

    @property
    def dim_y(self) -> int:
        return output_dim(self.case)


def dump_state_csv(case: GridCase, state: VoltageState) -> str:
    """One-row CSV diagnostic dump of a solved state and its outputs."""
    y = compute_outputs(case, state)
    headers = [f"bus_{b.id}_vm" for b in case.buses]
    headers += [f"branch_{i + 1}_im" for i in range(case.n_branch)]
    values = [format(v, ".12g") for v in y]
    return ",".join(headers) + "\n" + ",".join(values) + "\n"
