"""Multi-area congestion control as a noncooperative game.

Each area runs its own penalty-based feedback update on its local inputs
``u_i`` using only its local measurements ``y_i`` and the diagonal block of
the plant sensitivity (its own outputs versus its own inputs).  Stacked, the
synchronous update is a forward-backward splitting step

    u+ = proj_U(u - Gamma F(u)),     U = U_1 x ... x U_N,

whose fixed points are competitive equilibria.  The module also estimates
the cocoercivity constant of the stacked pseudo-gradient empirically and
certifies candidate equilibria by explicit unilateral best responses.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NoInformativePairs, NonConvergence
from .ofo import CostModel, PenaltyModel, cost_gradients, cost_value
from .qp import project_box_polytope

log = logging.getLogger(__name__)


@dataclass
class AreaController:
    """One area's local feedback law: gain, cost, constraints and index sets."""

    area: int
    gamma: float
    cost: CostModel              # over the area's own input pairs
    penalty: PenaltyModel        # rows act on the area's local outputs y_i
    a_ineq: np.ndarray           # local input set A_i u_i <= b_i
    b_ineq: np.ndarray
    input_slice: slice           # block of the global u owned by this area
    output_indices: np.ndarray   # global output indices observed by this area

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"area {self.area}: gamma must be positive")
        self.a_ineq = np.atleast_2d(np.asarray(self.a_ineq, dtype=float))
        self.b_ineq = np.asarray(self.b_ineq, dtype=float)
        self.output_indices = np.asarray(self.output_indices, dtype=int)

    @property
    def dim_u(self) -> int:
        return self.input_slice.stop - self.input_slice.start

    def local_view(self, y: np.ndarray) -> np.ndarray:
        return y[self.output_indices]

    def local_sensitivity(self, s_global: np.ndarray) -> np.ndarray:
        cols = np.arange(self.input_slice.start, self.input_slice.stop)
        return s_global[np.ix_(self.output_indices, cols)]

    def local_cost(self, u: np.ndarray, y: np.ndarray) -> float:
        return cost_value(self.cost, self.penalty, u[self.input_slice],
                          self.local_view(y))


@dataclass
class GameState:
    """Iterate of the multi-area loop."""

    u: np.ndarray
    y: np.ndarray
    k: int = 0


@dataclass
class Gains:
    """Block-diagonal gain matrix Gamma = diag(gamma_i I)."""

    gammas: tuple[float, ...]
    slices: tuple[slice, ...]

    def __post_init__(self):
        if any(g <= 0 for g in self.gammas):
            raise ValueError("all gains must be positive")

    @classmethod
    def from_controllers(cls, controllers) -> "Gains":
        return cls(gammas=tuple(c.gamma for c in controllers),
                   slices=tuple(c.input_slice for c in controllers))

    @property
    def vector(self) -> np.ndarray:
        dim = max(sl.stop for sl in self.slices)
        v = np.empty(dim)
        for g, sl in zip(self.gammas, self.slices):
            v[sl] = g
        return v

    @property
    def max_gamma(self) -> float:
        return max(self.gammas)


@dataclass
class NashCertificate:
    """Evidence that a state is (close to) a competitive equilibrium."""

    fixed_point_residual: float
    best_response_gaps: np.ndarray  # relative unilateral improvement per area
    mu_hat: float                   # sampled cocoercivity estimate, NaN if unknown

    def __post_init__(self):
        self.best_response_gaps = np.asarray(self.best_response_gaps, dtype=float)
        if self.fixed_point_residual < 0 or np.any(self.best_response_gaps < 0):
            raise ValueError("certificate fields must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "fixed_point_residual": self.fixed_point_residual,
            "best_response_gaps": self.best_response_gaps.tolist(),
            "mu_hat": self.mu_hat,
        }


def local_gradient(ctrl: AreaController, u: np.ndarray, y_i: np.ndarray,
                   s_i: np.ndarray) -> np.ndarray:
    """Area i's partial gradient of its own cost through the local plant block.

    F_i = grad_{u_i} J_i + S_i' grad_{y_i} J_i, with S_i the block of the
    plant sensitivity mapping area-i inputs to area-i outputs.
    """
    u_i = u[ctrl.input_slice]
    grad_u, grad_y = cost_gradients(ctrl.cost, ctrl.penalty, u_i, y_i)
    return grad_u + s_i.T @ grad_y


def multiarea_step(controllers, state: GameState, sensitivity: np.ndarray,
                   plant) -> GameState:
    """Synchronous update of all areas, then a plant resolve.

    Every area acts on the same measured ``state.y``; each block is
    projected onto its own input set.  Propagates the plant's
    :class:`~gridloop.errors.NonConvergence` (an instability event).
    """
    u_next = state.u.copy()
    for ctrl in controllers:
        y_i = ctrl.local_view(state.y)
        s_i = ctrl.local_sensitivity(sensitivity)
        f_i = local_gradient(ctrl, state.u, y_i, s_i)
        u_i = state.u[ctrl.input_slice]
        u_next[ctrl.input_slice] = project_box_polytope(
            u_i - ctrl.gamma * f_i, ctrl.a_ineq, ctrl.b_ineq)
    return GameState(u=u_next, y=plant.measure(u_next), k=state.k + 1)


def pseudo_gradient(controllers, u: np.ndarray, plant,
                    y: np.ndarray | None = None,
                    sensitivity: np.ndarray | None = None) -> np.ndarray:
    """Stacked pseudo-gradient F(u) = col(F_1, ..., F_N) at y = h(u; w).

    ``y`` and ``sensitivity`` may be supplied to reuse an existing plant
    evaluation; otherwise the plant is queried at ``u``.
    """
    if y is None:
        y = plant.measure(u)
    if sensitivity is None:
        sensitivity = plant.sensitivity(u)
    out = np.empty_like(u)
    for ctrl in controllers:
        out[ctrl.input_slice] = local_gradient(
            ctrl, u, ctrl.local_view(y), ctrl.local_sensitivity(sensitivity))
    return out


def make_projector(controllers):
    """Blockwise projection onto U = prod U_i (Cartesian structure)."""
    def projector(v: np.ndarray) -> np.ndarray:
        out = v.copy()
        for ctrl in controllers:
            out[ctrl.input_slice] = project_box_polytope(
                v[ctrl.input_slice], ctrl.a_ineq, ctrl.b_ineq)
        return out
    return projector


def fb_operator(gains: Gains, u: np.ndarray, pseudo_grad: np.ndarray,
                projector) -> np.ndarray:
    """Forward-backward step proj_U(u - Gamma F(u))."""
    return projector(u - gains.vector * pseudo_grad)


@dataclass
class CocoercivityEstimate:
    """Sampled lower proxy for the cocoercivity constant of F."""

    mu_hat: float
    minimizing_pair: tuple[np.ndarray, np.ndarray]
    n_pairs_used: int
    n_pairs_skipped: int
    negative_fraction: float  # share of informative pairs with ratio <= 0

    def __float__(self) -> float:
        return self.mu_hat


def estimate_cocoercivity(controllers, plant, sample_pairs: int,
                          region: tuple[np.ndarray, np.ndarray],
                          seed: int = 0) -> CocoercivityEstimate:
    """Estimate mu from sampled pairs: min <F(u)-F(u'), u-u'> / ||F(u)-F(u')||^2.

    Parameters
    ----------
    region : (lo, hi)
        Componentwise sampling box, expected to lie inside U.
    sample_pairs : int
        Number of (u, u') pairs; pairs with near-zero gradient difference
        are skipped.

    Raises
    ------
    NoInformativePairs
        Every sampled pair was degenerate (constant F over the region).
    """
    lo, hi = np.asarray(region[0], dtype=float), np.asarray(region[1], dtype=float)
    rng = np.random.default_rng(seed)
    best = np.inf
    best_pair = None
    used = skipped = negative = 0
    for _ in range(sample_pairs):
        ua = lo + rng.random(lo.size) * (hi - lo)
        ub = lo + rng.random(lo.size) * (hi - lo)
        fa = pseudo_gradient(controllers, ua, plant)
        fb = pseudo_gradient(controllers, ub, plant)
        df = fa - fb
        denom = float(df @ df)
        if denom < 1e-14:
            skipped += 1
            continue
        ratio = float(df @ (ua - ub)) / denom
        used += 1
        if ratio <= 0:
            negative += 1
        if ratio < best:
            best = ratio
            best_pair = (ua, ub)
    if used == 0:
        raise NoInformativePairs(
            f"all {sample_pairs} sampled pairs had negligible gradient difference")
    if negative:
        log.warning("cocoercivity sampling: %d/%d ratios nonpositive; "
                    "monotonicity may fail in this region", negative, used)
    return CocoercivityEstimate(mu_hat=best, minimizing_pair=best_pair,
                                n_pairs_used=used, n_pairs_skipped=skipped,
                                negative_fraction=negative / used)


def check_step_sizes(gains: Gains, mu_hat: float) -> tuple[bool, float]:
    """Check gamma_i in (0, 2 mu); returns (ok, margin = 2 mu - max gamma)."""
    if mu_hat <= 0:
        raise ValueError("mu_hat must be positive")
    margin = 2.0 * mu_hat - gains.max_gamma
    return margin > 0.0, margin


def _best_response(ctrl: AreaController, u_star: np.ndarray, plant,
                   inner_tol: float, max_inner: int) -> tuple[np.ndarray, float]:
    """Minimize J_i over U_i with u_{-i} frozen, through the true plant."""
    u = u_star.copy()
    best_cost = np.inf
    best_u_i = u[ctrl.input_slice].copy()
    prev_cost = np.inf
    for _ in range(max_inner):
        y = plant.measure(u)
        s_i = ctrl.local_sensitivity(plant.sensitivity(u))
        cost = ctrl.local_cost(u, y)
        if cost < best_cost:
            best_cost = cost
            best_u_i = u[ctrl.input_slice].copy()
        f_i = local_gradient(ctrl, u, ctrl.local_view(y), s_i)
        u_i = u[ctrl.input_slice]
        u_i_next = project_box_polytope(u_i - ctrl.gamma * f_i,
                                        ctrl.a_ineq, ctrl.b_ineq)
        if np.linalg.norm(u_i_next - u_i) <= inner_tol:
            u[ctrl.input_slice] = u_i_next
            break
        if abs(prev_cost - cost) < 1e-10 and prev_cost < np.inf:
            break
        prev_cost = cost
        u[ctrl.input_slice] = u_i_next
    y = plant.measure(u)
    cost = ctrl.local_cost(u, y)
    if cost < best_cost:
        best_cost = cost
        best_u_i = u[ctrl.input_slice].copy()
    return best_u_i, best_cost


def certify_nash(controllers, state: GameState, plant,
                 inner_tol: float = 1e-8, max_inner: int = 500,
                 mu_hat: float = float("nan")) -> NashCertificate:
    """Certify a candidate equilibrium.

    The fixed-point residual is ``||u - proj_U(u - Gamma F(u))||``; the
    per-area best-response gap is the relative cost improvement an area can
    achieve unilaterally, found by projected gradient through the true
    plant.  Inner solves run on forked plants so the caller's warm state is
    untouched.

    Raises
    ------
    NonConvergence
        Propagated from the plant during inner best-response solves.
    """
    gains = Gains.from_controllers(controllers)
    probe = plant.fork()
    f_star = pseudo_gradient(controllers, state.u, probe)
    residual = float(np.linalg.norm(
        state.u - fb_operator(gains, state.u, f_star, make_projector(controllers))))

    gaps = np.zeros(len(controllers))
    for i, ctrl in enumerate(controllers):
        inner_plant = plant.fork()
        j_star = ctrl.local_cost(state.u, inner_plant.measure(state.u))
        _, j_best = _best_response(ctrl, state.u, inner_plant, inner_tol, max_inner)
        improvement = max(0.0, j_star - j_best)
        gaps[i] = improvement / max(abs(j_star), 1e-12)
    return NashCertificate(fixed_point_residual=residual,
                           best_response_gaps=gaps, mu_hat=mu_hat)
