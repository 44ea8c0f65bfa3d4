"""Single-area online feedback optimization controllers.

Three update laws over the measured plant, sharing the operating-cost and
penalty models:

* a penalty-based projected gradient step (soft output constraints),
* a projected steepest-descent step whose direction comes from a small QP
  that enforces input and linearized output constraints (the default), and
* a primal-dual step that dualizes the output constraints.

All controllers consume the current input ``u``, the latest measurement
``y`` and the plant sensitivity ``S`` at the operating point; none of them
evaluates the plant model itself.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import Infeasible
from .qp import QpProblem, QpSolution, project_box_polytope, solve_qp

RELAX_WEIGHT = 1e6  # penalty on the slack used when the step QP is infeasible


class ControllerMode(enum.Enum):
    PENALTY_GRADIENT = "penalty_gradient"
    PROJECTED_DESCENT = "projected_descent"
    PRIMAL_DUAL = "primal_dual"


@dataclass
class CostModel:
    """Operating cost: curtailment, reactive usage, and a loss surrogate.

    ``curtail_weights[k]`` and ``curtail_targets[k]`` (available power,
    p.u.) refer to input pair ``k``; the cost of pair ``k`` is
    ``curtail_weights[k] * (target_k - p_k)^2 + q_weights[k] * q_k^2``.
    ``loss_weight`` multiplies the slack active-power import, approximated
    by the (affine) power balance: its only effect on gradients is a
    constant ``-loss_weight`` drive on every active-power component.
    """

    curtail_weights: np.ndarray  # currency / p.u.^2, one per controllable unit
    curtail_targets: np.ndarray  # p.u., one per controllable unit
    q_weights: np.ndarray        # currency / p.u.^2
    loss_weight: float = 0.0

    def __post_init__(self):
        self.curtail_weights = np.asarray(self.curtail_weights, dtype=float)
        self.curtail_targets = np.asarray(self.curtail_targets, dtype=float)
        self.q_weights = np.asarray(self.q_weights, dtype=float)
        if np.any(self.curtail_weights < 0) or np.any(self.q_weights < 0) \
                or self.loss_weight < 0:
            raise ValueError("cost weights must be nonnegative")

    @property
    def dim_u(self) -> int:
        return 2 * self.curtail_weights.size

    def restrict(self, pairs: np.ndarray) -> "CostModel":
        """Cost model over a subset of input pairs (an area's units)."""
        return CostModel(self.curtail_weights[pairs], self.curtail_targets[pairs],
                         self.q_weights[pairs], self.loss_weight)


@dataclass
class PenaltyModel:
    """Squared-hinge penalty rho * sum_j max(0, (C y - d)_j)^2."""

    rho: float
    C: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.d = np.asarray(self.d, dtype=float)

    def value(self, y: np.ndarray) -> float:
        viol = np.maximum(0.0, self.C @ y - self.d)
        return self.rho * float(viol @ viol)

    def gradient(self, y: np.ndarray) -> np.ndarray:
        viol = np.maximum(0.0, self.C @ y - self.d)
        return 2.0 * self.rho * (self.C.T @ viol)


@dataclass
class DualState:
    """Multipliers of the dualized output constraints; entrywise >= 0."""

    lam: np.ndarray

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        if np.any(self.lam < 0):
            raise ValueError("dual variables must be nonnegative")


@dataclass
class ControllerConfig:
    """Gains, mode, cost and constraint data for one controller."""

    alpha: float
    mode: ControllerMode
    cost: CostModel
    A: np.ndarray                     # input constraints A u <= b
    b: np.ndarray
    C: np.ndarray                     # output constraints C y <= d
    d: np.ndarray
    beta: float = 0.1                 # dual gain (primal-dual mode)
    penalty: PenaltyModel | None = None

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("gains must be positive")
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float)
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.d = np.asarray(self.d, dtype=float)
        if self.mode is ControllerMode.PENALTY_GRADIENT and self.penalty is None:
            self.penalty = PenaltyModel(rho=1e3, C=self.C, d=self.d)


def phi_value(cost: CostModel, u: np.ndarray) -> float:
    """Operating cost phi(u): curtailment + reactive + loss surrogate."""
    p = u[0::2]
    q = u[1::2]
    dev = cost.curtail_targets - p
    val = float(cost.curtail_weights @ (dev * dev) + cost.q_weights @ (q * q))
    if cost.loss_weight:
        val -= cost.loss_weight * float(np.sum(p))
    return val


def curtailment_cost(cost: CostModel, u: np.ndarray) -> float:
    """Purely monetary curtailment part of the cost."""
    dev = cost.curtail_targets - u[0::2]
    return float(cost.curtail_weights @ (dev * dev))


def curtailed_power(cost: CostModel, u: np.ndarray, base_mva: float) -> float:
    """Total curtailed active power in MW."""
    return float(np.sum(cost.curtail_targets - u[0::2])) * base_mva


def cost_value(cost: CostModel, pen: PenaltyModel | None,
               u: np.ndarray, y: np.ndarray) -> float:
    """J(u, y) = phi(u) + p(y)."""
    val = phi_value(cost, u)
    if pen is not None:
        val += pen.value(y)
    return val


def cost_gradients(cost: CostModel, pen: PenaltyModel | None,
                   u: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of J = phi + p with respect to u and y.

    Returns
    -------
    (grad_u, grad_y)
        ``grad_y`` carries ``2 rho C' max(0, Cy - d)`` when a penalty model
        is present, and zeros otherwise.
    """
    grad_u = np.zeros_like(u)
    p = u[0::2]
    q = u[1::2]
    grad_u[0::2] = 2.0 * cost.curtail_weights * (p - cost.curtail_targets) \
        - cost.loss_weight
    grad_u[1::2] = 2.0 * cost.q_weights * q
    grad_y = pen.gradient(y) if pen is not None else np.zeros_like(y)
    return grad_u, grad_y


def penalty_gradient_step(cfg: ControllerConfig, u: np.ndarray, y: np.ndarray,
                          s: np.ndarray) -> np.ndarray:
    """Projected gradient step on the penalized cost.

    u+ = proj_U[u - alpha (grad_u J + S' grad_y J)].
    """
    grad_u, grad_y = cost_gradients(cfg.cost, cfg.penalty, u, y)
    return project_box_polytope(u - cfg.alpha * (grad_u + s.T @ grad_y),
                                cfg.A, cfg.b)


@dataclass
class DescentStep:
    """Result of one projected steepest-descent update."""

    u_next: np.ndarray
    qp: QpSolution
    relaxed: bool = False


def projected_descent_step(cfg: ControllerConfig, u: np.ndarray, y: np.ndarray,
                           s: np.ndarray) -> DescentStep:
    """Projected steepest descent: u+ = u + alpha * sigma.

    The direction sigma minimizes ``||du + grad_u phi + S' grad_y phi||``
    subject to ``A (u + du) <= b`` and ``C (y + S du) <= d``.  When no
    direction can restore output feasibility in the linearization, the
    output rows are relaxed with a single slack penalized at
    ``RELAX_WEIGHT`` and the step is flagged as relaxed.
    """
    grad_u, grad_y = cost_gradients(cfg.cost, None, u, y)
    f = grad_u + s.T @ grad_y
    n = u.size
    cs = cfg.C @ s
    a_rows = np.vstack([cfg.A, cs])
    b_rows = np.concatenate([cfg.b - cfg.A @ u, cfg.d - cfg.C @ y])
    try:
        sol = solve_qp(QpProblem(H=np.eye(n), f=f, A_ineq=a_rows, b_ineq=b_rows))
        return DescentStep(u_next=u + cfg.alpha * sol.x_opt, qp=sol)
    except Infeasible:
        pass

    # Elastic relaxation: one nonnegative slack loosens every output row.
    m_in = cfg.A.shape[0]
    m_out = cs.shape[0]
    h = np.eye(n + 1)
    h[n, n] = 2.0 * RELAX_WEIGHT
    f_lift = np.concatenate([f, [0.0]])
    a_lift = np.zeros((m_in + m_out + 1, n + 1))
    a_lift[:m_in, :n] = cfg.A
    a_lift[m_in:m_in + m_out, :n] = cs
    a_lift[m_in:m_in + m_out, n] = -1.0
    a_lift[m_in + m_out, n] = -1.0
    b_lift = np.concatenate([cfg.b - cfg.A @ u, cfg.d - cfg.C @ y, [0.0]])
    sol = solve_qp(QpProblem(H=h, f=f_lift, A_ineq=a_lift, b_ineq=b_lift))
    trimmed = QpSolution(x_opt=sol.x_opt[:n], active_set=sol.active_set,
                         kkt_residual=sol.kkt_residual)
    return DescentStep(u_next=u + cfg.alpha * trimmed.x_opt, qp=trimmed,
                       relaxed=True)


def primal_dual_step(cfg: ControllerConfig, u: np.ndarray, y: np.ndarray,
                     s: np.ndarray, dual: DualState) -> tuple[np.ndarray, DualState]:
    """One saddle-point iteration on the dualized output constraints.

    u+  = proj_U[u - alpha (grad_u phi + S'(grad_y phi + C' lambda))]
    lam+ = max(0, lam + beta (C y - d))    entrywise
    """
    grad_u, grad_y = cost_gradients(cfg.cost, None, u, y)
    direction = grad_u + s.T @ (grad_y + cfg.C.T @ dual.lam)
    u_next = project_box_polytope(u - cfg.alpha * direction, cfg.A, cfg.b)
    lam_next = np.maximum(0.0, dual.lam + cfg.beta * (cfg.C @ y - cfg.d))
    return u_next, DualState(lam=lam_next)
