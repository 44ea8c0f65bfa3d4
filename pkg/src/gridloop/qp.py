"""Dense convex QP solver and polyhedral projection.

Solves  min 0.5 x'Hx + f'x  s.t.  A x <= b  with a primal active-set method.
Problem sizes here are tiny (tens of variables), so exact active sets and
a certified KKT residual are worth more than raw speed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Infeasible, IterationLimit

_REG = 1e-10       # Tikhonov regularization added when H is singular
_FEAS_TOL = 1e-9   # constraint satisfaction slack in the working-set logic


@dataclass
class QpProblem:
    """min 0.5 x'Hx + f'x  s.t.  A_ineq x <= b_ineq."""

    H: np.ndarray
    f: np.ndarray
    A_ineq: np.ndarray
    b_ineq: np.ndarray

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.f = np.asarray(self.f, dtype=float)
        n = self.f.size
        if self.A_ineq is None or np.size(self.A_ineq) == 0:
            self.A_ineq = np.zeros((0, n))
            self.b_ineq = np.zeros(0)
        else:
            self.A_ineq = np.atleast_2d(np.asarray(self.A_ineq, dtype=float))
            self.b_ineq = np.asarray(self.b_ineq, dtype=float)
        if not np.allclose(self.H, self.H.T, atol=1e-9):
            raise ValueError("H must be symmetric")
        if self.A_ineq.shape != (self.b_ineq.size, n):
            raise ValueError("inconsistent constraint dimensions")


@dataclass
class QpSolution:
    x_opt: np.ndarray
    active_set: list[int]
    kkt_residual: float
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _kkt_residual(p: QpProblem, x: np.ndarray, lam: np.ndarray) -> float:
    """Max over stationarity, primal/dual feasibility and complementarity."""
    grad = p.H @ x + p.f
    if p.A_ineq.shape[0]:
        stat = np.max(np.abs(grad + p.A_ineq.T @ lam))
        slack = p.A_ineq @ x - p.b_ineq
        primal = max(0.0, float(np.max(slack)))
        dual = max(0.0, float(np.max(-lam)))
        comp = float(np.max(np.abs(lam * slack)))
        return max(stat, primal, dual, comp)
    return float(np.max(np.abs(grad))) if grad.size else 0.0


def _solve_eqp(h: np.ndarray, g: np.ndarray, a_w: np.ndarray):
    """Equality-constrained step: min 0.5 p'Hp + g'p  s.t.  A_w p = 0."""
    n = h.shape[0]
    m = a_w.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = h
    if m:
        kkt[:n, n:] = a_w.T
        kkt[n:, :n] = a_w
    rhs = np.concatenate([-g, np.zeros(m)])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def _active_set(h, f, a, b, x0, max_iter):
    """Primal active-set loop from a feasible x0; returns (x, W, lam_full)."""
    n = x0.size
    m = a.shape[0]
    x = x0.astype(float).copy()
    work = sorted(i for i in range(m) if a[i] @ x >= b[i] - _FEAS_TOL)

    # Drop linearly dependent rows from the initial working set.
    keep: list[int] = []
    for i in work:
        rows = a[keep + [i]]
        if np.linalg.matrix_rank(rows, tol=1e-10) == len(keep) + 1:
            keep.append(i)
    work = keep

    for _ in range(max_iter):
        g = h @ x + f
        p, lam_w = _solve_eqp(h, g, a[work] if work else np.zeros((0, n)))

        if (np.max(np.abs(p)) if p.size else 0.0) <= 1e-12:
            if not work or np.min(lam_w) >= -1e-10:
                lam = np.zeros(m)
                for i, wi in enumerate(work):
                    lam[wi] = max(lam_w[i], 0.0)
                return x, work, lam
            # Bland-style: drop the lowest-index constraint with negative
            # multiplier to prevent cycling.
            drop = min(wi for wi, lv in zip(work, lam_w) if lv < -1e-10)
            work.remove(drop)
            continue

        # Longest feasible step along p, entering the lowest-index blocker.
        alpha, blocker = 1.0, None
        for i in range(m):
            if i in work:
                continue
            ap = a[i] @ p
            if ap > 1e-12:
                step = (b[i] - a[i] @ x) / ap
                # Strict improvement keeps the lowest-index blocker on ties.
                if step < alpha - 1e-14:
                    alpha, blocker = max(step, 0.0), i
        x = x + alpha * p
        if blocker is not None:
            rows = a[work + [blocker]]
            if np.linalg.matrix_rank(rows, tol=1e-10) == len(work) + 1:
                work = sorted(work + [blocker])
            # A dependent blocker adds no information; the step already
            # landed on its face.
    raise IterationLimit(f"active-set loop exceeded {max_iter} iterations")


def _feasible_point(a: np.ndarray, b: np.ndarray, tol: float) -> np.ndarray:
    """Phase-1: min 0.5 eps ||x||^2 + 0.5 t^2 + t  s.t.  Ax - t <= b, t >= 0.

    The lifted problem is always feasible from (0, max violation), so the
    same active-set core doubles as the feasibility detector.
    """
    m, n = a.shape
    h = np.zeros((n + 1, n + 1))
    h[:n, :n] = 1e-8 * np.eye(n)
    h[n, n] = 1.0
    f = np.zeros(n + 1)
    f[n] = 1.0
    a_lift = np.zeros((m + 1, n + 1))
    a_lift[:m, :n] = a
    a_lift[:m, n] = -1.0
    a_lift[m, n] = -1.0
    b_lift = np.concatenate([b, [0.0]])
    t0 = max(0.0, float(np.max(-b))) if m else 0.0
    x0 = np.concatenate([np.zeros(n), [t0 * (1 + 1e-9) + 1e-12]])
    x, _, _ = _active_set(h, f, a_lift, b_lift, x0, max_iter=50 * (m + n + 2))
    if x[n] > max(tol, 1e-7):
        raise Infeasible(f"no point satisfies the constraints (residual {x[n]:.3e})")
    return x[:n]


def solve_qp(p: QpProblem, tol: float = 1e-9,
             max_iter: int | None = None) -> QpSolution:
    """Solve a convex inequality-constrained QP with an exact active set.

    Parameters
    ----------
    p : QpProblem
    tol : float
        KKT certification tolerance.
    max_iter : int, optional
        Active-set iteration budget; defaults to a generous multiple of the
        problem size.

    Raises
    ------
    Infeasible
        No point satisfies ``A_ineq x <= b_ineq`` within tolerance.
    IterationLimit
    """
    n = p.f.size
    m = p.A_ineq.shape[0]
    budget = max_iter if max_iter is not None else 50 * (n + m + 2)

    h = p.H
    eigmin = np.min(np.linalg.eigvalsh(h)) if n else 0.0
    if eigmin < -1e-8:
        raise ValueError("H is not positive semidefinite")
    if eigmin < _REG:
        h = h + _REG * np.eye(n)

    if m == 0:
        x = np.linalg.solve(h, -p.f)
        return QpSolution(x_opt=x, active_set=[],
                          kkt_residual=_kkt_residual(p, x, np.zeros(0)))

    x0 = np.zeros(n)
    if np.max(p.A_ineq @ x0 - p.b_ineq) > _FEAS_TOL:
        x0 = _feasible_point(p.A_ineq, p.b_ineq, tol)

    x, work, lam = _active_set(h, p.f, p.A_ineq, p.b_ineq, x0, budget)
    return QpSolution(x_opt=x, active_set=sorted(work),
                      kkt_residual=_kkt_residual(p, x, lam),
                      multipliers=lam)


def project_box_polytope(x: np.ndarray, a: np.ndarray, b: np.ndarray,
                         tol: float = 1e-10) -> np.ndarray:
    """Euclidean projection of ``x`` onto ``{z | a z <= b}``.

    Idempotent and firmly nonexpansive; raises :class:`Infeasible` when the
    polytope is empty.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return x.copy()
    a = np.atleast_2d(np.asarray(a, dtype=float)) if np.size(a) else np.zeros((0, x.size))
    b = np.asarray(b, dtype=float)
    if a.shape[0] == 0 or np.max(a @ x - b) <= 0.0:
        return x.copy()
    sol = solve_qp(QpProblem(H=np.eye(x.size), f=-x, A_ineq=a, b_ineq=b), tol=tol)
    return sol.x_opt
