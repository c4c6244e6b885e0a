"""Dense convex quadratic programming for small control problems.

Solves

    min  1/2 x' H x + g' x
    s.t. A x <= b,  lb <= x <= ub

with H symmetric positive definite, using a dual active-set method
(Goldfarb-Idnani): start at the unconstrained minimum, which is dual
feasible, and add violated constraints one at a time while maintaining
optimality of the working set.  The method terminates finitely for
strictly convex problems and needs no feasibility phase.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class QpStatus(Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max_iterations"
    INFEASIBLE = "infeasible"


class QpValidationError(ValueError):
    pass


@dataclass
class QpProblem:
    """min 1/2 x'Hx + g'x  s.t.  A_ineq x <= b_ineq, lb <= x <= ub."""

    H: np.ndarray
    g: np.ndarray
    A_ineq: np.ndarray | None = None
    b_ineq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def validate(self, check_spd: bool = True) -> None:
        H, g = np.asarray(self.H, float), np.asarray(self.g, float)
        n = H.shape[0]
        if H.shape != (n, n) or g.shape != (n,):
            raise QpValidationError("inconsistent H/g dimensions")
        if not np.allclose(H, H.T, rtol=1e-9, atol=1e-12):
            raise QpValidationError("H is not symmetric")
        if check_spd:
            if np.linalg.eigvalsh(H)[0] <= 0.0:
                raise QpValidationError("H is not positive definite")
        if self.A_ineq is not None:
            A = np.asarray(self.A_ineq, float)
            if A.ndim != 2 or A.shape[1] != n:
                raise QpValidationError("A_ineq has wrong number of columns")
            if np.asarray(self.b_ineq, float).shape != (A.shape[0],):
                raise QpValidationError("b_ineq length mismatch")

    def stacked_inequalities(self) -> tuple[np.ndarray, np.ndarray]:
        """All constraints as rows of A x <= b, bounds folded in."""
        n = self.n
        blocks_A, blocks_b = [], []
        if self.A_ineq is not None and len(self.A_ineq) > 0:
            blocks_A.append(np.asarray(self.A_ineq, float))
            blocks_b.append(np.asarray(self.b_ineq, float))
        if self.ub is not None:
            mask = np.isfinite(self.ub)
            if mask.any():
                blocks_A.append(np.eye(n)[mask])
                blocks_b.append(np.asarray(self.ub, float)[mask])
        if self.lb is not None:
            mask = np.isfinite(self.lb)
            if mask.any():
                blocks_A.append(-np.eye(n)[mask])
                blocks_b.append(-np.asarray(self.lb, float)[mask])
        if not blocks_A:
            return np.zeros((0, n)), np.zeros(0)
        return np.vstack(blocks_A), np.concatenate(blocks_b)

    def dump(self) -> str:
        """Plain-text matrix dump for offline inspection."""
        A, b = self.stacked_inequalities()
        parts = ["# H", np.array2string(np.asarray(self.H), precision=8),
                 "# g", np.array2string(np.asarray(self.g), precision=8),
                 "# A (A x <= b)", np.array2string(A, precision=8),
                 "# b", np.array2string(b, precision=8)]
        return "\n".join(parts) + "\n"


@dataclass
class QpSolution:
    x: np.ndarray
    lam: np.ndarray  # multipliers for the stacked inequality rows
    status: QpStatus
    kkt_residual: float
    iterations: int
    solve_time: float
    active_set: list[int] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return 0.5 * self.x @ self._H @ self.x + self._g @ self.x

    # filled in by solve(); kept off the constructor signature
    _H: np.ndarray = field(default=None, repr=False)
    _g: np.ndarray = field(default=None, repr=False)


def kkt_residual(problem: QpProblem, x: np.ndarray, lam: np.ndarray,
                 stacked=None) -> float:
    """Max over stationarity, primal violation, dual negativity, complementarity.

    ``lam`` is indexed against the stacked inequality rows
    (A_ineq rows, then finite upper bounds, then finite lower bounds).
    """
    A, b = problem.stacked_inequalities() if stacked is None else stacked
    x = np.asarray(x, float)
    lam = np.asarray(lam, float)
    stat = problem.H @ x + problem.g
    if len(A):
        stat = stat + A.T @ lam
        slack = A @ x - b
        primal = max(0.0, slack.max())
        comp = np.abs(lam * slack).max()
        dual = max(0.0, -lam.min()) if len(lam) else 0.0
    else:
        primal = comp = dual = 0.0
    return max(np.abs(stat).max() if len(stat) else 0.0, primal, dual, comp)


def _solve_sym(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve M y = rhs, falling back to the minimum-norm solution when
    the working set has become linearly dependent and M is singular."""
    try:
        return np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(M, rhs, rcond=None)[0]


def solve(problem: QpProblem, warm_start: QpSolution | list[int] | None = None,
          tol: float = 1e-6, max_iter: int = 2000,
          chol=None) -> QpSolution:
    """Solve a strictly convex inequality-constrained QP.

    Deterministic: identical inputs give identical outputs.  ``warm_start``
    may carry the active set of a previous solve on a nearby problem; it is
    used to order constraint activation and typically cuts iterations to a
    handful in receding-horizon use.  ``chol`` may carry a precomputed
    cho_factor of H for repeated solves sharing the same Hessian.
    """
    t0 = time.perf_counter()
    H = np.asarray(problem.H, float)
    g = np.asarray(problem.g, float)
    A, b = problem.stacked_inequalities()
    n, m = H.shape[0], len(b)

    if chol is None:
        chol = cho_factor(H, lower=True)
    x = cho_solve(chol, -g, check_finite=False)
    lam = np.zeros(m)

    if m == 0:
        return _finish(problem, x, lam, QpStatus.OPTIMAL, 0, t0, [],
                       (A, b))

    # Hinv_AT columns computed lazily per activated constraint
    hint: list[int] = []
    if isinstance(warm_start, QpSolution):
        hint = list(warm_start.active_set)
    elif warm_start is not None:
        hint = list(warm_start)
    hint = [k for k in hint if 0 <= k < m]

    W: list[int] = []          # working set (row indices)
    u = np.zeros(0)            # multipliers of the working set, >= 0
    N = np.zeros((0, n))       # A rows of the working set
    HiNT = np.zeros((n, 0))    # H^{-1} N^T

    feas_tol = tol

    # hot start: jump onto the hinted active set directly, shedding rows
    # with negative multipliers, so near-identical consecutive problems
    # finish in one or two outer iterations
    if hint:
        W_try = list(dict.fromkeys(hint))[:n]
        try:
            x_t, u_t = _eqp_solve(chol, H, g, A, b, W_try, refine=0)
            for _ in range(len(W_try)):
                if len(u_t) == 0 or u_t.min() >= -1e-12:
                    break
                W_try.pop(int(np.argmin(u_t)))
                x_t, u_t = _eqp_solve(chol, H, g, A, b, W_try, refine=0)
            if len(u_t) == 0 or u_t.min() >= -1e-12:
                W = W_try
                x = x_t
                u = np.maximum(u_t, 0.0)
                N = A[W]
                HiNT = cho_solve(chol, N.T, check_finite=False) if W else np.zeros((n, 0))
        except np.linalg.LinAlgError:
            pass

    for it in range(1, max_iter + 1):
        slack = A @ x - b
        slack[W] = 0.0
        # prefer hinted rows to reproduce previous active sets quickly
        p = -1
        worst = feas_tol
        for k in hint:
            if slack[k] > feas_tol:
                p = k
                break
        if p < 0:
            j = int(np.argmax(slack))
            if slack[j] > worst:
                p = j
        if p < 0:
            # re-solve the final equality-constrained system in one shot to
            # shed roundoff accumulated over incremental steps
            x_ref, u_ref = _eqp_solve(chol, H, g, A, b, W)
            viol = (A @ x_ref - b).max() if m else 0.0
            if viol <= feas_tol and (len(u_ref) == 0 or u_ref.min() >= -feas_tol):
                x, u = x_ref, np.maximum(u_ref, 0.0)
                lam[:] = 0.0
                lam[W] = u
                return _finish(problem, x, lam, QpStatus.OPTIMAL, it, t0, list(W),
                               (A, b))
            # refinement exposed residual violation; keep iterating from it
            x = x_ref
            u = np.maximum(u_ref, 0.0)
            slack = A @ x - b
            slack[W] = 0.0
            p = int(np.argmax(slack))
            if slack[p] <= feas_tol:
                lam[:] = 0.0
                lam[W] = u
                return _finish(problem, x, lam, QpStatus.OPTIMAL, it, t0, list(W),
                               (A, b))

        npvec = A[p]
        s_p = b[p] - A[p] @ x  # negative: violated
        u_p = 0.0

        # inner loop: take full/partial steps toward constraint p
        while True:
            Hin = cho_solve(chol, npvec, check_finite=False)
            if len(W):
                M = N @ HiNT                      # N H^{-1} N^T
                r = _solve_sym(M, N @ Hin)        # dual step direction
                z = Hin - HiNT @ r                # primal step direction
            else:
                r = np.zeros(0)
                z = Hin
            ztn = npvec @ z

            # dual blocking step
            t1 = np.inf
            l_idx = -1
            for k in range(len(W)):
                if r[k] > 1e-12:
                    cand = u[k] / r[k]
                    if cand < t1:
                        t1, l_idx = cand, k
            # primal step to feasibility of p
            t2 = (-s_p / ztn) if ztn > 1e-12 else np.inf

            t_step = min(t1, t2)
            if not np.isfinite(t_step):
                lam[:] = 0.0
                lam[W] = u
                return _finish(problem, x, lam, QpStatus.INFEASIBLE, it, t0,
                               list(W), (A, b))

            x = x - t_step * z
            u = u - t_step * r
            u_p += t_step
            s_p = b[p] - A[p] @ x

            if t_step == t2:
                # p becomes active
                W.append(p)
                u = np.append(u, u_p)
                N = np.vstack([N, npvec])
                HiNT = np.hstack([HiNT, cho_solve(chol, npvec, check_finite=False)[:, None]])
                break
            # partial step: drop blocking constraint l and continue
            W.pop(l_idx)
            u = np.delete(u, l_idx)
            N = np.delete(N, l_idx, axis=0)
            HiNT = np.delete(HiNT, l_idx, axis=1)

    lam[:] = 0.0
    lam[W] = u
    return _finish(problem, x, lam, QpStatus.MAX_ITERATIONS, max_iter, t0,
                   list(W), (A, b))


def _eqp_solve(chol, H, g, A, b, W, refine: int = 2):
    """Equality-constrained solve on the working set via the KKT system,
    with iterative refinement to keep active-row residuals near machine
    precision (large slack-penalty multipliers amplify them otherwise)."""
    if not W:
        return cho_solve(chol, -g, check_finite=False), np.zeros(0)
    N = A[W]
    bW = b[W]
    HiNT = cho_solve(chol, N.T, check_finite=False)
    M = N @ HiNT
    x_free = cho_solve(chol, -g, check_finite=False)
    u = _solve_sym(M, N @ x_free - bW)
    x = x_free - HiNT @ u
    for _ in range(refine):
        r1 = -(H @ x + g + N.T @ u)
        r2 = bW - N @ x
        h1 = cho_solve(chol, r1, check_finite=False)
        du = _solve_sym(M, N @ h1 - r2)
        x = x + h1 - HiNT @ du
        u = u + du
    return x, u


def _finish(problem, x, lam, status, iters, t0, active, stacked=None):
    sol = QpSolution(
        x=np.asarray(x, float),
        lam=np.asarray(lam, float),
        status=status,
        kkt_residual=kkt_residual(problem, x, lam, stacked=stacked),
        iterations=iters,
        solve_time=time.perf_counter() - t0,
        active_set=active,
    )
    sol._H = np.asarray(problem.H, float)
    sol._g = np.asarray(problem.g, float)
    return sol
