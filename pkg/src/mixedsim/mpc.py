"""Receding-horizon longitudinal controller for one automated vehicle.

Builds a condensed QP per control step: states are eliminated by forward
substitution of the discrete kinematic model, decision variables are the
commanded accelerations plus nonnegative slack on velocity and safety rows.
Two operating modes: anticipative (constant-acceleration prediction of the
preceding vehicle with a probabilistic safe-position bound) and connected
(tracking the preceding vehicle's broadcast plan).  With no preceding
vehicle the controller degrades to speed tracking.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.linalg import cho_factor
from scipy.stats import norm

from .qp import QpProblem, QpSolution, QpStatus, solve

GRAVITY = 9.81


class ControlMode(Enum):
    ANTICIPATIVE = "anticipative"
    CONNECTED = "connected"
    CRUISE = "cruise"


@dataclass
class EgoState:
    s: float  # m, absolute position
    v: float  # m/s
    a: float  # m/s^2, realized acceleration


@dataclass
class PvObservation:
    s_r: float
    v_r: float
    a_r: float
    broadcast_plan: np.ndarray | None = None  # planned positions, 1 s stages
    plan_age: float = 0.0  # s since the plan was generated


@dataclass
class MpcConfig:
    N: int = 16                 # horizon stages
    dt: float = 1.0             # s, controller discretization
    q_a: float = 2050.0
    q_d: float = 1.0
    q_eps: float = 1e6
    q_eps_quad: float = 1.0     # small curvature on slack, keeps H SPD
    T_H: float = 1.4            # s
    d_r: float = 2.0            # m
    d_m: float = 2.0            # m
    v_min: float = 0.0
    v_max: float = 29.06        # m/s
    m1: float = 0.285
    b1: float = 2.00
    m2: float = -0.121
    b2: float = 4.83
    u_brake: float = 8.0        # m/s^2, maximum deceleration magnitude
    sigma_A: float = 0.3        # m/s^2, preceding-vehicle acceleration spread
    alpha_hi: float = 0.99
    alpha_lo: float = 0.50
    alpha_ramp_time: float = 10.0  # s to decay from alpha_hi to alpha_lo
    stale_plan_limit: int = 5   # missed broadcasts before anticipative fallback

    def accel_limit(self, v: float) -> float:
        """Powertrain acceleration ceiling at speed v."""
        return min(self.b1 + self.m1 * v, self.b2 + self.m2 * v)


def anticipative_config(**overrides) -> MpcConfig:
    return MpcConfig(**{"N": 16, "q_a": 2050.0, "T_H": 1.4, "d_r": 2.0,
                        **overrides})


def connected_config(**overrides) -> MpcConfig:
    return MpcConfig(**{"N": 17, "q_a": 4000.0, "T_H": 0.0, "d_r": 6.0,
                        **overrides})


@dataclass
class MpcPlan:
    u: np.ndarray               # commanded accelerations, N entries
    s: np.ndarray               # planned positions, N+1 entries
    v: np.ndarray
    a: np.ndarray
    slack_active: bool
    cost: float
    qp_status: QpStatus = QpStatus.OPTIMAL
    qp_iterations: int = 0
    solve_time: float = 0.0
    active_set: list[int] = field(default_factory=list)

    @property
    def first_command(self) -> float:
        return float(self.u[0])


def dynamics_matrices(dt: float) -> tuple[np.ndarray, np.ndarray]:
    A = np.array([[1.0, dt, 0.25 * dt * dt],
                  [0.0, 1.0, 0.5 * dt],
                  [0.0, 0.0, 0.0]])
    B = np.array([0.25 * dt * dt, 0.5 * dt, 1.0])
    return A, B


def alpha_schedule(N: int, dt: float, cfg: MpcConfig | None = None) -> np.ndarray:
    """Per-stage confidence: alpha_hi at t=0 decaying linearly to alpha_lo."""
    cfg = cfg or MpcConfig()
    t = np.arange(N + 1) * dt
    frac = np.clip(t / cfg.alpha_ramp_time, 0.0, 1.0)
    return cfg.alpha_hi - (cfg.alpha_hi - cfg.alpha_lo) * frac


def predict_pv(obs: PvObservation, config: MpcConfig) -> tuple[np.ndarray, np.ndarray]:
    """Constant-acceleration rollout of the preceding vehicle.

    Velocity saturates at [v_min, v_max]; the position update keeps the
    unsaturated half-step acceleration term.
    """
    N, dt = config.N, config.dt
    s = np.empty(N + 1)
    v = np.empty(N + 1)
    s[0], v[0] = obs.s_r, obs.v_r
    a0 = obs.a_r
    for i in range(N):
        v[i + 1] = min(max(v[i] + a0 * dt, config.v_min), config.v_max)
        s[i + 1] = s[i] + v[i] * dt + 0.5 * a0 * dt * dt
    return s, v


def position_sigma(i: int | np.ndarray, dt: float, sigma_A: float) -> float | np.ndarray:
    """Std of predicted PV position after i steps of a double integrator
    with uncertain constant acceleration."""
    i = np.asarray(i, float)
    return 0.5 * i * i * dt * dt * sigma_A


def safe_position_bound(obs: PvObservation, i: int, alpha: float,
                        sigma_A: float, dt: float,
                        config: MpcConfig | None = None) -> float:
    """Position the PV exceeds with probability alpha at stage i."""
    config = config or MpcConfig(dt=dt, sigma_A=sigma_A)
    s_mean, _ = predict_pv(obs, config)
    return float(s_mean[i] - position_sigma(i, dt, sigma_A) * norm.ppf(alpha))


# ---------------------------------------------------------------------------
# condensed problem template (constant per configuration)

@dataclass
class VariableLayout:
    n_u: int
    eps0: slice | None  # safety slack, stages 1..N
    eps1: slice | None  # v_min slack
    eps2: slice | None  # v_max slack
    n_total: int


class _Template:
    """Everything about the condensed QP that does not change between steps."""

    def __init__(self, cfg: MpcConfig, has_pv: bool):
        N, dt = cfg.N, cfg.dt
        A, B = dynamics_matrices(dt)

        # x(i) = F[i] @ x0 + G[i] @ u   (x = [s v a])
        F = np.empty((N + 1, 3, 3))
        G = np.zeros((N + 1, 3, N))
        F[0] = np.eye(3)
        for i in range(N):
            F[i + 1] = A @ F[i]
            G[i + 1] = A @ G[i]
            G[i + 1, :, i] += B
        self.F, self.G = F, G
        Ps, Pv = G[:, 0, :], G[:, 1, :]

        n_u = N
        if has_pv:
            layout = VariableLayout(n_u, slice(N, 2 * N),
                                    slice(2 * N, 3 * N), slice(3 * N, 4 * N),
                                    4 * N)
        else:
            layout = VariableLayout(n_u, None,
                                    slice(N, 2 * N), slice(2 * N, 3 * N),
                                    3 * N)
        self.layout = layout
        n = layout.n_total

        # headway output rows: s_hat(i) = (Ps+T_H Pv)[i] u + const
        Hs = Ps + cfg.T_H * Pv
        self.Hs = Hs
        Ma = np.zeros((N + 1, N))
        Ma[1:, :] = np.eye(N)
        H = np.zeros((n, n))
        H[:N, :N] = 2.0 * (cfg.q_d * Hs.T @ Hs + cfg.q_a * (Ma.T @ Ma + np.eye(N)))
        idx = np.arange(N, n)
        H[idx, idx] = 2.0 * cfg.q_eps_quad
        self.H = H

        # constraint rows: powertrain (hard), velocity bounds, safety
        rows = []
        for k, (m_k, _) in enumerate([(cfg.m1, cfg.b1), (cfg.m2, cfg.b2)]):
            block = np.zeros((N, n))
            block[:, :N] = -m_k * Pv[:N]
            block[np.arange(N), np.arange(N)] += 1.0
            rows.append(block)
        lo = np.zeros((N, n))
        lo[:, :N] = -Pv[1:]
        lo[np.arange(N), np.arange(*layout.eps1.indices(n))[:N]] = -1.0
        rows.append(lo)
        hi = np.zeros((N, n))
        hi[:, :N] = Pv[1:]
        hi[np.arange(N), np.arange(*layout.eps2.indices(n))[:N]] = -1.0
        rows.append(hi)
        if has_pv:
            sa = np.zeros((N, n))
            sa[:, :N] = Ps[1:]
            sa[np.arange(N), np.arange(*layout.eps0.indices(n))[:N]] = -1.0
            rows.append(sa)
        self.A_ineq = np.vstack(rows)
        self.n_power = 2 * N

        # commands are bounded below by the physical brake limit; slack
        # variables are nonnegative
        lb = np.full(n, -cfg.u_brake)
        lb[N:] = 0.0
        self.lb = lb
        self.lb_hard = np.full(N, -cfg.u_brake)

        # slack-free variant: same rows over the commands only, used as a
        # fast path whenever the hard constraints are satisfiable
        self.A_hard = self.A_ineq[:, :N].copy()
        self.H_hard = self.H[:N, :N].copy()
        self.layout_hard = VariableLayout(N, None, None, None, N)
        self.chol = cho_factor(self.H, lower=True)
        self.chol_hard = cho_factor(self.H_hard, lower=True)

        self.cfg = cfg
        self.has_pv = has_pv


_TEMPLATES: dict[tuple, _Template] = {}


def _template(cfg: MpcConfig, has_pv: bool) -> _Template:
    key = (cfg.N, cfg.dt, cfg.T_H, cfg.q_a, cfg.q_d, cfg.q_eps,
           cfg.q_eps_quad, cfg.m1, cfg.b1, cfg.m2, cfg.b2, cfg.u_brake,
           has_pv)
    tpl = _TEMPLATES.get(key)
    if tpl is None:
        tpl = _Template(cfg, has_pv)
        _TEMPLATES[key] = tpl
    return tpl


def _reference_positions(ego: EgoState, obs: PvObservation | None,
                         config: MpcConfig, mode: ControlMode,
                         v_desired: float | None) -> tuple[np.ndarray, np.ndarray | None]:
    """Returns (s_r trajectory, safe-position bounds or None)."""
    N, dt = config.N, config.dt
    if mode is ControlMode.CRUISE or obs is None:
        v_des = config.v_max if v_desired is None else v_desired
        s_r = ego.s + v_des * dt * np.arange(N + 1)
        return s_r, None
    if mode is ControlMode.CONNECTED and obs.broadcast_plan is not None:
        plan = np.asarray(obs.broadcast_plan, float)
        # resample the plan timeline at (plan_age + i*dt): a stale plan's
        # stage 0 lies in the past, and horizons may differ between modes

        t_need = obs.plan_age + N * dt
        n_have = (len(plan) - 1) * dt
        if t_need > n_have or len(plan) < 2:
            step_len = plan[-1] - plan[-2] if len(plan) >= 2 else obs.v_r * dt
            n_pad = int(np.ceil((t_need - n_have) / dt)) + 1
            plan = np.concatenate([plan, plan[-1] + step_len * np.arange(1, n_pad + 1)])
        t_plan = dt * np.arange(len(plan))
        s_r = np.interp(obs.plan_age + dt * np.arange(N + 1), t_plan, plan)
        # broadcast intentions are treated as certain
        s_safe = s_r.copy()
        return s_r, s_safe
    s_r, _ = predict_pv(obs, config)
    alphas = alpha_schedule(N, dt, config)
    s_safe = s_r - position_sigma(np.arange(N + 1), dt, config.sigma_A) \
        * norm.ppf(alphas)
    return s_r, s_safe


def build_problem(ego: EgoState, obs: PvObservation | None, config: MpcConfig,
                  mode: ControlMode, v_desired: float | None = None,
                  hard: bool = False,
                  ) -> tuple[QpProblem, VariableLayout, _Template]:
    """Assemble the per-step QP.

    With hard=True the slack variables are dropped and every row is
    enforced exactly; the solutions coincide whenever the hard problem is
    feasible with softened-row multipliers below q_eps, which makes the
    slack-free problem a cheap first attempt.
    """
    if mode is ControlMode.CRUISE or obs is None:
        # leaderless: pure speed tracking, no headway term
        config = replace(config, T_H=0.0)
    s_r, s_safe = _reference_positions(ego, obs, config, mode, v_desired)
    has_pv = s_safe is not None
    tpl = _template(config, has_pv)
    N = config.N
    x0 = np.array([ego.s, ego.v, ego.a])
    free = tpl.F @ x0                     # (N+1, 3) free response
    fs, fv = free[:, 0], free[:, 1]

    d_r = config.d_r if mode is not ControlMode.CRUISE and obs is not None else 0.0
    err0 = (fs + config.T_H * fv) - (s_r - d_r)
    g_u = 2.0 * config.q_d * (tpl.Hs.T @ err0)

    b_parts = [config.b1 + config.m1 * fv[:N],
               config.b2 + config.m2 * fv[:N],
               -config.v_min + fv[1:],
               config.v_max - fv[1:]]
    if has_pv:
        b_parts.append(s_safe[1:] - config.d_m - fs[1:])
    b = np.concatenate(b_parts)

    if hard:
        prob = QpProblem(H=tpl.H_hard, g=g_u, A_ineq=tpl.A_hard, b_ineq=b,
                         lb=tpl.lb_hard)
        return prob, tpl.layout_hard, tpl
    g = np.zeros(tpl.layout.n_total)
    g[:N] = g_u
    g[N:] = config.q_eps
    prob = QpProblem(H=tpl.H, g=g, A_ineq=tpl.A_ineq, b_ineq=b, lb=tpl.lb)
    return prob, tpl.layout, tpl


def rollout(ego: EgoState, u: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact forward recursion of the discrete model under commands u."""
    A, B = dynamics_matrices(dt)
    N = len(u)
    x = np.empty((N + 1, 3))
    x[0] = [ego.s, ego.v, ego.a]
    for i in range(N):
        x[i + 1] = A @ x[i] + B * u[i]
    return x[:, 0], x[:, 1], x[:, 2]


def step(ego: EgoState, obs: PvObservation | None, config: MpcConfig,
         mode: ControlMode, v_desired: float | None = None,
         warm_start: list[int] | None = None,
         slack_tol: float = 1e-6) -> MpcPlan:
    """Build and solve one control step; returns the plan whose first
    command is applied.

    The slack-free problem is attempted first; the full slacked problem
    is only assembled when the hard one is infeasible or a softened row's
    multiplier reaches the slack price (where the two would differ).
    """
    prob, layout, tpl = build_problem(ego, obs, config, mode, v_desired,
                                      hard=True)
    sol = solve(prob, warm_start=warm_start, chol=tpl.chol_hard)
    soft_rows = sol.lam[tpl.n_power:]
    if (sol.status is not QpStatus.OPTIMAL
            or (len(soft_rows) and soft_rows.max() >= config.q_eps)):
        prob, layout, tpl = build_problem(ego, obs, config, mode, v_desired,
                                          hard=False)
        sol = solve(prob, warm_start=warm_start, chol=tpl.chol)
        if sol.status is QpStatus.INFEASIBLE:
            # slack-augmented problems are feasible by construction
            raise RuntimeError(
                "MPC-built QP reported infeasible: controller bug")
    u = sol.x[:layout.n_u].copy()
    # hard powertrain and brake rows hold to solver tolerance; remove the
    # tolerance before the command is applied
    u[0] = min(max(u[0], -config.u_brake), config.accel_limit(ego.v))
    s, v, a = rollout(ego, u, config.dt)
    slack = sol.x[layout.n_u:]
    return MpcPlan(
        u=u, s=s, v=v, a=a,
        slack_active=bool(len(slack) and slack.max() > slack_tol),
        cost=float(sol.objective),
        qp_status=sol.status,
        qp_iterations=sol.iterations,
        solve_time=sol.solve_time,
        active_set=sol.active_set,
    )
