"""Receding-horizon platoon controllers: nominal MPC and chance-constrained GP-MPC.

Both controllers solve a dense QP over the stacked AV accelerations
``u[n * N + i]`` (AV ``n``, horizon step ``i``). AV velocities and positions
are affine in ``u``; so is the HV velocity, because the ARX recursion is
linear in the last AV's predicted velocities. In GP mode the discrepancy
mean and variance are evaluated once per step along the previous solution
and held fixed, which keeps the HV position mean affine and turns the
chance constraint into a per-step constant tightening.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SolverFailure
from .hv_model import ARX_ORDER, HvModel, VelocityHistory
from .linalg import normal_inv_cdf
from .platoon import PlatoonState, accumulate_variance
from .qp import kkt_residual, solve_dual_active_set

MODES = ("nominal", "gp")


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 6
    q_ref: float = 5.0  # AV 1 reference tracking
    q_follow: float = 5.0  # velocity difference to the preceding AV
    r_accel: float = 20.0
    dt: float = 0.25
    safe_gap: float = 20.0  # m
    extra_gap: float = 0.0  # m, added on top of the tightened HV bound
    p_safe: float = 0.95
    v_min: float = -35.0
    v_max: float = 35.0
    a_min: float = -5.0
    a_max: float = 5.0
    mode: str = "gp"
    slack_penalty: float = 1e6  # per metre of gap violation
    slack_quadratic: float = 1.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least one step")
        if min(self.q_ref, self.q_follow, self.r_accel) <= 0:
            raise ValueError("weights must be positive")
        if not 0.5 < self.p_safe < 1.0:
            raise DomainError("satisfaction probability must lie in (0.5, 1)")
        if self.safe_gap <= 0 or self.dt <= 0:
            raise ValueError("safe gap and sample time must be positive")
        if self.a_min >= self.a_max or self.v_min >= self.v_max:
            raise ValueError("lower bounds must be below upper bounds")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


def tighten_distance(position_var: float, cfg: MpcConfig) -> float:
    """Minimum HV gap so that the Gaussian position stays clear with ``cfg.p_safe``."""
    if position_var < 0:
        raise DomainError(f"variance must be non-negative, got {position_var}")
    return cfg.safe_gap + cfg.extra_gap + normal_inv_cdf(cfg.p_safe) * float(np.sqrt(position_var))


@dataclass(frozen=True)
class GpTrajectoryCache:
    """Discrepancy mean/variance per horizon step, held fixed during a solve."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        var = np.asarray(self.variance, dtype=float).reshape(-1)
        if mean.shape != var.shape:
            raise ValueError("mean and variance lengths differ")
        if np.any(var < 0):
            raise DomainError("discrepancy variance must be non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @classmethod
    def zeros(cls, n: int) -> "GpTrajectoryCache":
        return cls(np.zeros(n), np.zeros(n))


@dataclass
class MpcSolution:
    """Solved horizon. Index ``i`` of the trajectories is time ``k + i``."""

    accels: np.ndarray  # (n_av, N)
    av_v: np.ndarray  # (n_av, N + 1)
    av_p: np.ndarray  # (n_av, N + 1)
    hv_v: np.ndarray  # (N,) nominal HV velocity driven during step i
    hv_mean: np.ndarray  # (N + 1,)
    hv_var: np.ndarray  # (N + 1,)
    bounds: np.ndarray  # (N,) required HV gap at steps 1..N
    cache: GpTrajectoryCache | None
    objective: float
    kkt: float
    slack: float = 0.0
    softened: bool = False

    @property
    def lead_v(self) -> np.ndarray:
        """Velocity of the last AV, the ARX input."""
        return self.av_v[-1]


def gp_trajectory_cache(model: HvModel, history: VelocityHistory, horizon: int,
                        prev: MpcSolution | None = None) -> GpTrajectoryCache:
    """Evaluate the discrepancy along the previous solution.

    Step 0 uses the measured ``(v_hv[k-1], v_lead[k-1])``. Step ``i >= 1``
    needs the pair at time ``k + i - 1``, which is index ``i`` of the
    solution computed at ``k - 1``. Without a previous solution the current
    pair is repeated.
    """
    x = np.tile(history.gp_input(), (horizon, 1))
    if prev is not None:
        n_prev = prev.hv_v.size
        for i in range(1, horizon):
            j = min(i, n_prev - 1)
            x[i] = (prev.hv_v[j], prev.lead_v[j])
    pred = model.discrepancy(x)
    return GpTrajectoryCache(np.asarray(pred.mean), np.maximum(np.asarray(pred.variance), 0.0))


@dataclass
class Affine:
    """Stack of affine maps ``const + mat @ u``."""

    const: np.ndarray
    mat: np.ndarray

    def __call__(self, u):
        return self.const + self.mat @ u


@dataclass
class QpProblem:
    hess: np.ndarray
    lin: np.ndarray
    const: float
    g: np.ndarray  # rows of g @ u >= h
    h: np.ndarray
    gap_rows: np.ndarray  # rows eligible for slack
    av_v: list[Affine]
    av_p: list[Affine]
    hv_v: Affine
    hv_mean: Affine
    hv_var: np.ndarray
    bounds: np.ndarray
    cache: GpTrajectoryCache | None = None

    @property
    def n_var(self) -> int:
        return self.hess.shape[0]


def _av_maps(state: PlatoonState, cfg: MpcConfig) -> tuple[list[Affine], list[Affine]]:
    n_h, dt = cfg.horizon, cfg.dt
    nv = state.n_av * n_h
    steps = np.arange(n_h + 1)
    # strictly lower triangular sums of past accelerations
    lower = (steps[:, None] > np.arange(n_h)[None, :]).astype(float)
    weights = np.maximum(steps[:, None] - 1 - np.arange(n_h)[None, :], 0) * lower
    vel, pos = [], []
    for n in range(state.n_av):
        mv = np.zeros((n_h + 1, nv))
        mp = np.zeros((n_h + 1, nv))
        mv[:, n * n_h:(n + 1) * n_h] = dt * lower
        mp[:, n * n_h:(n + 1) * n_h] = dt * dt * weights
        vel.append(Affine(np.full(n_h + 1, state.av_v[n]), mv))
        pos.append(Affine(state.av_p[n] + steps * dt * state.av_v[n], mp))
    return vel, pos


def _hv_velocity_map(state: PlatoonState, lead: Affine, model: HvModel, n_h: int) -> Affine:
    c, b = np.asarray(model.arx.c), np.asarray(model.arx.b)
    hist = state.hv_history
    nv = lead.mat.shape[1]
    const = np.zeros(n_h)
    mat = np.zeros((n_h, nv))
    for i in range(n_h):
        for j in range(1, ARX_ORDER + 1):
            m = i - j
            if m >= 0:
                const[i] -= c[j - 1] * const[m]
                mat[i] -= c[j - 1] * mat[m]
                const[i] += b[j - 1] * lead.const[m]
                mat[i] += b[j - 1] * lead.mat[m]
            else:
                const[i] += -c[j - 1] * hist.hv[-m - 1] + b[j - 1] * hist.lead[-m - 1]
    return Affine(const, mat)


def build_qp(state: PlatoonState, v_ref, cfg: MpcConfig, model: HvModel,
             cache: GpTrajectoryCache | None = None) -> QpProblem:
    """Assemble the horizon QP for the current state.

    ``v_ref`` holds the reference velocity for steps ``1..N``. With
    ``cache=None`` the HV model is the bare ARX and the HV gap bound is the
    fixed safe gap; otherwise the cache supplies the discrepancy offsets and
    the per-step tightening.
    """
    n_h, dt = cfg.horizon, cfg.dt
    v_ref = np.broadcast_to(np.asarray(v_ref, dtype=float), (n_h,))
    av_v, av_p = _av_maps(state, cfg)
    nv = state.n_av * n_h

    hess = 2.0 * cfg.r_accel * np.eye(nv)
    lin = np.zeros(nv)
    const = 0.0

    def add_square(weight, row, offset):
        nonlocal hess, lin, const
        hess += 2.0 * weight * np.outer(row, row)
        lin += 2.0 * weight * offset * row
        const += weight * offset * offset

    for i in range(1, n_h + 1):
        add_square(cfg.q_ref, av_v[0].mat[i], av_v[0].const[i] - v_ref[i - 1])
        for n in range(1, state.n_av):
            add_square(cfg.q_follow, av_v[n - 1].mat[i] - av_v[n].mat[i],
                       av_v[n - 1].const[i] - av_v[n].const[i])

    hv_v = _hv_velocity_map(state, av_v[-1], model, n_h)
    d_mean = np.zeros(n_h) if cache is None else cache.mean
    d_var = np.zeros(n_h) if cache is None else cache.variance
    mu_const = np.empty(n_h + 1)
    mu_mat = np.zeros((n_h + 1, nv))
    mu_const[0] = state.hv_p
    for i in range(n_h):
        mu_const[i + 1] = mu_const[i] + dt * (hv_v.const[i] + d_mean[i])
        mu_mat[i + 1] = mu_mat[i] + dt * hv_v.mat[i]
    var = accumulate_variance(d_var, dt)
    hv_mean = Affine(mu_const, mu_mat)
    if cache is None:
        bounds = np.full(n_h, cfg.safe_gap)
    else:
        bounds = cfg.safe_gap + cfg.extra_gap + normal_inv_cdf(cfg.p_safe) * np.sqrt(var[1:])

    rows, rhs, gap_rows = [], [], []
    for i in range(1, n_h + 1):
        for n in range(1, state.n_av):
            gap_rows.append(len(rows))
            rows.append(av_p[n - 1].mat[i] - av_p[n].mat[i])
            rhs.append(cfg.safe_gap - (av_p[n - 1].const[i] - av_p[n].const[i]))
        gap_rows.append(len(rows))
        rows.append(av_p[-1].mat[i] - mu_mat[i])
        rhs.append(bounds[i - 1] - (av_p[-1].const[i] - mu_const[i]))
        for n in range(state.n_av):
            rows.append(av_v[n].mat[i])
            rhs.append(cfg.v_min - av_v[n].const[i])
            rows.append(-av_v[n].mat[i])
            rhs.append(av_v[n].const[i] - cfg.v_max)
    eye = np.eye(nv)
    for j in range(nv):
        rows.append(eye[j])
        rhs.append(cfg.a_min)
        rows.append(-eye[j])
        rhs.append(-cfg.a_max)
    return QpProblem(hess, lin, const, np.array(rows), np.array(rhs), np.array(gap_rows),
                     av_v, av_p, hv_v, hv_mean, var, bounds, cache)


def _soften(qp: QpProblem, cfg: MpcConfig):
    """Append one non-negative slack per gap row with an L1 (+ small L2) penalty."""
    nv, ns = qp.n_var, qp.gap_rows.size
    hess = np.zeros((nv + ns, nv + ns))
    hess[:nv, :nv] = qp.hess
    hess[nv:, nv:] = cfg.slack_quadratic * np.eye(ns)
    lin = np.concatenate([qp.lin, np.full(ns, cfg.slack_penalty)])
    g = np.zeros((qp.g.shape[0] + ns, nv + ns))
    g[:qp.g.shape[0], :nv] = qp.g
    g[qp.gap_rows, nv + np.arange(ns)] = 1.0
    g[qp.g.shape[0]:, nv:] = np.eye(ns)
    h = np.concatenate([qp.h, np.zeros(ns)])
    return hess, lin, g, h


def solve_qp(qp: QpProblem, cfg: MpcConfig, n_av: int) -> MpcSolution:
    """Solve the horizon QP, softening the gap rows if it is infeasible.

    Raises
    ------
    SolverFailure
        If even the softened problem cannot be solved.
    """
    res = solve_dual_active_set(qp.hess, qp.lin, qp.g, qp.h)
    slack = np.zeros(qp.gap_rows.size)
    softened = False
    if res.feasible:
        kkt = kkt_residual(qp.hess, qp.lin, qp.g, qp.h, res)
        u = res.x
    else:
        hess, lin, g, h = _soften(qp, cfg)
        res = solve_dual_active_set(hess, lin, g, h)
        if not res.feasible:
            raise SolverFailure("softened QP failed")
        kkt = kkt_residual(hess, lin, g, h, res)
        u, slack = res.x[:qp.n_var], res.x[qp.n_var:]
        softened = True
    n_h = cfg.horizon
    return MpcSolution(
        accels=u.reshape(n_av, n_h),
        av_v=np.array([m(u) for m in qp.av_v]),
        av_p=np.array([m(u) for m in qp.av_p]),
        hv_v=qp.hv_v(u),
        hv_mean=qp.hv_mean(u),
        hv_var=qp.hv_var.copy(),
        bounds=qp.bounds.copy(),
        cache=qp.cache,
        objective=float(0.5 * u @ qp.hess @ u + qp.lin @ u + qp.const),
        kkt=kkt,
        slack=float(slack.max(initial=0.0)),
        softened=softened,
    )


@dataclass
class MpcController:
    """Stateful receding-horizon controller; one instance per closed loop.

    In nominal mode only ``model.arx`` is used and no discrepancy is ever
    evaluated.
    """

    cfg: MpcConfig
    model: HvModel
    prev: MpcSolution | None = field(default=None, repr=False)

    def reset(self) -> None:
        self.prev = None

    def step(self, state: PlatoonState, v_ref) -> tuple[np.ndarray, MpcSolution]:
        cache = None
        if self.cfg.mode == "gp":
            cache = gp_trajectory_cache(self.model, state.hv_history, self.cfg.horizon, self.prev)
        qp = build_qp(state, v_ref, self.cfg, self.model, cache)
        sol = solve_qp(qp, self.cfg, state.n_av)
        self.prev = sol
        return sol.accels[:, 0].copy(), sol


def mpc_step(controller: MpcController, state: PlatoonState, v_ref):
    """Run one controller step and time it (cache build plus QP)."""
    start = time.perf_counter()
    accels, sol = controller.step(state, v_ref)
    return accels, sol, time.perf_counter() - start


def sample_open_loop_gaps(sol: MpcSolution, dt: float, n_samples: int,
                          rng: np.random.Generator) -> np.ndarray:
    """HV gap at steps ``1..N`` under the plant noise law, accelerations frozen.

    The discrepancy at each step is drawn independently from the cached
    Gaussian, so the HV position is the planned mean plus a random walk.
    Returns an ``(n_samples, N)`` array.
    """
    if sol.cache is None:
        raise ValueError("solution has no discrepancy cache (nominal mode)")
    noise = rng.standard_normal((n_samples, sol.hv_v.size)) * np.sqrt(sol.cache.variance)
    walk = dt * np.cumsum(noise, axis=1)
    return sol.av_p[-1, 1:] - (sol.hv_mean[1:] + walk)
