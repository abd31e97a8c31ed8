"""Mixed-platoon plant: kinematic AVs followed by one human-driven vehicle."""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import MalformedLog, SolverFailure
from .gp import GpPrediction
from .hv_model import HvModel, VelocityHistory, arx_step


@dataclass(frozen=True)
class PlatoonState:
    """Plant state at step ``k``.

    ``av_p``/``av_v`` are ordered front to back. ``hv_history`` holds the
    nominal HV velocities and the last AV's velocities for ``k-1 .. k-4``;
    ``hv_v`` is the velocity the HV actually drove during ``k-1``.
    """

    av_p: np.ndarray
    av_v: np.ndarray
    hv_p: float
    hv_history: VelocityHistory
    hv_v: float = 0.0
    k: int = 0

    def __post_init__(self):
        av_p = np.asarray(self.av_p, dtype=float).reshape(-1)
        av_v = np.asarray(self.av_v, dtype=float).reshape(-1)
        if av_p.size < 1 or av_p.shape != av_v.shape:
            raise ValueError("need matching position and velocity for at least one AV")
        object.__setattr__(self, "av_p", av_p)
        object.__setattr__(self, "av_v", av_v)

    @property
    def n_av(self) -> int:
        return self.av_p.size

    @classmethod
    def at_rest(cls, n_av: int, spacing: float, lead_position: float = 0.0) -> "PlatoonState":
        p = lead_position - spacing * np.arange(n_av + 1)
        return cls(p[:-1], np.zeros(n_av), float(p[-1]), VelocityHistory.constant(0.0, 0.0))


@dataclass(frozen=True)
class HvBelief:
    mean: float
    variance: float = 0.0


def av_step(v, p, a_cmd, dt: float):
    """Explicit Euler double integrator; position uses the pre-update velocity."""
    if dt <= 0:
        raise ValueError("sample time must be positive")
    v = np.asarray(v, dtype=float)
    return v + dt * np.asarray(a_cmd, dtype=float), np.asarray(p, dtype=float) + dt * v


def hv_plant_step(model: HvModel, state: PlatoonState, rng: np.random.Generator,
                  dt: float = 0.25) -> tuple[float, float, VelocityHistory]:
    """Advance the HV one step.

    The driven velocity is the ARX prediction plus a discrepancy drawn from
    the GP at ``(v_hv[k-1], v_lead[k-1])``. The ARX lags keep the nominal
    prediction, so the sampled noise enters position only.

    Returns ``(driven velocity, new position, new history)``.
    """
    h = state.hv_history
    nominal = arx_step(model.arx, h)
    pred = model.discrepancy(h.gp_input())
    std = float(np.sqrt(max(float(pred.variance), 0.0)))
    v = nominal + float(pred.mean) + std * float(rng.standard_normal())
    return v, state.hv_p + dt * v, h.shifted(nominal, float(state.av_v[-1]))


def propagate_belief(belief: HvBelief, v_hv: float, pred: GpPrediction, dt: float) -> HvBelief:
    """One step of the HV position mean/variance recursion.

    Position-velocity covariance is neglected, so the variance grows by
    ``dt**2`` times the discrepancy variance.
    """
    if dt <= 0:
        raise ValueError("sample time must be positive")
    return HvBelief(belief.mean + dt * v_hv + dt * float(pred.mean),
                    belief.variance + dt * dt * float(pred.variance))


def accumulate_variance(disc_var, dt: float) -> np.ndarray:
    """HV position variance at steps ``0..N`` from per-step discrepancy variances.

    Same recursion as :func:`propagate_belief` starting from zero variance,
    but each prefix is summed with correct rounding, so a constant input
    gives exactly ``n * dt**2 * var`` when ``dt**2`` is a power of two.
    """
    d = [float(v) for v in np.asarray(disc_var, dtype=float).reshape(-1)]
    if any(v < 0 for v in d):
        raise ValueError("discrepancy variance must be non-negative")
    return np.array([dt * dt * math.fsum(d[:i]) for i in range(len(d) + 1)])


# ----------------------------------------------------------------------------
# closed loop

@dataclass
class ScenarioConfig:
    n_av: int = 2
    dt: float = 0.25
    duration: float = 60.0  # s
    spacing: float = 24.0  # m, initial gap between consecutive vehicles
    v_ref_schedule: Sequence[tuple[float, float]] = ((0.0, 20.0), (30.0, 10.0))
    seed: int = 0

    def __post_init__(self):
        if self.n_av < 1:
            raise ValueError("need at least one AV")
        if self.dt <= 0 or self.duration < 0:
            raise ValueError("sample time must be positive and duration non-negative")
        self.v_ref_schedule = tuple((float(t), float(v)) for t, v in self.v_ref_schedule)
        times = [t for t, _ in self.v_ref_schedule]
        if not times or times != sorted(times):
            raise ValueError("reference schedule must be non-empty and sorted by time")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))

    def v_ref(self, t: float) -> float:
        v = self.v_ref_schedule[0][1]
        for start, value in self.v_ref_schedule:
            if t + 1e-9 >= start:
                v = value
        return v


class Controller(Protocol):
    def step(self, state: PlatoonState, v_ref: np.ndarray): ...


@dataclass
class LogRow:
    t: float
    av_p: np.ndarray
    av_v: np.ndarray
    av_a: np.ndarray
    hv_p: float
    hv_v: float
    mu_hv: float
    sigma2_hv: float
    bound: float
    solve_time: float

    @property
    def gap(self) -> float:
        return float(self.av_p[-1] - self.hv_p)


@dataclass
class TrajectoryLog:
    """Per-step closed-loop record.

    Row ``k`` holds the state at ``t_k``, the accelerations applied during
    ``[t_k, t_k+1)``, the controller's one-step HV position belief and the
    tightened gap bound it enforced at the next step.
    """

    n_av: int
    dt: float
    rows: list[LogRow] = field(default_factory=list)
    solutions: list = field(default_factory=list)
    header: str = ""
    initial: PlatoonState | None = None

    def columns(self) -> list[str]:
        cols = ["t"]
        for n in range(1, self.n_av + 1):
            cols += [f"p_av{n}", f"v_av{n}", f"a_av{n}"]
        return cols + ["p_hv", "v_hv", "mu_hv", "sigma2_hv", "dist_av_hv", "bound", "solve_time"]

    def as_array(self) -> np.ndarray:
        out = np.empty((len(self.rows), len(self.columns())))
        for i, r in enumerate(self.rows):
            av = np.column_stack([r.av_p, r.av_v, r.av_a]).ravel()
            out[i] = [r.t, *av, r.hv_p, r.hv_v, r.mu_hv, r.sigma2_hv, r.gap, r.bound,
                      r.solve_time]
        return out

    def column(self, name: str) -> np.ndarray:
        return self.as_array()[:, self.columns().index(name)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        for line in self.header.splitlines():
            buf.write(f"# {line}\n")
        buf.write(",".join(self.columns()) + "\n")
        for row in self.as_array():
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def min_gap(self) -> float:
        return min((r.gap for r in self.rows), default=float("nan"))

    def summary(self) -> dict:
        if not self.rows:
            out = {"steps": 0}
            if self.initial is not None:
                out["final_av_positions"] = [float(p) for p in self.initial.av_p]
                out["final_hv_position"] = float(self.initial.hv_p)
                out["min_dist_av_hv"] = float(self.initial.av_p[-1] - self.initial.hv_p)
            return out
        last = self.rows[-1]
        times = np.array([r.solve_time for r in self.rows])
        return {
            "steps": len(self.rows),
            "final_av_positions": [float(p) for p in last.av_p],
            "final_hv_position": float(last.hv_p),
            "min_dist_av_hv": self.min_gap(),
            "mean_solve_time": float(times.mean()),
            "max_solve_time": float(times.max()),
            "std_solve_time": float(times.std()),
        }


def read_log(path) -> tuple[list[str], np.ndarray, str]:
    """Parse a written log into ``(columns, data, header)``."""
    lines = Path(path).read_text().splitlines()
    header = "\n".join(line[2:] for line in lines if line.startswith("#"))
    body = [line for line in lines if line and not line.startswith("#")]
    if len(body) < 2:
        raise MalformedLog(f"{path}: no data rows")
    cols = body[0].split(",")
    try:
        data = np.array([[float(v) for v in line.split(",")] for line in body[1:]])
    except ValueError as exc:
        raise MalformedLog(f"{path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != len(cols):
        raise MalformedLog(f"{path}: rows do not match the {len(cols)}-column header")
    return cols, data, header


def run_scenario(cfg: ScenarioConfig, controller: Controller, plant: HvModel,
                 horizon: int, seed: int | None = None, header: str = "") -> TrajectoryLog:
    """Run the closed loop for ``cfg.steps`` steps.

    ``controller.step(state, v_ref)`` must return ``(accels, solution)``;
    ``v_ref`` covers the ``horizon`` steps after ``k``. Solve time is
    measured around that call. Solver failures are re-raised with the step
    index attached.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    state = PlatoonState.at_rest(cfg.n_av, cfg.spacing)
    log = TrajectoryLog(cfg.n_av, cfg.dt, header=header, initial=state)
    for k in range(cfg.steps):
        t = k * cfg.dt
        v_ref = np.array([cfg.v_ref(t + i * cfg.dt) for i in range(1, horizon + 1)])
        start = time.perf_counter()
        try:
            accels, sol = controller.step(state, v_ref)
        except SolverFailure as exc:
            raise SolverFailure(str(exc), step=k) from exc
        elapsed = time.perf_counter() - start
        log.rows.append(LogRow(t, state.av_p, state.av_v, np.asarray(accels, dtype=float),
                               state.hv_p, state.hv_v, sol.hv_mean[1], sol.hv_var[1],
                               sol.bounds[0], elapsed))
        log.solutions.append(sol)
        v_hv, p_hv, hist = hv_plant_step(plant, state, rng, cfg.dt)
        av_v, av_p = av_step(state.av_v, state.av_p, accels, cfg.dt)
        state = replace(state, av_p=av_p, av_v=av_v, hv_p=p_hv, hv_history=hist, hv_v=v_hv,
                        k=k + 1)
    return log
