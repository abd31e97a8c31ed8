"""Exact single-output GP regression with a squared-exponential kernel.

The GP models the scalar velocity discrepancy of the human-driven vehicle
as a function of the input pair (HV velocity, lead-AV velocity). Inputs are
stored row-wise, shape ``(m, 2)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import DimensionMismatch, TrainingDiverged
from .linalg import DEFAULT_JITTER, CholFactor, chol_solve, cholesky, tri_solve

LOG_2PI = math.log(2.0 * math.pi)

# bounds on the raw (not log) hyperparameters
SIGNAL_BOUNDS = (1e-6, 1e3)
NOISE_BOUNDS = (1e-6, 1e3)
LENGTHSCALE_BOUNDS = (1e-4, 1e6)


@dataclass(frozen=True)
class GpDataset:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.asarray(self.targets, dtype=float).reshape(-1)
        if x.shape[0] != y.shape[0]:
            raise DimensionMismatch(
                f"{x.shape[0]} inputs but {y.shape[0]} targets"
            )
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    def __len__(self):
        return self.targets.shape[0]

    def subset(self, idx) -> "GpDataset":
        return GpDataset(self.inputs[idx], self.targets[idx])


@dataclass(frozen=True)
class GpHyperparams:
    """SE-kernel hyperparameters.

    Attributes
    ----------
    signal_var : float
        Signal variance, (m/s)^2.
    lengthscales_sq : ndarray
        Squared lengthscale per input dimension (diagonal of ``L``), (m/s)^2.
    noise_var : float
        Observation noise variance, (m/s)^2.
    """

    signal_var: float
    lengthscales_sq: np.ndarray
    noise_var: float

    def __post_init__(self):
        ls = np.asarray(self.lengthscales_sq, dtype=float).reshape(-1)
        object.__setattr__(self, "lengthscales_sq", ls)
        vals = np.concatenate([[self.signal_var, self.noise_var], ls])
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise ValueError(f"hyperparameters must be positive and finite: {vals}")

    def to_log(self) -> np.ndarray:
        """Log-space vector ``[log sf2, log l1^2, ..., log sn2]``."""
        return np.log(np.concatenate([[self.signal_var], self.lengthscales_sq, [self.noise_var]]))

    @classmethod
    def from_log(cls, theta) -> "GpHyperparams":
        theta = np.exp(np.asarray(theta, dtype=float))
        return cls(float(theta[0]), theta[1:-1], float(theta[-1]))

    @staticmethod
    def log_bounds(dim: int) -> list[tuple[float, float]]:
        b = [tuple(np.log(SIGNAL_BOUNDS))]
        b += [tuple(np.log(LENGTHSCALE_BOUNDS))] * dim
        b += [tuple(np.log(NOISE_BOUNDS))]
        return b

    def to_dict(self) -> dict:
        return {
            "signal_var": float(self.signal_var),
            "lengthscales_sq": [float(v) for v in self.lengthscales_sq],
            "noise_var": float(self.noise_var),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GpHyperparams":
        return cls(d["signal_var"], np.asarray(d["lengthscales_sq"]), d["noise_var"])


@dataclass(frozen=True)
class GpPrediction:
    mean: float | np.ndarray
    variance: float | np.ndarray


def _sq_dist_scaled(x, y, lengthscales_sq):
    # direct differences: elementwise, so batch and single queries agree bitwise
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    d = np.zeros((x.shape[0], y.shape[0]))
    for k in range(x.shape[1]):
        diff = x[:, k, None] - y[None, :, k]
        d += diff * diff / lengthscales_sq[k]
    return d


def se_kernel(x, y, h: GpHyperparams) -> float:
    """``sf2 * exp(-0.5 (x - y)^T L^{-1} (x - y))`` for two single points."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return float(h.signal_var * math.exp(-0.5 * float(np.sum(diff * diff / h.lengthscales_sq))))


def kernel_matrix(x, y, h: GpHyperparams) -> np.ndarray:
    """Cross-covariance matrix ``K[i, j] = k(x_i, y_j)``."""
    return h.signal_var * np.exp(-0.5 * _sq_dist_scaled(x, y, h.lengthscales_sq))


def _gram(data: GpDataset, h: GpHyperparams) -> np.ndarray:
    k = kernel_matrix(data.inputs, data.inputs, h)
    k[np.diag_indices_from(k)] += h.noise_var
    return k


def log_marginal_likelihood(h: GpHyperparams, data: GpDataset, jitter=DEFAULT_JITTER):
    """Log marginal likelihood and its gradient w.r.t. ``h.to_log()``.

    The gradient uses ``0.5 * tr((alpha alpha^T - K^{-1}) dK/dtheta)``.
    """
    x, y = data.inputs, data.targets
    m = y.shape[0]
    if m == 0:
        raise DimensionMismatch("empty dataset")
    kf = kernel_matrix(x, x, h)
    gram = kf.copy()
    gram[np.diag_indices_from(gram)] += h.noise_var
    factor = cholesky(gram, jitter)
    alpha = chol_solve(factor, y)
    value = -0.5 * float(y @ alpha) - 0.5 * factor.logdet() - 0.5 * m * LOG_2PI

    kinv = _inverse_from_cholesky(factor)
    w = np.outer(alpha, alpha)
    w -= kinv
    wk = w * kf
    grad = np.empty(len(h.lengthscales_sq) + 2)
    grad[0] = 0.5 * wk.sum()
    for d, ls in enumerate(h.lengthscales_sq):
        diff = x[:, d][:, None] - x[:, d][None, :]
        grad[1 + d] = 0.25 * np.sum(wk * (diff * diff)) / ls
    grad[-1] = 0.5 * h.noise_var * np.trace(w)
    return value, grad


@dataclass(frozen=True)
class GpModel:
    """Trained exact GP posterior.

    ``alpha = (K + sn2 I)^{-1} d`` and the Cholesky factor of the noisy Gram
    matrix are precomputed at construction; the model is immutable.
    """

    data: GpDataset
    hyper: GpHyperparams
    factor: CholFactor = field(repr=False)
    alpha: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, data: GpDataset, hyper: GpHyperparams, jitter=DEFAULT_JITTER) -> "GpModel":
        if len(data) == 0:
            return cls(data, hyper, CholFactor(np.zeros((0, 0))), np.zeros(0))
        factor = cholesky(_gram(data, hyper), jitter)
        return cls(data, hyper, factor, chol_solve(factor, data.targets))

    @classmethod
    def prior(cls, hyper: GpHyperparams, dim: int = 2) -> "GpModel":
        return cls.build(GpDataset(np.zeros((0, dim)), np.zeros(0)), hyper)

    @property
    def input_dim(self) -> int:
        return self.data.inputs.shape[1]

    def predict(self, x, include_noise: bool = False) -> GpPrediction:
        """Posterior mean and latent variance at one point or a batch.

        With ``include_noise`` the observation noise variance is added, which
        gives the predictive distribution of a new noisy discrepancy sample.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xs = np.atleast_2d(x)
        if xs.shape[1] != self.input_dim:
            raise DimensionMismatch(f"query dimension {xs.shape[1]} != {self.input_dim}")
        prior_var = np.full(xs.shape[0], self.hyper.signal_var)
        if len(self.data) == 0:
            mean, var = np.zeros(xs.shape[0]), prior_var
        else:
            ks = kernel_matrix(self.data.inputs, xs, self.hyper)
            mean = ks.T @ self.alpha
            v = tri_solve(self.factor.lower, ks)
            var = prior_var - np.sum(v * v, axis=0)
            var = _clamp_variance(var)
        if include_noise:
            var = var + self.hyper.noise_var
        if single:
            return GpPrediction(float(mean[0]), float(var[0]))
        return GpPrediction(mean, var)

    def lml(self) -> float:
        return log_marginal_likelihood(self.hyper, self.data)[0]

    # serialization ---------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "kind": "exact_gp",
            "kernel": "squared_exponential",
            "hyperparams": self.hyper.to_dict(),
            "jitter": self.factor.jitter,
            "inputs": self.data.inputs.tolist(),
            "targets": self.data.targets.tolist(),
            "alpha": self.alpha.tolist(),
            "cholesky_lower": self.factor.lower.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GpModel":
        data = GpDataset(np.asarray(d["inputs"], dtype=float).reshape(-1, 2), d["targets"])
        factor = CholFactor(np.asarray(d["cholesky_lower"], dtype=float).reshape(len(data), len(data)),
                            float(d.get("jitter", 0.0)))
        return cls(data, GpHyperparams.from_dict(d["hyperparams"]), factor,
                   np.asarray(d["alpha"], dtype=float))

    def save(self, path, provenance: dict | None = None) -> None:
        payload = self.to_dict()
        if provenance is not None:
            payload["provenance"] = provenance
        Path(path).write_text(json.dumps(payload, indent=1))

    @classmethod
    def load(cls, path) -> "GpModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _inverse_from_cholesky(factor: CholFactor) -> np.ndarray:
    inv, info = scipy.linalg.lapack.dpotri(factor.lower, lower=1)
    if info != 0:
        raise np.linalg.LinAlgError(f"dpotri failed with info={info}")
    return np.tril(inv) + np.tril(inv, -1).T


def _clamp_variance(var: np.ndarray) -> np.ndarray:
    if np.any(var < -1e-9):
        raise ArithmeticError(f"negative posterior variance {var.min():.3e}")
    return np.maximum(var, 0.0)


@dataclass
class TrainerOptions:
    restarts: int = 5
    max_iter: int = 200
    tol: float = 1e-5
    seed: int = 0
    restart_spread: float = 1.5  # std of log-space perturbation per restart


def initial_hyperparams(data: GpDataset) -> GpHyperparams:
    """Heuristic starting point: ``sf2 = var(d)``, ``sn2 = 0.1 var(d)``,
    lengthscale = per-dimension input std. Values are clipped into bounds."""
    var_d = float(np.var(data.targets))
    sf2 = float(np.clip(var_d, *SIGNAL_BOUNDS))
    sn2 = float(np.clip(0.1 * var_d, *NOISE_BOUNDS))
    ls = np.clip(np.var(data.inputs, axis=0), *LENGTHSCALE_BOUNDS)
    return GpHyperparams(sf2, ls, sn2)


def fit(data: GpDataset, init: GpHyperparams | None = None, opts: TrainerOptions | None = None,
        jitter=DEFAULT_JITTER) -> GpModel:
    """Maximise the log marginal likelihood over log-hyperparameters.

    Bounded quasi-Newton ascent (L-BFGS-B) is run from ``init`` and from
    ``opts.restarts - 1`` random log-space perturbations of it; the best
    local optimum wins.
    """
    opts = opts or TrainerOptions()
    if len(data) < 2:
        raise DimensionMismatch("need at least two training points")
    init = init or initial_hyperparams(data)
    bounds = GpHyperparams.log_bounds(data.inputs.shape[1])
    lo, hi = np.array(bounds).T
    rng = np.random.default_rng(opts.seed)

    def objective(theta):
        try:
            value, grad = log_marginal_likelihood(GpHyperparams.from_log(theta), data, jitter)
        except Exception as exc:  # NotPositiveDefinite and friends
            raise TrainingDiverged(f"LML evaluation failed at log-params {theta}: {exc}") from exc
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise TrainingDiverged(f"non-finite LML at log-params {theta}")
        return -value, -grad

    theta0 = np.clip(init.to_log(), lo, hi)
    starts = [theta0] + [
        np.clip(theta0 + opts.restart_spread * rng.standard_normal(theta0.shape), lo, hi)
        for _ in range(max(opts.restarts, 1) - 1)
    ]
    best_theta, best_value, failures = None, -np.inf, []
    for start in starts:
        try:
            res = scipy.optimize.minimize(
                objective, start, jac=True, method="L-BFGS-B", bounds=bounds,
                options={"maxiter": opts.max_iter, "gtol": opts.tol},
            )
        except TrainingDiverged as exc:
            failures.append(str(exc))
            continue
        if -res.fun > best_value:
            best_theta, best_value = res.x, -res.fun
    if best_theta is None:
        raise TrainingDiverged("all restarts failed:\n" + "\n".join(failures))
    return GpModel.build(data, GpHyperparams.from_log(best_theta), jitter)
