"""FIC sparse approximation of a trained GP.

The training covariance is replaced by ``Q_ff + diag(K_ff - Q_ff) + sn2 I``
with ``Q_ff = K_fu K_uu^{-1} K_uf``. Hyperparameters come from the full GP
and stay fixed; only the inducing inputs are optimised, by ascending the
FIC marginal likelihood.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.optimize

from .errors import DimensionMismatch, TrainingDiverged
from .gp import LOG_2PI, GpDataset, GpHyperparams, GpModel, GpPrediction, kernel_matrix
from .linalg import DEFAULT_JITTER, cholesky, tri_solve


@dataclass(frozen=True)
class InducingSet:
    inputs: np.ndarray

    def __post_init__(self):
        z = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        if z.shape[0] < 1 or not np.all(np.isfinite(z)):
            raise ValueError("inducing set must be non-empty and finite")
        object.__setattr__(self, "inputs", z)

    @property
    def count(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class SparseGpModel:
    """FIC posterior stored in inducing space only.

    Prediction needs ``k_u(x)`` (M kernel evaluations) plus the M-vector
    ``weights`` and the MxM matrix ``var_matrix = K_uu^{-1} - Sigma`` where
    ``Sigma = (K_uu + K_uf Lambda^{-1} K_fu)^{-1}``; no training data is kept.
    """

    hyper: GpHyperparams
    inducing: InducingSet
    weights: np.ndarray = field(repr=False)
    var_matrix: np.ndarray = field(repr=False)
    jitter: float = 0.0

    def predict(self, x, include_noise: bool = False) -> GpPrediction:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xs = np.atleast_2d(x)
        if xs.shape[1] != self.inducing.inputs.shape[1]:
            raise DimensionMismatch("query dimension does not match inducing inputs")
        # contiguous row per query, reduced one at a time, so a batch
        # reproduces single calls exactly
        kx = kernel_matrix(xs, self.inducing.inputs, self.hyper)
        mean = np.array([row @ self.weights for row in kx])
        var = self.hyper.signal_var - np.array([row @ (self.var_matrix @ row) for row in kx])
        var = np.clip(var, 0.0, None)
        if include_noise:
            var = var + self.hyper.noise_var
        if single:
            return GpPrediction(float(mean[0]), float(var[0]))
        return GpPrediction(mean, var)

    def to_dict(self) -> dict:
        return {
            "kind": "fic_sparse_gp",
            "kernel": "squared_exponential",
            "hyperparams": self.hyper.to_dict(),
            "jitter": self.jitter,
            "inducing_inputs": self.inducing.inputs.tolist(),
            "weights": self.weights.tolist(),
            "var_matrix": self.var_matrix.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SparseGpModel":
        z = InducingSet(np.asarray(d["inducing_inputs"], dtype=float))
        return cls(GpHyperparams.from_dict(d["hyperparams"]), z,
                   np.asarray(d["weights"], dtype=float),
                   np.asarray(d["var_matrix"], dtype=float).reshape(z.count, z.count),
                   float(d.get("jitter", 0.0)))

    def save(self, path, provenance: dict | None = None) -> None:
        payload = self.to_dict()
        if provenance is not None:
            payload["provenance"] = provenance
        Path(path).write_text(json.dumps(payload, indent=1))

    @classmethod
    def load(cls, path) -> "SparseGpModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fic_precompute(h: GpHyperparams, z: InducingSet, data: GpDataset,
                   jitter=DEFAULT_JITTER) -> SparseGpModel:
    x, y = data.inputs, data.targets
    if x.shape[1] != z.inputs.shape[1]:
        raise DimensionMismatch("training and inducing inputs differ in dimension")
    kuu = kernel_matrix(z.inputs, z.inputs, h)
    luu = cholesky(kuu, jitter)
    kuf = kernel_matrix(z.inputs, x, h)
    v = tri_solve(luu.lower, kuf)  # M x m, Q_ff = V^T V
    lam = h.signal_var - np.sum(v * v, axis=0) + h.noise_var
    lam = np.maximum(lam, h.noise_var)
    vl = v / lam
    b = np.eye(z.count) + vl @ v.T
    lb = cholesky(b, jitter)
    # mean weights: K_uu^{-1} K_uf (Q + Lambda)^{-1} y = Luu^-T B^-1 V Lambda^-1 y
    c = tri_solve(lb.lower, vl @ y)
    weights = tri_solve(luu.lower, tri_solve(lb.lower, c, trans=True), trans=True)
    # K_uu^{-1} - Sigma = Luu^-T (I - B^-1) Luu^-1
    binv = tri_solve(lb.lower, tri_solve(lb.lower, np.eye(z.count)), trans=True)
    inner = np.eye(z.count) - binv
    luu_inv = tri_solve(luu.lower, np.eye(z.count))
    var_matrix = luu_inv.T @ inner @ luu_inv
    var_matrix = 0.5 * (var_matrix + var_matrix.T)
    return SparseGpModel(h, z, weights, var_matrix, max(luu.jitter, lb.jitter))


def fic_log_marginal_likelihood(h: GpHyperparams, z, data: GpDataset, jitter=DEFAULT_JITTER):
    """FIC marginal likelihood and its gradient w.r.t. the inducing inputs.

    Cost is O(m M^2). Returns ``(value, grad)`` with ``grad`` shaped like
    ``z``.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    x, y = data.inputs, data.targets
    m, mz = y.shape[0], z.shape[0]
    ls = h.lengthscales_sq

    kuu = kernel_matrix(z, z, h)
    luu = cholesky(kuu, jitter)
    kuu = kuu + luu.jitter * np.eye(mz)
    kuf = kernel_matrix(z, x, h)
    v = tri_solve(luu.lower, kuf)
    lam = h.signal_var - np.sum(v * v, axis=0) + h.noise_var
    if np.any(lam <= 0):
        raise TrainingDiverged("FIC diagonal became non-positive")
    vl = v / lam
    bmat = np.eye(mz) + vl @ v.T
    lb = cholesky(bmat, jitter)

    # C^{-1} = Lam^-1 - Lam^-1 V^T B^-1 V Lam^-1
    e = tri_solve(lb.lower, vl)  # M x m
    beta = y / lam - e.T @ (e @ y)
    logdet = lb.logdet() + float(np.sum(np.log(lam)))
    value = -0.5 * float(y @ beta) - 0.5 * logdet - 0.5 * m * LOG_2PI

    # gradient: tr(P dK_fu) - 0.5 tr(S dK_uu), P = B_u (W - diag W), S = P B_u^T
    # with B_u = K_uu^{-1} K_uf and W = beta beta^T - C^{-1}
    bu = tri_solve(luu.lower, v, trans=True)  # M x m
    cinv_diag = 1.0 / lam - np.sum(e * e, axis=0)
    w_diag = beta * beta - cinv_diag
    bu_cinv = bu / lam - (bu @ e.T) @ e
    p = np.outer(bu @ beta, beta) - bu_cinv - bu * w_diag
    s = p @ bu.T
    s = s + s.T
    grad = np.empty_like(z)
    for d in range(z.shape[1]):
        dx = (x[:, d][None, :] - z[:, d][:, None]) / ls[d]  # M x m
        grad[:, d] = np.sum(p * kuf * dx, axis=1)
        dz = (z[:, d][None, :] - z[:, d][:, None]) / ls[d]  # M x M, row u col v
        grad[:, d] -= 0.5 * np.sum(s * kuu * dz, axis=1)
    return value, grad


@dataclass
class InducingOptions:
    max_iter: int = 200
    tol: float = 1e-6
    init: str = "stride"  # or "kmeans"
    seed: int = 0


def _initial_inducing(x: np.ndarray, m_tilde: int, init: str, seed: int) -> np.ndarray:
    if init == "stride":
        idx = np.linspace(0, x.shape[0] - 1, m_tilde).round().astype(int)
        return x[idx].copy()
    if init == "kmeans":
        from scipy.cluster.vq import kmeans2

        centroids, _ = kmeans2(x, m_tilde, minit="++", seed=seed)
        return centroids
    raise ValueError(f"unknown inducing initialisation {init!r}")


def select_inducing(full: GpModel, m_tilde: int, opts: InducingOptions | None = None,
                    jitter=DEFAULT_JITTER) -> InducingSet:
    """Place ``m_tilde`` inducing inputs by FIC marginal-likelihood ascent."""
    opts = opts or InducingOptions()
    data = full.data
    if not 1 <= m_tilde <= len(data):
        raise ValueError(f"m_tilde must lie in [1, {len(data)}], got {m_tilde}")
    if m_tilde == len(data):
        # FIC is exact when the inducing set is the training set
        return InducingSet(data.inputs.copy())
    z0 = _initial_inducing(data.inputs, m_tilde, opts.init, opts.seed)
    if opts.max_iter == 0:
        return InducingSet(z0)
    shape = z0.shape

    def objective(flat):
        try:
            value, grad = fic_log_marginal_likelihood(full.hyper, flat.reshape(shape), data, jitter)
        except Exception as exc:
            raise TrainingDiverged(f"FIC likelihood evaluation failed: {exc}") from exc
        if not np.isfinite(value):
            raise TrainingDiverged("non-finite FIC likelihood")
        return -value, -grad.ravel()

    res = scipy.optimize.minimize(objective, z0.ravel(), jac=True, method="L-BFGS-B",
                                  options={"maxiter": opts.max_iter, "gtol": opts.tol})
    z = res.x.reshape(shape)
    if res.fun > objective(z0.ravel())[0]:
        z = z0
    return InducingSet(z)


def sparsify(full: GpModel, m_tilde: int = 20, opts: InducingOptions | None = None) -> SparseGpModel:
    """Select inducing inputs for ``full`` and build its FIC model."""
    z = select_inducing(full, m_tilde, opts)
    return fic_precompute(full.hyper, z, full.data)
