"""Dense SPD linear algebra and standard-normal helpers.

Everything here is a pure function of its inputs. Matrices are plain
``numpy`` arrays; a :class:`CholFactor` additionally records how much
diagonal jitter had to be added before the factorization succeeded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, DomainError, NotPositiveDefinite

DEFAULT_JITTER = (0.0, 1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class CholFactor:
    """Lower Cholesky factor ``L`` with ``L @ L.T == m + jitter * I``."""

    lower: np.ndarray
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))


def _check_symmetric(m: np.ndarray) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if np.max(np.abs(m - m.T), initial=0.0) > 1e-12 * scale:
        raise DimensionMismatch("matrix is not symmetric")


def cholesky(m, jitter_schedule: Sequence[float] = DEFAULT_JITTER) -> CholFactor:
    """Factor a symmetric matrix, escalating diagonal jitter on failure.

    The jitter values are tried in increasing order and the first one that
    yields a factor with a strictly positive diagonal is kept. Each value is
    relative: it is multiplied by the mean diagonal entry before being added,
    and the absolute amount actually added is what gets recorded.

    Raises
    ------
    NotPositiveDefinite
        If every jitter value in the schedule fails.
    """
    m = np.asarray(m, dtype=float)
    _check_symmetric(m)
    eye = np.eye(m.shape[0])
    scale = float(np.mean(np.abs(np.diag(m)))) if m.size else 1.0
    scale = scale if scale > 0 else 1.0
    for jitter in sorted(jitter_schedule):
        added = jitter * scale
        try:
            lower = np.linalg.cholesky(m + added * eye if added else m)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.diag(lower) > 0):
            return CholFactor(lower, float(added))
    raise NotPositiveDefinite(
        f"matrix of size {m.shape[0]} not positive definite with jitter up to "
        f"{max(jitter_schedule):g}"
    )


def tri_solve(lower: np.ndarray, b, trans: bool = False) -> np.ndarray:
    """Solve ``L x = b`` (or ``L.T x = b`` when ``trans``)."""
    return scipy.linalg.solve_triangular(
        lower, b, lower=True, trans="T" if trans else "N", check_finite=False
    )


def chol_solve(factor: CholFactor, b) -> np.ndarray:
    """Solve ``(L L^T) x = b`` for a vector or a matrix of right-hand sides."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != factor.n:
        raise DimensionMismatch(
            f"right-hand side has {b.shape[0]} rows, factor is {factor.n}x{factor.n}"
        )
    return tri_solve(factor.lower, tri_solve(factor.lower, b), trans=True)


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def normal_pdf(z: float) -> float:
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


# Acklam's rational approximation, |relative error| < 1.2e-9 before refinement.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _lower_half_quantile(p: float) -> float:
    # p in (0, 0.5]
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    else:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
            ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        )
    # one Newton step against the erfc-based CDF
    return x - (normal_cdf(x) - p) / normal_pdf(x)


def normal_inv_cdf(p: float) -> float:
    """Standard normal quantile function.

    Anti-symmetric by construction: the upper half is mirrored from the
    lower half, so ``normal_inv_cdf(1 - p) == -normal_inv_cdf(p)`` whenever
    ``1 - p`` is exact in floating point.
    """
    p = float(p)
    if not 0.0 < p < 1.0 or math.isnan(p):
        raise DomainError(f"probability must lie in (0, 1), got {p!r}")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return _lower_half_quantile(p)
    return -_lower_half_quantile(1.0 - p)
