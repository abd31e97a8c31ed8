"""Human-driven vehicle velocity model: ARX nominal part plus GP correction."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import DimensionMismatch, SeriesTooShort
from .gp import GpDataset, GpPrediction

ARX_ORDER = 4


@dataclass(frozen=True)
class ArxCoefficients:
    """Fourth-order ARX driver model.

    ``v_k = -sum(c_i v_{k-i}) + sum(b_i u_{k-i})`` where ``v`` is the HV
    velocity and ``u`` the velocity of the last AV.
    """

    c: tuple[float, float, float, float]
    b: tuple[float, float, float, float]

    def __post_init__(self):
        c = tuple(float(v) for v in self.c)
        b = tuple(float(v) for v in self.b)
        if len(c) != ARX_ORDER or len(b) != ARX_ORDER:
            raise DimensionMismatch("ARX model needs exactly four c and four b coefficients")
        if not np.all(np.isfinite(c + b)):
            raise ValueError("ARX coefficients must be finite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "b", b)

    @classmethod
    def published(cls) -> "ArxCoefficients":
        return cls(c=(-3.0227, 3.3543, -1.6329, 0.3014),
                   b=(0.0063, -0.0303, 0.0495, -0.0254))

    def dc_gain(self) -> float:
        return sum(self.b) / (1.0 + sum(self.c))


# module-level default, used throughout
PUBLISHED_ARX = ArxCoefficients.published()


@dataclass(frozen=True)
class VelocityHistory:
    """Last four HV and lead-AV velocities, most recent first (``k-1`` .. ``k-4``)."""

    hv: tuple[float, ...]
    lead: tuple[float, ...]

    def __post_init__(self):
        hv = tuple(float(v) for v in self.hv)
        lead = tuple(float(v) for v in self.lead)
        if len(hv) != ARX_ORDER or len(lead) != ARX_ORDER:
            raise DimensionMismatch("velocity history needs four entries for each vehicle")
        object.__setattr__(self, "hv", hv)
        object.__setattr__(self, "lead", lead)

    @classmethod
    def constant(cls, v_hv: float, v_lead: float) -> "VelocityHistory":
        return cls((v_hv,) * ARX_ORDER, (v_lead,) * ARX_ORDER)

    def shifted(self, v_hv: float, v_lead: float) -> "VelocityHistory":
        return VelocityHistory((v_hv,) + self.hv[:-1], (v_lead,) + self.lead[:-1])

    def gp_input(self) -> np.ndarray:
        """Discrepancy-model input ``(v_hv[k-1], v_lead[k-1])``."""
        return np.array([self.hv[0], self.lead[0]])


def arx_step(c: ArxCoefficients, h: VelocityHistory) -> float:
    return float(-np.dot(c.c, h.hv) + np.dot(c.b, h.lead))


class DiscrepancyPredictor(Protocol):
    def predict(self, x, include_noise: bool = False) -> GpPrediction: ...


class ZeroDiscrepancy:
    """Predictor returning ``N(0, 0)`` everywhere; turns ARX+GP into plain ARX."""

    def predict(self, x, include_noise: bool = False) -> GpPrediction:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return GpPrediction(0.0, 0.0)
        n = x.shape[0]
        return GpPrediction(np.zeros(n), np.zeros(n))


@dataclass(frozen=True)
class HvModel:
    """ARX nominal model with an additive GP discrepancy.

    ``predictor`` may be an exact :class:`~platoon_gpmpc.gp.GpModel` or a
    :class:`~platoon_gpmpc.sparse.SparseGpModel`. With ``observation_noise``
    the discrepancy variance includes the GP noise term, i.e. it describes a
    fresh noisy discrepancy rather than the latent function.
    """

    arx: ArxCoefficients
    predictor: DiscrepancyPredictor = field(default_factory=ZeroDiscrepancy)
    observation_noise: bool = False

    def discrepancy(self, x) -> GpPrediction:
        return self.predictor.predict(x, include_noise=self.observation_noise)


def combined_predict(model: HvModel, h: VelocityHistory) -> GpPrediction:
    """Corrected velocity prediction: ARX mean plus GP mean, GP variance."""
    pred = model.discrepancy(h.gp_input())
    return GpPrediction(arx_step(model.arx, h) + pred.mean, pred.variance)


def _history_at(v_hv: np.ndarray, v_lead: np.ndarray, j: int) -> VelocityHistory:
    return VelocityHistory(v_hv[j - ARX_ORDER:j][::-1], v_lead[j - ARX_ORDER:j][::-1])


def one_step_predictions(v_hv, v_lead, c: ArxCoefficients, model: HvModel | None = None):
    """One-step-ahead predictions for samples ``j = 4 .. n-1`` of a series.

    Each prediction uses the measured history ``j-1 .. j-4``. Returns
    ``(measured, arx, corrected_mean, corrected_var)``; the last two are
    ``None`` when ``model`` is omitted.
    """
    v_hv = np.asarray(v_hv, dtype=float)
    v_lead = np.asarray(v_lead, dtype=float)
    n = v_hv.shape[0]
    if n < ARX_ORDER + 1:
        raise SeriesTooShort(f"need at least {ARX_ORDER + 1} samples, got {n}")
    # vectorised ARX over all windows
    lags_h = np.stack([v_hv[ARX_ORDER - i:n - i] for i in range(1, ARX_ORDER + 1)], axis=1)
    lags_l = np.stack([v_lead[ARX_ORDER - i:n - i] for i in range(1, ARX_ORDER + 1)], axis=1)
    arx = -lags_h @ np.asarray(c.c) + lags_l @ np.asarray(c.b)
    measured = v_hv[ARX_ORDER:]
    if model is None:
        return measured, arx, None, None
    pred = model.discrepancy(np.column_stack([lags_h[:, 0], lags_l[:, 0]]))
    return measured, arx, arx + pred.mean, np.asarray(pred.variance)


def build_discrepancy_dataset(v_hv, v_lead, c: ArxCoefficients) -> GpDataset:
    """Discrepancy targets ``v_j - arx(measured history)`` with inputs
    ``(v_hv[j-1], v_lead[j-1])`` for every ``j >= 4`` (zero-based)."""
    v_hv = np.asarray(v_hv, dtype=float)
    v_lead = np.asarray(v_lead, dtype=float)
    if v_hv.shape != v_lead.shape:
        raise DimensionMismatch("HV and lead series differ in length")
    measured, arx, _, _ = one_step_predictions(v_hv, v_lead, c)
    inputs = np.column_stack([v_hv[ARX_ORDER - 1:-1], v_lead[ARX_ORDER - 1:-1]])
    return GpDataset(inputs, measured - arx)


def rmse(predicted, actual) -> float:
    predicted = np.asarray(predicted, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if predicted.shape != actual.shape or predicted.size == 0:
        raise DimensionMismatch(f"shapes {predicted.shape} and {actual.shape}")
    return float(np.sqrt(np.mean((predicted - actual) ** 2)))


def stride_indices(n: int, fraction: float = 0.2) -> np.ndarray:
    """Evenly strided subset covering ``fraction`` of ``n`` samples."""
    step = max(int(round(1.0 / fraction)), 1)
    return np.arange(0, n, step)


# ----------------------------------------------------------------------------
# dataset files: comma-separated t, v_H, v_AV with an optional '#' preamble

@dataclass(frozen=True)
class VelocitySeries:
    t: np.ndarray
    v_hv: np.ndarray
    v_lead: np.ndarray

    def __len__(self):
        return self.t.shape[0]


def format_series(series: VelocitySeries, preamble: str = "") -> str:
    buf = io.StringIO()
    for line in preamble.splitlines():
        buf.write(f"# {line}\n")
    buf.write("t,v_H,v_AV\n")
    for t, vh, vl in zip(series.t, series.v_hv, series.v_lead):
        buf.write(f"{t:.4f},{float(vh)!r},{float(vl)!r}\n")
    return buf.getvalue()


def write_series(path, series: VelocitySeries, preamble: str = "") -> None:
    Path(path).write_text(format_series(series, preamble))


def read_series(path) -> VelocitySeries:
    with open(path, newline="") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(rows)
    data = [(float(r["t"]), float(r["v_H"]), float(r["v_AV"])) for r in reader]
    if not data:
        raise SeriesTooShort(f"{path} holds no samples")
    arr = np.array(data)
    return VelocitySeries(arr[:, 0], arr[:, 1], arr[:, 2])
