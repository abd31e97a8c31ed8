"""Training, evaluation and closed-loop runs shared by the CLI and the tests."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datagen import load_manifest
from .gp import GpDataset, GpModel, TrainerOptions, fit
from .hv_model import (PUBLISHED_ARX, ArxCoefficients, HvModel, build_discrepancy_dataset,
                       one_step_predictions, read_series, rmse)
from .mpc import MpcConfig, MpcController
from .platoon import ScenarioConfig, TrajectoryLog, run_scenario
from .sparse import InducingOptions, SparseGpModel, sparsify


@dataclass
class Corpus:
    train: list  # VelocitySeries
    test: list
    train_indices: list[np.ndarray]
    test_names: list[str]


def load_corpus(corpus_dir) -> Corpus:
    corpus_dir = Path(corpus_dir)
    manifest = load_manifest(corpus_dir / "manifest.yaml")
    train, test, idx, names = [], [], [], []
    for entry in manifest["sets"]:
        series = read_series(corpus_dir / entry["file"])
        if entry["role"] == "train":
            train.append(series)
            idx.append(np.asarray(entry["train_indices"], dtype=int))
        else:
            test.append(series)
            names.append(entry["file"])
    return Corpus(train, test, idx, names)


def training_dataset(corpus: Corpus, arx: ArxCoefficients = PUBLISHED_ARX) -> GpDataset:
    parts = [build_discrepancy_dataset(s.v_hv, s.v_lead, arx).subset(i)
             for s, i in zip(corpus.train, corpus.train_indices)]
    return GpDataset(np.vstack([p.inputs for p in parts]), np.concatenate([p.targets for p in parts]))


def train_models(data: GpDataset, restarts: int = 5, m_tilde: int = 20, seed: int = 0,
                 max_iter: int = 200, tol: float = 1e-5,
                 inducing: InducingOptions | None = None) -> tuple[GpModel, SparseGpModel]:
    full = fit(data, opts=TrainerOptions(restarts=restarts, max_iter=max_iter, tol=tol, seed=seed))
    return full, sparsify(full, m_tilde, inducing)


def evaluate(corpus: Corpus, full: GpModel, sparse: SparseGpModel,
             arx: ArxCoefficients = PUBLISHED_ARX) -> list[dict]:
    """One-step RMSE of ARX, ARX+GP and sparse ARX+GP on every test set."""
    rows = []
    for name, s in zip(corpus.test_names, corpus.test):
        measured, arx_pred, gp_pred, _ = one_step_predictions(s.v_hv, s.v_lead, arx, HvModel(arx, full))
        _, _, sp_pred, _ = one_step_predictions(s.v_hv, s.v_lead, arx, HvModel(arx, sparse))
        rows.append({"set": name, "arx": rmse(arx_pred, measured), "arx_gp": rmse(gp_pred, measured),
                     "arx_sparse": rmse(sp_pred, measured)})
    return rows


def prediction_timing(full, sparse, queries: np.ndarray, repeats: int = 3) -> dict:
    """Mean wall time per single-point prediction for both models."""
    out = {}
    for name, model in (("full", full), ("sparse", sparse)):
        best = np.inf
        for _ in range(repeats):
            start = time.perf_counter()
            for x in queries:
                model.predict(x)
            best = min(best, (time.perf_counter() - start) / len(queries))
        out[name] = best
    return out


def closed_loop(scenario: ScenarioConfig, mpc: MpcConfig, sparse, seed: int | None = None,
                arx: ArxCoefficients = PUBLISHED_ARX, header: str = "") -> TrajectoryLog:
    """Run the braking-style scenario with an ARX+GP plant.

    Plant and GP-MPC share the same discrepancy model; nominal MPC sees only
    the ARX part.
    """
    plant = HvModel(arx, sparse, observation_noise=True)
    controller = MpcController(mpc, plant)
    return run_scenario(scenario, controller, plant, mpc.horizon, seed=seed, header=header)
