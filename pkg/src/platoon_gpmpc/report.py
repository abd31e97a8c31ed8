"""Standalone SVG plots of a closed-loop trajectory log."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import yaml  # noqa: E402

from .errors import MalformedLog  # noqa: E402
from .platoon import read_log  # noqa: E402

PLOTS = ("velocity", "position", "distance")


def _header_config(header: str) -> dict:
    try:
        doc = yaml.safe_load(header) or {}
    except yaml.YAMLError:
        return {}
    return doc.get("config", {}) if isinstance(doc, dict) else {}


def _ref_curve(t: np.ndarray, schedule) -> np.ndarray | None:
    if not schedule:
        return None
    out = np.full(t.shape, float(schedule[0][1]))
    for start, value in schedule:
        out[t + 1e-9 >= start] = value
    return out


def _figures(cols, data, header):
    col = {name: data[:, i] for i, name in enumerate(cols)}
    t = col["t"]
    n_av = sum(1 for c in cols if c.startswith("p_av"))
    cfg = _header_config(header)
    safe_gap = float(cfg.get("mpc", {}).get("safe_gap", 20.0))
    mode = cfg.get("mpc", {}).get("mode")

    fig_v, ax = plt.subplots(figsize=(7, 3.2))
    ref = _ref_curve(t, cfg.get("scenario", {}).get("v_ref_schedule"))
    if ref is not None:
        ax.plot(t, ref, "k--", lw=1, label="reference")
    for n in range(1, n_av + 1):
        ax.plot(t, col[f"v_av{n}"], label=f"AV {n}")
    ax.plot(t, col["v_hv"], label="HV")
    ax.set(xlabel="time [s]", ylabel="velocity [m/s]", title="Velocity tracking")
    ax.legend(loc="best", fontsize=8)

    fig_p, ax = plt.subplots(figsize=(7, 3.2))
    for n in range(1, n_av + 1):
        ax.plot(t, col[f"p_av{n}"], label=f"AV {n}")
    ax.plot(t, col["p_hv"], label="HV")
    ax.set(xlabel="time [s]", ylabel="position [m]", title="Vehicle positions")
    ax.legend(loc="best", fontsize=8)

    fig_d, ax = plt.subplots(figsize=(7, 3.2))
    for n in range(1, n_av):
        ax.plot(t, col[f"p_av{n}"] - col[f"p_av{n + 1}"], label=f"AV {n} - AV {n + 1}")
    ax.plot(t, col["dist_av_hv"], label=f"AV {n_av} - HV")
    ax.axhline(safe_gap, color="k", lw=1, ls=":", label="safe gap")
    if mode == "gp" or np.any(np.abs(col["bound"] - safe_gap) > 1e-12):
        # bound row k applies to the gap at k + 1
        dt = t[1] - t[0] if t.size > 1 else 0.0
        ax.plot(t + dt, col["bound"], color="C3", lw=1, ls="--", label="tightened bound")
    ax.set(xlabel="time [s]", ylabel="distance [m]", title="Inter-vehicle distances")
    ax.legend(loc="best", fontsize=8)
    return fig_v, fig_p, fig_d


def write_report(log_path, out_dir) -> list[Path]:
    """Render the three plots for ``log_path`` into ``out_dir``.

    Nothing is written unless the log parses and every figure renders.

    Raises
    ------
    MalformedLog
        If the log is empty, truncated or has unexpected columns.
    """
    cols, data, header = read_log(log_path)
    needed = {"t", "p_hv", "v_hv", "dist_av_hv", "bound", "p_av1", "v_av1"}
    if not needed <= set(cols):
        raise MalformedLog(f"{log_path}: missing columns {sorted(needed - set(cols))}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"Date": None, "Description": header, "Title": Path(log_path).name}
    figs = _figures(cols, data, header)
    staged = []
    try:
        with plt.rc_context({"svg.hashsalt": "platoon-gpmpc"}):
            for fig, name in zip(figs, PLOTS):
                fd, tmp = tempfile.mkstemp(suffix=".svg", dir=out_dir)
                os.close(fd)
                staged.append((Path(tmp), out_dir / f"{Path(log_path).stem}_{name}.svg"))
                fig.savefig(tmp, format="svg", metadata=meta, bbox_inches="tight")
    except Exception:
        for tmp, _ in staged:
            tmp.unlink(missing_ok=True)
        raise
    finally:
        for fig in figs:
            plt.close(fig)
    for tmp, final in staged:
        tmp.chmod(0o644)
        tmp.replace(final)
    return [final for _, final in staged]
