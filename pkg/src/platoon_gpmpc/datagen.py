"""Synthetic driver-following corpus.

Stands in for human-in-the-loop recordings: a lead vehicle moves through
plateaus at 10/15/20 m/s and a ground-truth driver follows it with a
delayed second-order velocity response plus a smooth distortion and noise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.signal
import yaml

from .hv_model import ARX_ORDER, VelocitySeries, stride_indices, write_series

V_MIN, V_MAX = 0.0, 35.0


@dataclass
class DriverResponseConfig:
    gain: float = 1.0
    zero_tc: float = 0.5  # T_z, s
    damping: float = 0.7  # gamma
    natural_tc: float = 1.0  # T_w, s
    delay: float = 0.75  # T_d, s
    noise_std: float = 0.1  # m/s
    nonlinearity: float = 0.3  # m/s

    def __post_init__(self):
        if self.natural_tc <= 0:
            raise ValueError("natural time constant must be positive")
        if self.delay < 0:
            raise ValueError("delay must be non-negative")

    def delay_steps(self, dt: float) -> int:
        n = int(round(self.delay / dt))
        if abs(n * dt - self.delay) > 1e-9:
            raise ValueError(f"delay {self.delay} s is not a multiple of the {dt} s sample time")
        return n


@dataclass
class ScenarioProfile:
    duration: float = 400.0  # s
    plateaus: tuple[float, ...] = (10.0, 15.0, 20.0)
    plateau_time: tuple[float, float] = (60.0, 120.0)  # min/max hold, s
    ramp_accel: float = 1.5  # m/s^2, must not exceed a_max
    seed: int = 0

    def __post_init__(self):
        if self.plateau_time[0] < 20.0:
            raise ValueError("plateaus must last at least 20 s")


def generate_lead_profile(p: ScenarioProfile, dt: float = 0.25) -> np.ndarray:
    """Piecewise-constant lead velocity with rate-limited ramps, from rest.

    Plateau values cycle through random permutations of ``p.plateaus`` so
    every value appears; the order depends on ``p.seed``.
    """
    rng = np.random.default_rng(p.seed)
    n = int(round(p.duration / dt))
    target = np.empty(n)
    k = 0
    order: list[float] = []
    while k < n:
        if not order:
            order = list(rng.permutation(p.plateaus))
        value = order.pop(0)
        hold = rng.uniform(*p.plateau_time)
        steps = int(round(hold / dt))
        target[k:k + steps] = value
        k += steps
    # rate limiter turns the step targets into ramps
    out = np.empty(n)
    v = 0.0
    dv = p.ramp_accel * dt
    for i in range(n):
        v += float(np.clip(target[i] - v, -dv, dv))
        out[i] = v
    return out


def discretize_driver(cfg: DriverResponseConfig, dt: float):
    """ZOH discretisation of ``K (1 + Tz s) / (1 + 2 gamma Tw s + Tw^2 s^2)``."""
    num = [cfg.gain * cfg.zero_tc, cfg.gain]
    den = [cfg.natural_tc ** 2, 2.0 * cfg.damping * cfg.natural_tc, 1.0]
    bd, ad, _ = scipy.signal.cont2discrete((num, den), dt, method="zoh")
    return np.ravel(bd), np.ravel(ad)


def simulate_ground_truth_driver(cfg: DriverResponseConfig, lead, dt: float = 0.25,
                                 seed: int = 0) -> np.ndarray:
    lead = np.asarray(lead, dtype=float)
    if lead.size == 0:
        raise ValueError("lead series is empty")
    bd, ad = discretize_driver(cfg, dt)
    nd = cfg.delay_steps(dt)
    delayed = np.concatenate([np.full(nd, lead[0]), lead[:lead.size - nd]]) if nd else lead
    zi = scipy.signal.lfilter_zi(bd, ad) * lead[0]
    y, _ = scipy.signal.lfilter(bd, ad, delayed, zi=zi)
    v = y + cfg.nonlinearity * np.sin(y / 5.0)
    if cfg.noise_std > 0:
        v = v + cfg.noise_std * np.random.default_rng(seed).standard_normal(v.shape)
    return np.clip(v, V_MIN, V_MAX)


@dataclass
class CorpusConfig:
    n_sets: int = 9
    split: tuple[int, int] = (6, 3)
    dt: float = 0.25
    seed: int = 0
    train_fraction: float = 0.2
    profile: ScenarioProfile = field(default_factory=ScenarioProfile)
    driver: DriverResponseConfig = field(default_factory=DriverResponseConfig)

    def __post_init__(self):
        if sum(self.split) != self.n_sets:
            raise ValueError(f"split {self.split} does not add up to {self.n_sets} sets")


def set_seed(base: int, i: int) -> int:
    return 1000 * base + i


def make_corpus(out_dir, cfg: CorpusConfig | None = None, provenance: str = "") -> Path:
    """Write ``cfg.n_sets`` series files and a ``manifest.yaml``.

    The first ``split[0]`` sets are training sources; for each of them the
    manifest lists the evenly strided discrepancy-sample indices used for GP
    training.
    """
    cfg = cfg or CorpusConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sets = []
    for i in range(cfg.n_sets):
        seed = set_seed(cfg.seed, i)
        prof = ScenarioProfile(**{**asdict(cfg.profile), "seed": seed})
        lead = generate_lead_profile(prof, cfg.dt)
        hv = simulate_ground_truth_driver(cfg.driver, lead, cfg.dt, seed=seed)
        t = np.arange(lead.size) * cfg.dt
        name = f"set_{i:02d}.csv"
        write_series(out / name, VelocitySeries(t, hv, lead),
                     preamble=f"seed: {seed}\n{provenance}".rstrip())
        role = "train" if i < cfg.split[0] else "test"
        entry = {"file": name, "role": role, "seed": seed, "samples": int(lead.size)}
        if role == "train":
            idx = stride_indices(lead.size - ARX_ORDER, cfg.train_fraction)
            entry["train_indices"] = idx.tolist()
        sets.append(entry)
    manifest = {
        "dt": cfg.dt,
        "train_fraction": cfg.train_fraction,
        "corpus_seed": cfg.seed,
        "driver": asdict(cfg.driver),
        "sets": sets,
    }
    text = yaml.safe_dump(manifest, sort_keys=False, default_flow_style=None, width=100)
    if provenance:
        text = "".join(f"# {line}\n" for line in provenance.splitlines()) + text
    (out / "manifest.yaml").write_text(text)
    return out / "manifest.yaml"


def load_manifest(path) -> dict:
    return yaml.safe_load(Path(path).read_text())
