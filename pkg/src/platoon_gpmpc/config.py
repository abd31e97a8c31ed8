"""YAML run configuration: one file drives corpus, training and simulation."""

from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .datagen import CorpusConfig, DriverResponseConfig, ScenarioProfile
from .mpc import MpcConfig
from .platoon import ScenarioConfig


@dataclass
class GpTrainingConfig:
    m_tilde: int = 20
    restarts: int = 5
    max_iter: int = 200
    tol: float = 1e-5
    seed: int = 0
    inducing_max_iter: int = 200
    inducing_init: str = "stride"


@dataclass
class Paths:
    corpus: str = "corpus"
    models: str = "models"
    out: str = "out"


@dataclass
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    gp: GpTrainingConfig = field(default_factory=GpTrainingConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    base_dir: Path = field(default=Path("."), repr=False)

    def resolve(self, which: str) -> Path:
        p = Path(getattr(self.paths, which))
        return p if p.is_absolute() else self.base_dir / p

    def with_overrides(self, mode: str | None = None, seed: int | None = None,
                       out: str | None = None, corpus: str | None = None) -> "RunConfig":
        cfg = self
        if corpus is not None:
            cfg = dataclasses.replace(cfg, paths=dataclasses.replace(cfg.paths, corpus=str(Path(corpus).resolve())))
        if mode is not None:
            cfg = dataclasses.replace(cfg, mpc=dataclasses.replace(cfg.mpc, mode=mode))
        if seed is not None:
            cfg = dataclasses.replace(cfg, scenario=dataclasses.replace(cfg.scenario, seed=seed))
        if out is not None:
            cfg = dataclasses.replace(cfg, paths=dataclasses.replace(cfg.paths, out=str(Path(out).resolve())))
        return cfg

    def to_dict(self) -> dict:
        d = {k: asdict(getattr(self, k)) for k in ("paths", "corpus", "gp", "scenario", "mpc")}
        # tuples become lists so the dump stays plain YAML
        return yaml.safe_load(yaml.safe_dump(_plain(d)))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None, width=100)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data: dict | None):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    for key in ("split", "plateaus", "plateau_time"):
        if key in data and isinstance(data[key], list):
            data[key] = tuple(data[key])
    if "v_ref_schedule" in data:
        data["v_ref_schedule"] = tuple(tuple(x) for x in data["v_ref_schedule"])
    return cls(**data)


def from_dict(d: dict, base_dir=".") -> RunConfig:
    d = dict(d or {})
    unknown = set(d) - {"paths", "corpus", "gp", "scenario", "mpc"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    corpus = dict(d.get("corpus") or {})
    profile = _build(ScenarioProfile, corpus.pop("profile", None))
    driver = _build(DriverResponseConfig, corpus.pop("driver", None))
    corpus_cfg = _build(CorpusConfig, {**corpus, "profile": profile, "driver": driver})
    return RunConfig(
        paths=_build(Paths, d.get("paths")),
        corpus=corpus_cfg,
        gp=_build(GpTrainingConfig, d.get("gp")),
        scenario=_build(ScenarioConfig, d.get("scenario")),
        mpc=_build(MpcConfig, d.get("mpc")),
        base_dir=Path(base_dir),
    )


def load(path) -> RunConfig:
    path = Path(path)
    return from_dict(yaml.safe_load(path.read_text()), base_dir=path.resolve().parent)
