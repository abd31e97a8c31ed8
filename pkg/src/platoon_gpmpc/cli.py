"""``platoon-gpmpc`` command line: datagen, train, simulate, bench, report.

Exit codes: 0 on success, 1 for usage and input errors, 2 for numeric
failures (non-PD matrices, diverged training, unsolvable QPs).
"""

from __future__ import annotations

import argparse
import dataclasses
import csv
import io
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import config as config_mod
from .errors import (MalformedLog, NotPositiveDefinite, PlatoonError, SolverFailure,
                     TrainingDiverged)
from .sparse import InducingOptions, SparseGpModel

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
NUMERIC_ERRORS = (NotPositiveDefinite, TrainingDiverged, SolverFailure, ArithmeticError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def provenance(cfg: config_mod.RunConfig, command: str, extra: dict | None = None) -> str:
    head = {"tool": "platoon-gpmpc", "version": __version__, "command": command}
    head.update(extra or {})
    return yaml.safe_dump(head, sort_keys=False) + "config:\n" + "".join(
        f"  {line}\n" for line in cfg.to_yaml().splitlines())


def _table(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _commented(text: str) -> str:
    return "".join(f"# {line}\n" for line in text.splitlines())


def _load_cfg(args, out_is_corpus: bool = False) -> config_mod.RunConfig:
    if args.config is None:
        cfg = config_mod.RunConfig(base_dir=Path.cwd())
    else:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            cfg = config_mod.load(path)
        except (ValueError, TypeError, yaml.YAMLError) as exc:
            raise UsageError(f"bad config {path}: {exc}") from exc
    out = getattr(args, "out", None)
    if out_is_corpus:
        return cfg.with_overrides(corpus=out)
    return cfg.with_overrides(mode=getattr(args, "mode", None), seed=getattr(args, "seed", None),
                              out=out)


def _load_sparse(cfg) -> SparseGpModel:
    path = cfg.resolve("models") / "sparse_gp.json"
    if not path.is_file():
        raise UsageError(f"sparse model not found at {path}; run `train` first")
    return SparseGpModel.load(path)


# ----------------------------------------------------------------------------
# subcommands

def cmd_datagen(args) -> int:
    from .datagen import make_corpus

    cfg = _load_cfg(args, out_is_corpus=True)
    out = cfg.resolve("corpus")
    corpus_cfg = cfg.corpus
    if args.seed is not None:
        corpus_cfg = dataclasses.replace(corpus_cfg, seed=args.seed)
        cfg = dataclasses.replace(cfg, corpus=corpus_cfg)
    manifest = make_corpus(out, corpus_cfg, provenance(cfg, "datagen"))
    print(f"wrote {corpus_cfg.n_sets} series and {manifest}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .pipeline import evaluate, load_corpus, prediction_timing, train_models, training_dataset

    cfg = _load_cfg(args)
    corpus_dir = cfg.resolve("corpus")
    if not (corpus_dir / "manifest.yaml").is_file():
        raise UsageError(f"no corpus at {corpus_dir}; run `datagen` first")
    corpus = load_corpus(corpus_dir)
    data = training_dataset(corpus)
    g = cfg.gp
    full, sparse = train_models(
        data, restarts=g.restarts, m_tilde=g.m_tilde, seed=g.seed, max_iter=g.max_iter, tol=g.tol,
        inducing=InducingOptions(max_iter=g.inducing_max_iter, init=g.inducing_init, seed=g.seed))
    out = Path(args.out) if args.out else cfg.resolve("models")
    out.mkdir(parents=True, exist_ok=True)
    prov = {"provenance": provenance(cfg, "train", {"training_points": len(data)})}
    full.save(out / "full_gp.json", prov)
    sparse.save(out / "sparse_gp.json", prov)

    rows = evaluate(corpus, full, sparse)
    mean = {"set": "mean", **{k: float(np.mean([r[k] for r in rows])) for k in ("arx", "arx_gp", "arx_sparse")}}
    rows.append(mean)
    ordered = mean["arx_gp"] < mean["arx_sparse"] < mean["arx"]
    rng = np.random.default_rng(g.seed)
    queries = data.inputs[rng.choice(len(data), size=min(200, len(data)), replace=False)]
    timing = prediction_timing(full, sparse, queries)
    text = _commented(provenance(cfg, "train", {"training_points": len(data)}))
    text += _table([{k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()} for r in rows])
    text += _commented(
        f"ordering arx_gp < arx_sparse < arx: {'ok' if ordered else 'DEVIATION'}\n"
        f"prediction time full {timing['full']:.3e} s, sparse {timing['sparse']:.3e} s, "
        f"speed-up {timing['full'] / timing['sparse']:.1f}x")
    (out / "train_report.csv").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .pipeline import closed_loop

    cfg = _load_cfg(args)
    sparse = _load_sparse(cfg)
    out = cfg.resolve("out")
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.scenario.seed
    head = provenance(cfg, "simulate", {"mode": cfg.mpc.mode, "seed": seed})
    log = closed_loop(cfg.scenario, cfg.mpc, sparse, seed=seed, header=head)
    stem = f"trajectory_{cfg.mpc.mode}_seed{seed}"
    log.write(out / f"{stem}.csv")
    summary = {"mode": cfg.mpc.mode, "seed": seed, **log.summary(),
               "softened_steps": int(sum(s.softened for s in log.solutions))}
    text = _commented(head) + yaml.safe_dump(summary, sort_keys=False)
    (out / f"{stem}_summary.yaml").write_text(text)
    print(yaml.safe_dump(summary, sort_keys=False), end="")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .pipeline import closed_loop

    cfg = _load_cfg(args)
    sparse = _load_sparse(cfg)
    out = cfg.resolve("out")
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for mode in ("nominal", "gp"):
        mpc = dataclasses.replace(cfg.mpc, mode=mode)
        log = closed_loop(cfg.scenario, mpc, sparse, seed=cfg.scenario.seed)
        t = np.array([r.solve_time for r in log.rows])
        rows.append({"mode": mode, "steps": t.size, "mean_s": f"{t.mean():.6f}",
                     "max_s": f"{t.max():.6f}", "std_s": f"{t.std():.6f}",
                     "realtime_4hz": bool(t.mean() < cfg.scenario.dt)})
    ratio = float(rows[1]["mean_s"]) / float(rows[0]["mean_s"])
    text = _commented(provenance(cfg, "bench", {"seed": cfg.scenario.seed}))
    text += _commented("timing covers one full controller step: GP cache build plus QP solve;\n"
                       "modes run sequentially in one process")
    text += _table(rows) + _commented(f"gp/nominal mean ratio: {ratio:.3f}")
    (out / "bench.csv").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import write_report

    out = Path(args.out) if args.out else Path(args.log).resolve().parent
    paths = write_report(args.log, out)
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="platoon-gpmpc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, mode=False):
        p.add_argument("--config", metavar="PATH", help="YAML run configuration")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", metavar="DIR", help="output directory")
        if mode:
            p.add_argument("--mode", choices=("nominal", "gp"), help="controller variant")

    common(sub.add_parser("datagen", help="generate the synthetic driver corpus"))
    common(sub.add_parser("train", help="fit full and sparse GP discrepancy models"))
    common(sub.add_parser("simulate", help="run one closed-loop scenario"), mode=True)
    common(sub.add_parser("bench", help="time both controllers on the scenario"))
    rep = sub.add_parser("report", help="plot a trajectory log as SVG")
    rep.add_argument("log", metavar="LOG")
    rep.add_argument("--out", metavar="DIR")
    return parser


COMMANDS = {"datagen": cmd_datagen, "train": cmd_train, "simulate": cmd_simulate,
            "bench": cmd_bench, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"platoon-gpmpc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"platoon-gpmpc: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MalformedLog, OSError, PlatoonError, ValueError) as exc:
        print(f"platoon-gpmpc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
