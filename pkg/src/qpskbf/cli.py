"""Command-line front end: ``qpskbf {dataset,train,solve,bench,pattern}``.

Settings resolve as built-in defaults, then the ``--config`` JSON file, then
explicit flags.  Exit status is 0 on success, 1 on a runtime failure and 2
on a usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .array_model import Scenario, ScenarioDistribution, random_scenario, uca_geometry
from .beamformers import MAX_ORACLE_N, ObjectiveParams
from .bench import ALL_METHODS, BenchConfig, GridSpec, MethodId, export_beampattern_grid, run_trial
from .bench import run_trials, summarize, write_trials_csv
from .ml_policy import (TrainingConfig, TrainingDataset, generate_dataset, heldout_accuracy,
                        load_model, save_model, train_gbdt)

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
METHOD_NAMES = [m.value for m in ALL_METHODS]


class UsageError(Exception):
    pass


def available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


@dataclass
class CliConfig:
    n: int = 4
    seed: int = 0
    alpha: float = 0.01
    loading_scale: float = 1e-6
    greedy_samples: int = 100
    sweeps: int = 20
    refine_sweeps: int = 3
    grid_step: float = 2.0
    distribution: dict = field(default_factory=lambda: ScenarioDistribution().to_dict())
    count: int = 1000
    rounds: int = 150
    depth: int = 5
    lr: float = 0.1
    min_leaf: int = 5
    holdout_fraction: float = 0.2
    trials: int = 50
    methods: list = field(default_factory=lambda: ["capon", "naive", "oracle", "greedy",
                                                   "coord_descent"])
    method: str = "oracle"
    dataset: str | None = None
    model: str | None = None
    out: str | None = None
    out_dir: str | None = None
    scenario_json: str | None = None

    def echo(self) -> dict:
        """Effective settings for provenance; output destinations are left out so an
        artifact's bytes do not depend on where it was written."""
        d = asdict(self)
        for key in ("out", "out_dir"):
            d.pop(key)
        return d

    @property
    def params(self) -> ObjectiveParams:
        return ObjectiveParams(self.alpha, self.loading_scale)

    @property
    def scenario_distribution(self) -> ScenarioDistribution:
        return ScenarioDistribution.from_dict(self.distribution)


def merge_config(config_path: str | None, overrides: dict) -> CliConfig:
    """defaults <- config file <- flags (flags given as non-None overrides)."""
    cfg = CliConfig()
    names = {f.name for f in fields(CliConfig)}
    if config_path:
        try:
            data = json.loads(Path(config_path).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config {config_path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {config_path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError(f"config {config_path} must hold a JSON object")
        unknown = sorted(set(data) - names)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        for key, value in data.items():
            if key == "distribution":
                value = {**cfg.distribution, **value}
            setattr(cfg, key, value)
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    try:
        cfg.scenario_distribution
        cfg.params
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    bad = [m for m in cfg.methods if m not in METHOD_NAMES]
    if bad or cfg.method not in METHOD_NAMES:
        raise UsageError(f"unknown method(s) {bad or [cfg.method]}; choose from {METHOD_NAMES}")
    return cfg


def _provenance(cfg: CliConfig, command: str) -> dict:
    return {"tool_version": __version__, "command": command, "config": cfg.echo()}


def _load_scenario(cfg: CliConfig) -> Scenario:
    if cfg.scenario_json:
        text = cfg.scenario_json
        if not text.lstrip().startswith("{"):
            text = Path(text).read_text()
        return Scenario.from_json(text)
    return random_scenario(cfg.scenario_distribution, cfg.seed)


def _load_ml(cfg: CliConfig, methods):
    if MethodId.GBDT_REFINE.value not in methods:
        return None
    if not cfg.model:
        raise UsageError("gbdt_refine needs a trained model (--model)")
    return load_model(cfg.model, cfg.n)


def cmd_dataset(cfg: CliConfig, threads: int) -> int:
    if cfg.n > MAX_ORACLE_N:
        raise UsageError(f"--n {cfg.n} refused: oracle labelling costs 4^(N-1) = "
                         f"{4 ** (cfg.n - 1)} evaluations per row (limit N <= {MAX_ORACLE_N})")
    if not cfg.out:
        raise UsageError("dataset needs --out")
    ds = generate_dataset(cfg.scenario_distribution, cfg.count, uca_geometry(cfg.n), cfg.params,
                          cfg.seed, workers=threads)
    ds.provenance.update(_provenance(cfg, "dataset"))
    ds.save_jsonl(cfg.out)
    print(f"wrote {len(ds)} rows (N={cfg.n}) to {cfg.out}")
    print("label distribution (fraction of rows per symbol 0/1/2/3):")
    for a in range(cfg.n):
        frac = np.bincount(ds.labels[:, a], minlength=4) / len(ds)
        print(f"  antenna {a:2d}: " + " ".join(f"{x:6.3f}" for x in frac))
    return EXIT_OK


def cmd_train(cfg: CliConfig, threads: int) -> int:
    if not cfg.dataset or not cfg.out:
        raise UsageError("train needs --dataset and --out")
    ds = TrainingDataset.load_jsonl(cfg.dataset)
    n_hold = int(len(ds) * cfg.holdout_fraction)
    train = ds.subset(slice(0, len(ds) - n_hold))
    tcfg = TrainingConfig(cfg.rounds, cfg.depth, cfg.lr, cfg.min_leaf, cfg.seed)
    model = train_gbdt(train, tcfg, threads=threads)
    echo = cfg.echo()
    echo["n"] = ds.n_antennas
    model.metadata["provenance"] = {"tool_version": __version__, "command": "train", "config": echo,
                                    "holdout_rows": n_hold}
    save_model(model, cfg.out)
    print(f"trained N={ds.n_antennas} model on {len(train)} rows, {tcfg.rounds} rounds -> {cfg.out}")
    if n_hold == 0:
        print("no held-out rows; accuracy not reported")
        return EXIT_OK
    acc = heldout_accuracy(model, ds.subset(slice(len(ds) - n_hold, len(ds))))
    print(f"held-out accuracy over {n_hold} rows:")
    for a, v in enumerate(acc):
        print(f"  antenna {a:2d}: {100 * v:6.2f}%")
    return EXIT_OK


def cmd_solve(cfg: CliConfig, threads: int) -> int:
    sc = _load_scenario(cfg)
    geom = uca_geometry(cfg.n)
    ml = _load_ml(cfg, [cfg.method])
    res = run_trial(geom, sc, [cfg.method], cfg.params, ml, cfg.greedy_samples, cfg.seed,
                    cfg.sweeps, cfg.refine_sweeps, GridSpec(cfg.grid_step))
    rec = res.records[cfg.method]
    out = {
        "method": cfg.method,
        "symbols": rec.symbols,
        "weights": rec.weights,
        "objective": rec.objective,
        "sat_gain_db": rec.sat_gain_db,
        "intf_gain_db": rec.intf_gain_db,
        "latency_ns": rec.latency_ns,
        "scenario": sc.to_dict(),
        **_provenance(cfg, "solve"),
    }
    if cfg.method == MethodId.CAPON.value:
        err = rec.extra["distortionless_error"]
        out["distortionless_error"] = err
        out["distortionless_ok"] = bool(err <= 1e-9)
    if "raw_objective" in rec.extra:
        out["raw_symbols"] = rec.extra["raw_symbols"]
        out["raw_objective"] = rec.extra["raw_objective"]
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_bench(cfg: CliConfig, threads: int) -> int:
    ml = _load_ml(cfg, cfg.methods)
    bcfg = BenchConfig(n=cfg.n, trials=cfg.trials, distribution=cfg.scenario_distribution,
                       methods=tuple(cfg.methods), greedy_samples=cfg.greedy_samples,
                       sweeps=cfg.sweeps, refine_sweeps=cfg.refine_sweeps, model_path=cfg.model,
                       master_seed=cfg.seed, alpha=cfg.alpha, loading_scale=cfg.loading_scale,
                       grid_step=cfg.grid_step, out_dir=cfg.out_dir)
    results = run_trials(bcfg, threads, ml)
    summary = summarize(bcfg, results)
    print(summary.table())
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        doc = summary.to_dict()
        doc["provenance"] = _provenance(cfg, "bench")
        (out / "summary.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
        write_trials_csv(results, out / "trials.csv")
        print(f"wrote {out / 'summary.json'} and {out / 'trials.csv'}")
    return EXIT_OK


def cmd_pattern(cfg: CliConfig, threads: int) -> int:
    if not cfg.out:
        raise UsageError("pattern needs --out")
    sc = _load_scenario(cfg)
    geom = uca_geometry(cfg.n)
    ml = _load_ml(cfg, [cfg.method])
    grid = GridSpec(cfg.grid_step)
    res = run_trial(geom, sc, [cfg.method], cfg.params, ml, cfg.greedy_samples, cfg.seed,
                    cfg.sweeps, cfg.refine_sweeps, grid)
    rec = res.records[cfg.method]
    w = np.array([complex(re, im) for re, im in rec.weights])
    rows = export_beampattern_grid(w, geom, grid, cfg.out)
    meta = {"scenario": sc.to_dict(), "method": cfg.method, "symbols": rec.symbols,
            "weights": rec.weights, "rows": rows, **_provenance(cfg, "pattern")}
    Path(str(cfg.out) + ".json").write_text(json.dumps(meta, indent=2))
    print(f"wrote {rows} grid rows to {cfg.out}")
    return EXIT_OK


COMMANDS = {"dataset": cmd_dataset, "train": cmd_train, "solve": cmd_solve,
            "bench": cmd_bench, "pattern": cmd_pattern}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with CliConfig keys")
    common.add_argument("--threads", type=int, default=None,
                        help="worker cap (default: available cores)")
    common.add_argument("--n", type=int, help="number of antennas")
    common.add_argument("--seed", type=int)
    common.add_argument("--alpha", type=float)
    common.add_argument("--loading-scale", type=float)
    common.add_argument("--greedy-samples", type=int)
    common.add_argument("--sweeps", type=int, help="coordinate-descent sweep cap")
    common.add_argument("--refine-sweeps", type=int)
    common.add_argument("--grid-step", type=float)
    common.add_argument("--model", help="trained GBDT model (JSON)")

    p = argparse.ArgumentParser(prog="qpskbf", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("dataset", parents=[common], help="oracle-labelled training rows")
    s.add_argument("--count", type=int)
    s.add_argument("--out")

    s = sub.add_parser("train", parents=[common], help="fit per-antenna GBDT classifiers")
    s.add_argument("--dataset")
    s.add_argument("--out")
    s.add_argument("--rounds", type=int)
    s.add_argument("--depth", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--min-leaf", type=int)

    s = sub.add_parser("solve", parents=[common], help="solve one scenario, print JSON")
    s.add_argument("--method", choices=METHOD_NAMES)
    s.add_argument("--scenario-json", help="scenario JSON file or inline JSON object")

    s = sub.add_parser("bench", parents=[common], help="Monte-Carlo benchmark")
    s.add_argument("--out-dir")
    s.add_argument("--methods", help="comma-separated method list")
    s.add_argument("--trials", type=int)

    s = sub.add_parser("pattern", parents=[common], help="export a beampattern grid CSV")
    s.add_argument("--method", choices=METHOD_NAMES)
    s.add_argument("--scenario-json", help="scenario JSON file or inline JSON object")
    s.add_argument("--out")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on bad flags
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "threads")}
    if isinstance(overrides.get("methods"), str):
        overrides["methods"] = [m.strip() for m in overrides["methods"].split(",") if m.strip()]
    threads = args.threads if args.threads is not None else available_cores()
    try:
        if threads < 1:
            raise UsageError("--threads must be >= 1")
        cfg = merge_config(args.config, overrides)
        return COMMANDS[args.command](cfg, threads)
    except UsageError as exc:
        print(f"qpskbf {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failure: report and exit 1
        print(f"qpskbf {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
