"""Config-driven experiment runner.

Usage::

    fedism run experiment.json [--output-dir DIR] [--workers N] [--seed-override S]
    fedism compare runs_a/summary.csv runs_b/summary.csv

Exit codes: 0 success, 2 configuration error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import json
import logging
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .engine import FederationConfig, run
from .errors import ConfigError, DataError, DivergenceError, FedismError, PartitionError, SchemaError
from .model import Classifier, ModelSpec, save_params
from .report import (
    RunManifest,
    read_eval,
    read_table,
    summarize,
    write_eval,
    write_manifest,
    write_rounds,
    write_summary,
)
from .strategy import (
    DEFAULT_BETA,
    DEFAULT_Q,
    DEFAULT_RHO_MAX,
    DEFAULT_TAU,
    DEFAULT_WEIGHT_FLOOR,
    PRESET_PARAMS,
    AggRule,
    RhoSchedule,
    StrategyConfig,
    preset,
    strategy_to_dict,
)
from .synthdata import (
    CorruptionSpec,
    Dataset,
    DatasetSpec,
    PartitionSpec,
    generate,
    load_csv,
    make_test_pair,
    partition,
    train_test_split,
)

log = logging.getLogger("fedism")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3
REQUIRED = object()


@dataclass(frozen=True)
class DataSection:
    synthetic: DatasetSpec | None = None
    csv: str | None = None
    test_csv: str | None = None
    test_fraction: float = 0.2
    split_seed: int = 0


@dataclass(frozen=True)
class NamedStrategy:
    name: str
    config: StrategyConfig


@dataclass(frozen=True)
class RunSpec:
    data: DataSection
    partition: PartitionSpec
    model: ModelSpec
    federation: FederationConfig
    strategies: tuple[NamedStrategy, ...]
    seeds: tuple[int, ...]
    output_dir: str = "runs"
    summary_window: int = 5


# ---------------------------------------------------------------- parsing


def _check_type(value, kind, path):
    if kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        return float(value) if ok else _bad(path, "a number", value)
    if kind is int:
        return value if isinstance(value, int) and not isinstance(value, bool) else _bad(path, "an integer", value)
    if kind is bool:
        return value if isinstance(value, bool) else _bad(path, "true/false", value)
    if kind is str:
        return value if isinstance(value, str) else _bad(path, "a string", value)
    if kind is dict:
        return value if isinstance(value, dict) else _bad(path, "an object", value)
    if kind is list:
        return value if isinstance(value, list) else _bad(path, "a list", value)
    raise TypeError(kind)


def _bad(path, expected, value):
    raise ConfigError(f"{path}: expected {expected}, got {value!r}")


def _section(obj, path: str, schema: dict) -> dict:
    """Validate ``obj`` against ``{key: (type, default)}``; unknown keys are errors."""
    obj = _check_type(obj, dict, path or "<root>")
    for key in obj:
        if key not in schema:
            raise ConfigError(f"{path + '.' if path else ''}{key}: unknown key")
    out = {}
    for key, (kind, default) in schema.items():
        where = f"{path}.{key}" if path else key
        if key not in obj or obj[key] is None:
            if default is REQUIRED:
                raise ConfigError(f"{where}: required key missing")
            out[key] = default
        else:
            out[key] = _check_type(obj[key], kind, where)
    return out


def _strategy_defaults(obj) -> dict:
    return _section(
        obj or {},
        "strategy_defaults",
        {
            "rho_max": (float, DEFAULT_RHO_MAX),
            "tau": (float, DEFAULT_TAU),
            "rho_fixed": (float, DEFAULT_RHO_MAX),
            "q": (float, DEFAULT_Q),
            "beta": (float, DEFAULT_BETA),
            "weight_floor": (float, DEFAULT_WEIGHT_FLOOR),
            "gsam_alpha": (float, 0.0),
        },
    )


def _parse_strategy(entry, index: int, defaults: dict) -> NamedStrategy:
    path = f"strategies[{index}]"
    if isinstance(entry, str):
        return NamedStrategy(entry, preset(entry, **defaults))
    entry = _check_type(entry, dict, path)
    if "preset" in entry:
        schema = {"name": (str, None), "preset": (str, REQUIRED)}
        schema.update({k: (float, defaults[k]) for k in PRESET_PARAMS})
        sec = _section(entry, path, schema)
        try:
            cfg = preset(sec["preset"], **{k: sec[k] for k in PRESET_PARAMS})
        except ConfigError as exc:
            raise ConfigError(f"{path}.preset: {exc}") from None
        return NamedStrategy(sec["name"] or sec["preset"], cfg)

    sec = _section(
        entry,
        path,
        {
            "name": (str, REQUIRED),
            "local_optimizer": (str, REQUIRED),
            "schedule": (dict, REQUIRED),
            "agg": (dict, REQUIRED),
            "beta": (float, defaults["beta"]),
            "gsam_alpha": (float, defaults["gsam_alpha"]),
        },
    )
    sched = _section(
        sec["schedule"],
        f"{path}.schedule",
        {
            "kind": (str, REQUIRED),
            "rho_fixed": (float, 0.0),
            "rho_max": (float, defaults["rho_max"]),
            "tau": (float, defaults["tau"]),
        },
    )
    agg = _section(
        sec["agg"],
        f"{path}.agg",
        {"kind": (str, REQUIRED), "q": (float, defaults["q"]), "weight_floor": (float, defaults["weight_floor"])},
    )
    cfg = StrategyConfig(
        sec["local_optimizer"], RhoSchedule(**sched), AggRule(**agg), sec["beta"], sec["gsam_alpha"]
    )
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return NamedStrategy(sec["name"], cfg)


def parse_config_dict(doc: dict, base_dir: str | Path = ".") -> RunSpec:
    base_dir = Path(base_dir)
    top = _section(
        doc,
        "",
        {
            "dataset": (dict, REQUIRED),
            "partition": (dict, REQUIRED),
            "model": (dict, REQUIRED),
            "federation": (dict, REQUIRED),
            "strategy_defaults": (dict, None),
            "strategies": (list, REQUIRED),
            "seeds": (list, [0]),
            "output_dir": (str, "runs"),
            "summary_window": (int, 5),
        },
    )

    ds = _section(
        top["dataset"],
        "dataset",
        {
            "num_classes": (int, None),
            "feature_dim": (int, None),
            "samples_per_class": (int, None),
            "class_separation": (float, None),
            "seed": (int, 0),
            "csv": (str, None),
            "test_csv": (str, None),
            "test_fraction": (float, 0.2),
            "split_seed": (int, 0),
        },
    )
    synth_keys = ("num_classes", "feature_dim", "samples_per_class", "class_separation")
    if ds["csv"] is not None:
        extra = [k for k in synth_keys if ds[k] is not None]
        if extra:
            raise ConfigError(f"dataset.{extra[0]}: not allowed together with dataset.csv")
        synthetic = None
        csv_path = str(base_dir / ds["csv"])
        test_csv = str(base_dir / ds["test_csv"]) if ds["test_csv"] else None
    else:
        for k in synth_keys:
            if ds[k] is None:
                raise ConfigError(f"dataset.{k}: required key missing (or give dataset.csv)")
        if ds["test_csv"] is not None:
            raise ConfigError("dataset.test_csv: requires dataset.csv")
        synthetic = DatasetSpec(*(ds[k] for k in synth_keys), ds["seed"])
        synthetic.validate()
        csv_path = test_csv = None
    data = DataSection(synthetic, csv_path, test_csv, ds["test_fraction"], ds["split_seed"])

    part = _section(
        top["partition"],
        "partition",
        {
            "num_clients": (int, REQUIRED),
            "dirichlet_alpha": (float, 1.0),
            "corrupted_client_count": (int, 0),
            "corruption": (dict, {}),
            "seed": (int, 0),
        },
    )
    corr = _section(
        part["corruption"],
        "partition.corruption",
        {"kind": (str, "additive_gaussian"), "severity": (float, 0.0), "seed": (int, 0)},
    )
    partition_spec = PartitionSpec(
        part["num_clients"], part["dirichlet_alpha"], part["corrupted_client_count"], CorruptionSpec(**corr), part["seed"]
    )
    partition_spec.validate()

    mdl = _section(
        top["model"],
        "model",
        {
            "arch": (str, "softmax_linear"),
            "feature_dim": (int, synthetic.feature_dim if synthetic else None),
            "num_classes": (int, synthetic.num_classes if synthetic else None),
            "hidden_units": (int, 0),
            "init_seed": (int, 0),
            "init_scale": (float, 1.0),
        },
    )
    for k in ("feature_dim", "num_classes"):
        if mdl[k] is None:
            raise ConfigError(f"model.{k}: required when the dataset comes from CSV")
    model_spec = ModelSpec(**mdl)
    model_spec.validate()

    fed = _section(
        top["federation"],
        "federation",
        {
            "rounds": (int, REQUIRED),
            "local_epochs": (int, 1),
            "batch_size": (int, 32),
            "learning_rate": (float, 0.1),
            "eval_every": (int, 1),
            "master_seed": (int, 0),
            "logit_adjustment": (bool, True),
            "temperature": (float, 1.0),
        },
    )
    federation = FederationConfig(**fed)
    federation.validate()

    defaults = _strategy_defaults(top["strategy_defaults"])
    if not top["strategies"]:
        raise ConfigError("strategies: at least one strategy is required")
    strategies = tuple(_parse_strategy(e, i, defaults) for i, e in enumerate(top["strategies"]))
    names = [s.name for s in strategies]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ConfigError(f"strategies: duplicate name {dupes[0]!r}")

    seeds = tuple(_check_type(s, int, f"seeds[{i}]") for i, s in enumerate(top["seeds"]))
    if not seeds:
        raise ConfigError("seeds: at least one seed is required")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds: duplicate seed")
    if top["summary_window"] < 1:
        raise ConfigError("summary_window: must be >= 1")
    return RunSpec(
        data, partition_spec, model_spec, federation, strategies, seeds, top["output_dir"], top["summary_window"]
    )


def parse_config(path: str | Path) -> RunSpec:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such config file")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return parse_config_dict(doc, path.parent)


def spec_to_dict(spec: RunSpec) -> dict:
    """Fully explicit config document; ``parse_config_dict`` maps it back to ``spec``."""
    if spec.data.synthetic is not None:
        dataset = dataclasses.asdict(spec.data.synthetic)
    else:
        dataset = {"csv": spec.data.csv, "test_csv": spec.data.test_csv}
    dataset.update(test_fraction=spec.data.test_fraction, split_seed=spec.data.split_seed)
    fed = dataclasses.asdict(spec.federation)
    del fed["strategy"]
    return {
        "dataset": dataset,
        "partition": dataclasses.asdict(spec.partition),
        "model": dataclasses.asdict(spec.model),
        "federation": fed,
        "strategies": [dict(name=s.name, **strategy_to_dict(s.config)) for s in spec.strategies],
        "seeds": list(spec.seeds),
        "output_dir": spec.output_dir,
        "summary_window": spec.summary_window,
    }


# ---------------------------------------------------------------- running


def load_data(spec: RunSpec) -> tuple[Dataset, Dataset]:
    d = spec.data
    if d.synthetic is not None:
        return train_test_split(generate(d.synthetic), d.test_fraction, d.split_seed)
    train = load_csv(d.csv)
    if d.test_csv:
        return train, load_csv(d.test_csv)
    return train_test_split(train, d.test_fraction, d.split_seed)


def _build_id() -> str:
    try:
        sha = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True,
            text=True,
            check=True,
            cwd=Path(__file__).parent,
        ).stdout.strip()
        return f"fedism {__version__} ({sha})"
    except (OSError, subprocess.CalledProcessError):
        return f"fedism {__version__}"


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def run_matrix(spec: RunSpec, workers: int = 1, output_dir: str | Path | None = None) -> int:
    """Run every (strategy, seed) pair, then write ``summary.csv``.

    A run's seed replaces both the federation master seed and the model init
    seed; data generation and partitioning stay fixed across seeds.
    """
    out = Path(output_dir if output_dir is not None else spec.output_dir)
    train, test = load_data(spec)
    if train.features.shape[1] != spec.model.feature_dim:
        raise ConfigError(
            f"model.feature_dim={spec.model.feature_dim} but data has {train.features.shape[1]} features"
        )
    if train.labels.max() >= spec.model.num_classes or test.labels.max() >= spec.model.num_classes:
        raise ConfigError(f"labels exceed model.num_classes={spec.model.num_classes}")
    clients = partition(train, spec.partition)
    test_pair = make_test_pair(test, spec.partition.corruption)
    echo = spec_to_dict(spec)

    status = EXIT_OK
    summary_rows = []
    for named in spec.strategies:
        finished = []
        for seed in spec.seeds:
            run_dir = out / f"{named.name}__seed{seed}"
            started = _now()
            model = Classifier(dataclasses.replace(spec.model, init_seed=seed))
            cfg = dataclasses.replace(spec.federation, strategy=named.config, master_seed=seed)
            try:
                result = run(model, clients, test_pair, cfg, workers=workers)
            except DivergenceError as exc:
                log.error("%s seed %d diverged: %s", named.name, seed, exc)
                status = EXIT_DIVERGED
                continue
            files = [
                write_rounds(result.records, run_dir / "rounds.csv"),
                write_eval(result.evaluations, run_dir / "eval.csv"),
            ]
            save_params(result.theta, run_dir / "params.bin")
            files.append(run_dir / "params.bin")
            manifest_path = run_dir / "manifest.json"
            manifest = RunManifest(
                config=echo,
                build=_build_id(),
                seeds={"run": seed, "master_seed": seed, "init_seed": seed},
                started=started,
                finished=_now(),
                files=sorted(p.name for p in files + [manifest_path]),
                layout=[[name, list(shape)] for name, shape in model.layout],
            )
            write_manifest(manifest, manifest_path)
            finished.append(read_eval(run_dir / "eval.csv"))
            log.info("%s seed %d done -> %s", named.name, seed, run_dir)
        if finished:
            summary_rows.append((named.name, len(finished), summarize(finished, spec.summary_window)))
    if summary_rows:
        write_summary(summary_rows, out / "summary.csv")
    return status


# ---------------------------------------------------------------- compare

COMPARE_METRICS = ("acc_clean", "auc_clean", "acc_corr", "auc_corr", "acc_avg", "auc_avg")


def compare(paths: list[str | Path]) -> list[dict]:
    """Rows of mean metrics plus deltas against the first row of the first summary."""
    if len(paths) < 2:
        raise SchemaError("compare needs at least two summaries")
    required = ("strategy",) + tuple(f"{m}_mean" for m in COMPARE_METRICS)
    rows = []
    for path in paths:
        for raw in read_table(path, required):
            row = {"source": str(path), "strategy": raw["strategy"]}
            row.update({m: float(raw[f"{m}_mean"]) for m in COMPARE_METRICS})
            rows.append(row)
    if not rows:
        raise SchemaError("summaries contain no rows")
    ref = rows[0]
    for row in rows:
        for m in COMPARE_METRICS:
            row[f"d_{m}"] = row[m] - ref[m]
    return rows


def format_comparison(rows: list[dict]) -> str:
    labels = [f"{Path(r['source']).parent.name or r['source']}:{r['strategy']}" for r in rows]
    width = max(len("run"), *(len(lbl) for lbl in labels))
    cols = [m for m in COMPARE_METRICS] + [f"d_{m}" for m in COMPARE_METRICS]
    lines = ["  ".join([f"{'run':<{width}}"] + [f"{c:>11}" for c in cols])]
    for label, row in zip(labels, rows):
        cells = [f"{100 * row[c]:>11.2f}" if not c.startswith("d_") else f"{100 * row[c]:>+11.2f}" for c in cols]
        lines.append("  ".join([f"{label:<{width}}"] + cells))
    return "\n".join(lines)


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedism", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="cmd", required=True)
    run_p = sub.add_parser("run", help="run every (strategy, seed) pair in a config")
    run_p.add_argument("config")
    run_p.add_argument("--output-dir", default=None)
    run_p.add_argument("--workers", type=int, default=1, help="client threads per round; results do not depend on it")
    run_p.add_argument("--seed-override", type=int, default=None, help="run this single seed instead of the config list")
    cmp_p = sub.add_parser("compare", help="tabulate summaries with deltas against the first")
    cmp_p.add_argument("summaries", nargs="+")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.cmd == "run":
            if args.workers < 1:
                raise ConfigError("--workers must be >= 1")
            spec = parse_config(args.config)
            if args.seed_override is not None:
                spec = dataclasses.replace(spec, seeds=(args.seed_override,))
            return run_matrix(spec, workers=args.workers, output_dir=args.output_dir)
        print(format_comparison(compare(args.summaries)))
        return EXIT_OK
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, DataError, PartitionError, SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FedismError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
