"""Command-line entry point: ``hgperf {ingest,build,train,baseline,report} --manifest FILE``.

The manifest is an INI file; relative paths resolve against its directory::

    [data]
    ela = ela.csv
    configs = configs.csv
    performance = performance.csv

    [run]
    output_dir = out
    root_seed = 0
    repetitions = 10
    families = modCMA, modDE          ; optional, default: all in the data
    dimensions = 5, 30                ; optional
    budgets = 50, 100, 300, 500, 1000, 1500   ; optional
    variant_limit =                   ; optional, keep the first N variants per family
    target_transform = log10-clip     ; or raw

    [grid]
    embedding_sizes = 32, 64, 128
    dropouts = 0.1, 0.2, 0.3
    final_activation = true

    [train]
    epochs = 200
    lr = 0.1
    plateau_patience = 20
    lr_factor = 0.5
    plateau_tolerance = 1e-4

    [baseline]
    n_trees = 100
    max_depth =                       ; empty means unlimited
    min_samples_leaf = 1
    features_per_split = 16
    bootstrap = true

Exit codes: 0 success, 1 data error, 2 configuration error, 3 training failure.
The worker count comes from ``HGPERF_WORKERS`` (default: all CPUs).
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import baseline as rf
from . import hetgraph, train
from .errors import ConfigError, DataError, TrainingError
from .hetgraph import GraphSpec
from .ingest import Dataset, TargetTransform, build_graph
from .model import DROPOUT_GRID, EMBEDDING_GRID, Hyperparams
from .report import ResultRow, atomic_write, build_table, read_results, write_results, write_summary

logger = logging.getLogger("hgperf")

WORKERS_ENV = "HGPERF_WORKERS"
EXIT_OK, EXIT_DATA, EXIT_CONFIG, EXIT_TRAINING = 0, 1, 2, 3


@dataclass
class RunManifest:
    path: Path
    ela: Path
    configs: Path
    performance: Path
    output_dir: Path
    root_seed: int = 0
    repetitions: int = 10
    families: list | None = None
    dimensions: list | None = None
    budgets: list | None = None
    variant_limit: int | None = None
    transform: TargetTransform = field(default_factory=TargetTransform)
    grid: list = field(default_factory=list)
    train: train.TrainConfig = field(default_factory=train.TrainConfig)
    forest: rf.ForestParams = field(default_factory=rf.ForestParams)


def _list(value, cast):
    if value is None or not value.strip():
        return None
    try:
        return [cast(v.strip()) for v in value.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse list {value!r}: {exc}") from None


def _opt(section, key, cast, default):
    raw = section.get(key, fallback=None) if section is not None else None
    if raw is None or not raw.strip():
        return default
    if cast is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return cast(raw.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


def load_manifest(path) -> RunManifest:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"manifest {path} does not exist")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if "data" not in cp:
        raise ConfigError(f"{path}: missing [data] section")
    base = path.parent
    data, run = cp["data"], cp["run"] if "run" in cp else None
    grid_s = cp["grid"] if "grid" in cp else None
    train_s = cp["train"] if "train" in cp else None
    rf_s = cp["baseline"] if "baseline" in cp else None

    files = {}
    for key in ("ela", "configs", "performance"):
        if key not in data:
            raise ConfigError(f"{path}: [data] needs '{key}'")
        files[key] = (base / data[key].strip()).resolve()
        if not files[key].is_file():
            raise ConfigError(f"{path}: {key} file {files[key]} does not exist")

    out_dir = _opt(run, "output_dir", str, "out")
    seed = _opt(run, "root_seed", int, 0)
    final_act = _opt(grid_s, "final_activation", bool, True)
    try:
        grid = [
            Hyperparams(e, d, final_act)
            for e in (_list(grid_s.get("embedding_sizes") if grid_s else None, int) or list(EMBEDDING_GRID))
            for d in (_list(grid_s.get("dropouts") if grid_s else None, float) or list(DROPOUT_GRID))
        ]
        cfg = train.TrainConfig(
            epochs=_opt(train_s, "epochs", int, 200),
            lr0=_opt(train_s, "lr", float, 0.1),
            plateau_patience=_opt(train_s, "plateau_patience", int, 20),
            lr_factor=_opt(train_s, "lr_factor", float, 0.5),
            plateau_tolerance=_opt(train_s, "plateau_tolerance", float, 1e-4),
            seed=seed,
        )
        forest = rf.ForestParams(
            n_trees=_opt(rf_s, "n_trees", int, 100),
            max_depth=_opt(rf_s, "max_depth", int, None),
            min_samples_leaf=_opt(rf_s, "min_samples_leaf", int, 1),
            features_per_split=_opt(rf_s, "features_per_split", int, rf.ForestParams().features_per_split),
            bootstrap=_opt(rf_s, "bootstrap", bool, True),
            seed=seed,
        )
        transform = TargetTransform(kind=_opt(run, "target_transform", str, "log10-clip"))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    repetitions = _opt(run, "repetitions", int, 10)
    if repetitions < 1:
        raise ConfigError(f"{path}: repetitions must be >= 1")
    return RunManifest(
        path=path,
        ela=files["ela"],
        configs=files["configs"],
        performance=files["performance"],
        output_dir=(base / out_dir).resolve(),
        root_seed=seed,
        repetitions=repetitions,
        families=_list(run.get("families") if run else None, str),
        dimensions=_list(run.get("dimensions") if run else None, int),
        budgets=_list(run.get("budgets") if run else None, int),
        variant_limit=_opt(run, "variant_limit", int, None),
        transform=transform,
        grid=grid,
        train=cfg,
        forest=forest,
    )


def load_dataset(m: RunManifest) -> Dataset:
    ds = Dataset.from_files(m.ela, m.configs, m.performance)
    if m.variant_limit is not None:
        for fam in GraphSpec.FAMILIES:
            ds = ds.restrict_variants(fam, m.variant_limit)
    return ds


def selected_specs(m: RunManifest, ds: Dataset) -> list[GraphSpec]:
    specs = ds.specs()
    if m.families:
        specs = [s for s in specs if s.family in m.families]
    if m.dimensions:
        specs = [s for s in specs if s.dimension in m.dimensions]
    if m.budgets:
        specs = [s for s in specs if s.budget_multiplier in m.budgets]
    if not specs:
        raise ConfigError("the manifest selects no (family, dimension, budget) present in the data")
    return specs


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
        return max(1, n)
    return os.cpu_count() or 1


def _record_manifest(m: RunManifest):
    m.output_dir.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(m.path, m.output_dir / "manifest.ini")


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(m: RunManifest) -> dict:
    ds = load_dataset(m)
    variants = {f: sum(1 for c in ds.configs if c.family == f) for f in GraphSpec.FAMILIES}
    budgets = {}
    for r in ds.performance:
        budgets.setdefault(r.dimension, set()).add(r.budget_multiplier)
    summary = {
        "variants": variants,
        "ela_records": len(ds.ela),
        "problems": len({r.problem_id for r in ds.ela}),
        "instances": len({r.instance_id for r in ds.ela}),
        "performance_records": len(ds.performance),
        "budgets_per_dimension": {str(d): sorted(b) for d, b in sorted(budgets.items())},
    }
    for f, n in variants.items():
        print(f"{f}: {n} variants")
    for d, b in summary["budgets_per_dimension"].items():
        print(f"D={d}: {len(b)} budgets ({', '.join(f'{x}D' for x in b)})")
    print(f"ELA records: {summary['ela_records']}; performance records: {summary['performance_records']}")
    return summary


def cmd_build(m: RunManifest) -> list[Path]:
    ds = load_dataset(m)
    out = m.output_dir / "graphs"
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for spec in selected_specs(m, ds):
        g = build_graph(spec, ds.ela, ds.configs, ds.performance, m.transform)
        path = out / f"{spec.slug}.hg"
        hetgraph.save(g, path)
        paths.append(path)
        print(f"{spec.slug}: {g!r} -> {path}")
    _record_manifest(m)
    return paths


def _job_path(m: RunManifest, model: str, spec: GraphSpec, rep: int, fold: int) -> Path:
    return m.output_dir / model.lower() / "jobs" / f"{spec.slug}_r{rep}_f{fold}.json"


def _gnn_job(args):
    g, plan, rep, fold, grid, cfg = args
    res, _ = train.run_outer_fold(g, plan, rep, fold, grid, cfg)
    return res


def _rf_job(args):
    g, plan, rep, fold, params = args
    return rf.baseline_fold(g, plan, rep, fold, params)


def _run_jobs(m: RunManifest, model: str, make_args, worker) -> list[ResultRow]:
    ds = load_dataset(m)
    _record_manifest(m)
    pending, rows = [], []
    for spec in selected_specs(m, ds):
        g = hetgraph.add_reverse_relations(build_graph(spec, ds.ela, ds.configs, ds.performance, m.transform))
        plan = train.make_cv_plan(g, m.repetitions)
        for rep in range(plan.repetitions):
            for fold in range(len(plan.outer)):
                path = _job_path(m, model, spec, rep, fold)
                if path.is_file():
                    rows.append(ResultRow.from_dict(json.loads(path.read_text(encoding="utf-8"))["row"]))
                    continue
                pending.append((spec, rep, fold, path, make_args(g, plan, rep, fold)))

    def finish(spec, rep, fold, path, res):
        row = ResultRow(model, spec.family, spec.dimension, spec.budget_multiplier, rep, fold, res.hyperparams.label, res.mse)
        payload = {
            "row": dict(zip(["model", "family", "dimension", "budget_multiplier", "repetition", "outer_fold", "hyperparams", "mse"], row.as_list())),
            "node_indices": res.node_indices.tolist(),
            "predictions": [repr(float(x)) for x in res.predictions],
        }
        atomic_write(path, json.dumps(payload) + "\n")
        rows.append(row)
        logger.info("%s %s rep %d fold %d: mse %.4f", model, spec.slug, rep, fold, res.mse)

    workers = min(_workers(), len(pending))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [(p[:4], pool.submit(worker, p[4])) for p in pending]
            for (spec, rep, fold, path), fut in futures:
                finish(spec, rep, fold, path, fut.result())
    else:
        for spec, rep, fold, path, args in pending:
            finish(spec, rep, fold, path, worker(args))

    tag = model.lower()
    write_results(rows, m.output_dir / f"results_{tag}.csv")
    write_summary(rows, m.output_dir / f"summary_{tag}.json")
    print(f"{model}: {len(rows)} fold results -> {m.output_dir / f'results_{tag}.csv'}")
    return rows


def cmd_train(m: RunManifest) -> list[ResultRow]:
    return _run_jobs(m, "GNN", lambda g, plan, rep, fold: (g, plan, rep, fold, m.grid, m.train), _gnn_job)


def cmd_baseline(m: RunManifest) -> list[ResultRow]:
    return _run_jobs(m, "RF", lambda g, plan, rep, fold: (g, plan, rep, fold, m.forest), _rf_job)


def cmd_report(m: RunManifest):
    paths = {k: m.output_dir / f"results_{k}.csv" for k in ("gnn", "rf")}
    rows = {k: read_results(p) if p.is_file() else [] for k, p in paths.items()}
    if not rows["gnn"] and not rows["rf"]:
        raise DataError(f"no results found in {m.output_dir}; run 'train' and 'baseline' first")
    table = build_table(rows["gnn"], rows["rf"])
    md = table.to_markdown()
    atomic_write(m.output_dir / "table.md", md)
    atomic_write(m.output_dir / "table.csv", table.to_csv())
    print(md, end="")
    return table


COMMANDS = {
    "ingest": cmd_ingest,
    "build": cmd_build,
    "train": cmd_train,
    "baseline": cmd_baseline,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hgperf", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--manifest", required=True, help="INI run manifest")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        m = load_manifest(args.manifest)
        COMMANDS[args.command](m)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
