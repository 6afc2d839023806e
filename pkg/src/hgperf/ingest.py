"""Load benchmark tables and build one heterogeneous graph per setting.

Three CSV files feed the pipeline (UTF-8, header row required):

``ela.csv``
    ``problem_id, instance_id, dimension, ela_1 .. ela_46``
``configs.csv``
    ``family, variant_id, parameter_name, parameter_value, parameter_class, execution_part``
    (one row per setting of a variant)
``performance.csv``
    ``family, variant_id, problem_id, instance_id, dimension, budget_multiplier, precision``
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .hetgraph import (
    CONTROLS_EXECUTION_PART,
    HAS_ALGORITHM,
    HAS_PARAMETER,
    HAS_PARAMETER_CLASS,
    HAS_PROBLEM,
    N_ELA_FEATURES,
    GraphSpec,
    HeteroGraph,
    NodeType,
    validate_metagraph,
)

ELA_COLUMNS = ["problem_id", "instance_id", "dimension"] + [f"ela_{i}" for i in range(1, N_ELA_FEATURES + 1)]
CONFIG_COLUMNS = ["family", "variant_id", "parameter_name", "parameter_value", "parameter_class", "execution_part"]
PERFORMANCE_COLUMNS = [
    "family", "variant_id", "problem_id", "instance_id", "dimension", "budget_multiplier", "precision",
]
FAMILIES = GraphSpec.FAMILIES


@dataclass(frozen=True)
class ElaRecord:
    problem_id: int
    instance_id: int
    dimension: int
    features: tuple


@dataclass(frozen=True)
class Setting:
    parameter_name: str
    parameter_value: str
    parameter_class: str
    execution_part: str


@dataclass(frozen=True)
class ConfigRecord:
    variant_id: str
    family: str
    settings: tuple


@dataclass(frozen=True)
class PerformanceRecord:
    family: str
    variant_id: str
    problem_id: int
    instance_id: int
    dimension: int
    budget_multiplier: int
    precision: float


@dataclass(frozen=True)
class TargetTransform:
    """``log10-clip`` maps precision to log10(max(precision, floor)); ``raw`` is the identity."""

    kind: str = "log10-clip"
    floor: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("log10-clip", "raw"):
            raise ValueError(f"unknown target transform {self.kind!r}")
        if not self.floor > 0:
            raise ValueError("floor must be positive")

    def inverse(self, value: float) -> float:
        return 10.0**value if self.kind == "log10-clip" else value


def transform_target(precision: float, t: TargetTransform = TargetTransform()) -> float:
    if not math.isfinite(precision):
        raise DataError(f"precision must be finite, got {precision!r}")
    if t.kind == "raw":
        return float(precision)
    return math.log10(max(precision, t.floor))


# ---------------------------------------------------------------------------
# CSV loading


def _rows(path, columns):
    """Yield (line_number, row dict) after checking the header and field count."""
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file, expected header {','.join(columns)}")
        header = [h.strip() for h in header]
        if header != columns:
            raise DataError(f"{path}: header {header} does not match expected columns {columns}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(columns):
                raise DataError(f"{path}:{line}: expected {len(columns)} fields, found {len(row)}")
            yield line, dict(zip(columns, (c.strip() for c in row)))


def _int(path, line, row, col):
    try:
        return int(row[col])
    except ValueError:
        raise DataError(f"{path}:{line}: column {col!r} is not an integer: {row[col]!r}") from None


def _float(path, line, row, col):
    try:
        value = float(row[col])
    except ValueError:
        raise DataError(f"{path}:{line}: column {col!r} is not a number: {row[col]!r}") from None
    if not math.isfinite(value):
        raise DataError(f"{path}:{line}: column {col!r} is not finite: {row[col]!r}")
    return value


def _family(path, line, value):
    if value not in FAMILIES:
        raise DataError(f"{path}:{line}: unknown family {value!r} (expected one of {FAMILIES})")
    return value


def load_ela(path) -> list[ElaRecord]:
    records, seen = [], {}
    for line, row in _rows(path, ELA_COLUMNS):
        key = tuple(_int(path, line, row, c) for c in ("problem_id", "instance_id", "dimension"))
        if key in seen:
            raise DataError(f"{path}: duplicate ELA row for (problem, instance, dimension)={key} on lines {seen[key]} and {line}")
        seen[key] = line
        feats = tuple(_float(path, line, row, f"ela_{i}") for i in range(1, N_ELA_FEATURES + 1))
        records.append(ElaRecord(*key, features=feats))
    return records


def load_configs(path) -> list[ConfigRecord]:
    settings = defaultdict(list)
    seen_param = {}
    for line, row in _rows(path, CONFIG_COLUMNS):
        family = _family(path, line, row["family"])
        if not row["variant_id"] or not row["parameter_name"]:
            raise DataError(f"{path}:{line}: variant_id and parameter_name must be non-empty")
        key = (family, row["variant_id"], row["parameter_name"])
        if key in seen_param:
            raise DataError(f"{path}:{line}: parameter {row['parameter_name']!r} repeated for variant {row['variant_id']!r} (first on line {seen_param[key]})")
        seen_param[key] = line
        settings[(family, row["variant_id"])].append(
            Setting(row["parameter_name"], row["parameter_value"], row["parameter_class"], row["execution_part"])
        )
    return [
        ConfigRecord(variant_id=vid, family=fam, settings=tuple(sorted(s, key=lambda x: x.parameter_name)))
        for (fam, vid), s in sorted(settings.items())
    ]


def load_performance(path) -> list[PerformanceRecord]:
    records, seen = [], {}
    for line, row in _rows(path, PERFORMANCE_COLUMNS):
        family = _family(path, line, row["family"])
        rec = PerformanceRecord(
            family=family,
            variant_id=row["variant_id"],
            problem_id=_int(path, line, row, "problem_id"),
            instance_id=_int(path, line, row, "instance_id"),
            dimension=_int(path, line, row, "dimension"),
            budget_multiplier=_int(path, line, row, "budget_multiplier"),
            precision=_float(path, line, row, "precision"),
        )
        if rec.precision <= 0:
            raise DataError(f"{path}:{line}: precision must be positive, got {rec.precision!r}")
        key = (rec.family, rec.variant_id, rec.problem_id, rec.instance_id, rec.dimension, rec.budget_multiplier)
        if key in seen:
            raise DataError(f"{path}: duplicate performance record {key} on lines {seen[key]} and {line}")
        seen[key] = line
        records.append(rec)
    return records


@dataclass
class Dataset:
    ela: list
    configs: list
    performance: list

    @classmethod
    def from_files(cls, ela_path, configs_path, performance_path) -> "Dataset":
        return cls(load_ela(ela_path), load_configs(configs_path), load_performance(performance_path))

    def specs(self) -> list[GraphSpec]:
        """Every (dimension, budget, family) combination present in the performance table."""
        keys = {(r.dimension, r.budget_multiplier, r.family) for r in self.performance}
        return sorted((GraphSpec(*k) for k in keys), key=lambda s: (s.family, s.dimension, s.budget_multiplier))

    def restrict_variants(self, family: str, limit: int) -> "Dataset":
        """Keep only the first ``limit`` variants (sorted by id) of ``family``."""
        keep = sorted(c.variant_id for c in self.configs if c.family == family)[:limit]
        keep = {(family, v) for v in keep}
        configs = [c for c in self.configs if c.family != family or (c.family, c.variant_id) in keep]
        perf = [r for r in self.performance if r.family != family or (r.family, r.variant_id) in keep]
        return Dataset(self.ela, configs, perf)


# ---------------------------------------------------------------------------
# graph construction


def problem_key(problem_id: int, instance_id: int) -> str:
    return f"f{problem_id}_i{instance_id}"


def parse_problem_key(key: str) -> tuple[int, int]:
    f, i = key.split("_")
    return int(f[1:]), int(i[1:])


def build_graph(
    spec: GraphSpec,
    ela,
    configs,
    perf,
    transform: TargetTransform = TargetTransform(),
) -> HeteroGraph:
    """Assemble the heterogeneous graph for one (dimension, budget, family)."""
    problems = sorted(
        (r for r in ela if r.dimension == spec.dimension), key=lambda r: (r.problem_id, r.instance_id)
    )
    variants = sorted((c for c in configs if c.family == spec.family), key=lambda c: c.variant_id)
    runs = sorted(
        (
            r
            for r in perf
            if r.family == spec.family
            and r.dimension == spec.dimension
            and r.budget_multiplier == spec.budget_multiplier
        ),
        key=lambda r: (r.variant_id, r.problem_id, r.instance_id),
    )
    if not runs:
        raise DataError(f"no performance records for {spec.slug}")

    problem_keys = [problem_key(r.problem_id, r.instance_id) for r in problems]
    problem_index = {k: i for i, k in enumerate(problem_keys)}
    variant_index = {c.variant_id: i for i, c in enumerate(variants)}

    param_class, class_parts = {}, set()
    for c in variants:
        for s in c.settings:
            pkey = f"{s.parameter_name}={s.parameter_value}"
            previous = param_class.setdefault(pkey, s.parameter_class)
            if previous != s.parameter_class:
                raise DataError(f"parameter {pkey!r} assigned to classes {previous!r} and {s.parameter_class!r}")
            class_parts.add((s.parameter_class, s.execution_part))
    param_keys = sorted(param_class)
    class_keys = sorted({c for c, _ in class_parts})
    part_keys = sorted({p for _, p in class_parts})
    param_index = {k: i for i, k in enumerate(param_keys)}
    class_index = {k: i for i, k in enumerate(class_keys)}
    part_index = {k: i for i, k in enumerate(part_keys)}

    has_parameter = sorted(
        (variant_index[c.variant_id], param_index[f"{s.parameter_name}={s.parameter_value}"])
        for c in variants
        for s in c.settings
    )
    has_class = sorted((param_index[p], class_index[c]) for p, c in param_class.items())
    controls = sorted((class_index[c], part_index[p]) for c, p in class_parts)

    perf_keys, has_algorithm, has_problem, targets = [], [], [], []
    for i, r in enumerate(runs):
        if r.variant_id not in variant_index:
            raise DataError(f"performance record references unknown {spec.family} variant {r.variant_id!r}")
        pk = problem_key(r.problem_id, r.instance_id)
        if pk not in problem_index:
            raise DataError(
                f"performance record references problem {pk} in D={spec.dimension} without ELA features"
            )
        perf_keys.append(f"{r.variant_id}|{pk}")
        has_algorithm.append((i, variant_index[r.variant_id]))
        has_problem.append((i, problem_index[pk]))
        targets.append(transform_target(r.precision, transform))

    n_perf = len(perf_keys)
    g = HeteroGraph(
        nodes={
            NodeType.PARAMETER: param_keys,
            NodeType.PARAMETER_CLASS: class_keys,
            NodeType.EXECUTION_PART: part_keys,
            NodeType.ALGORITHM: [c.variant_id for c in variants],
            NodeType.PERFORMANCE: perf_keys,
            NodeType.PROBLEM: problem_keys,
        },
        edges={
            HAS_PARAMETER: has_parameter,
            HAS_PARAMETER_CLASS: has_class,
            CONTROLS_EXECUTION_PART: controls,
            HAS_ALGORITHM: has_algorithm,
            HAS_PROBLEM: has_problem,
        },
        features={NodeType.PROBLEM: np.array([r.features for r in problems], dtype=np.float64).reshape(-1, N_ELA_FEATURES)},
        targets=np.array(targets, dtype=np.float64),
        masks={"train": np.ones(n_perf, dtype=bool)},
    )
    report = validate_metagraph(g)
    if report:
        raise DataError(f"graph for {spec.slug} failed validation: " + "; ".join(report))
    return g


def performance_instances(g: HeteroGraph) -> np.ndarray:
    """Instance id of the problem attached to each Performance node."""
    e = g.edges[HAS_PROBLEM]
    order = np.argsort(e[:, 0], kind="stable")
    inst = np.array([parse_problem_key(k)[1] for k in g.nodes[NodeType.PROBLEM]], dtype=np.int64)
    return inst[e[order, 1]]


def problem_instances(g: HeteroGraph) -> np.ndarray:
    return np.array([parse_problem_key(k)[1] for k in g.nodes[NodeType.PROBLEM]], dtype=np.int64)


def standardization_stats(features: np.ndarray, rows: np.ndarray):
    """Per-column mean and std over the selected rows; constant columns get std 1."""
    subset = features[rows]
    if subset.shape[0] == 0:
        raise DataError("cannot standardise features from an empty set of problems")
    mean = subset.mean(axis=0)
    std = subset.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def standardize_problem_features(g: HeteroGraph, train_instances) -> HeteroGraph:
    """Copy of ``g`` with ELA columns scaled by statistics of the training instances only."""
    raw = g.features[NodeType.PROBLEM]
    rows = np.isin(problem_instances(g), list(train_instances))
    mean, std = standardization_stats(raw, rows)
    return g.with_features(NodeType.PROBLEM, (raw - mean) / std)
