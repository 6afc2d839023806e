"""Synthetic benchmark tables with the same layout as the real ones.

The module spaces mimic modCMA-ES (324 variants) and modDE (576 variants).
Precisions come from a latent-factor model in which the problem landscape,
the variant's settings and their interaction all matter, so both tabular and
graph models have something to learn. None of this is measured data.
"""

from __future__ import annotations

import csv
import itertools
from pathlib import Path

import numpy as np

from .hetgraph import N_ELA_FEATURES
from .ingest import (
    CONFIG_COLUMNS,
    ELA_COLUMNS,
    PERFORMANCE_COLUMNS,
    ConfigRecord,
    Dataset,
    ElaRecord,
    PerformanceRecord,
    Setting,
)

# (parameter_name, values, parameter_class, execution_part)
MODULES = {
    "modCMA": [
        ("elitist", ("false", "true"), "elitism", "selection"),
        ("active", ("false", "true"), "active_update", "adaptation"),
        ("base_sampler", ("gaussian", "sobol", "halton"), "base_sampler", "sampling"),
        ("mirrored", ("none", "mirrored", "mirrored_pairwise"), "mirrored_sampling", "sampling"),
        ("weights_option", ("default", "equal", "half_lambda"), "recombination_weights", "recombination"),
        ("local_restart", ("none", "IPOP", "BIPOP"), "local_restart", "restart"),
    ],
    "modDE": [
        ("mutation_base", ("rand", "best", "target"), "mutation_base", "mutation"),
        ("mutation_reference", ("none", "pbest", "best"), "mutation_reference", "mutation"),
        ("crossover", ("bin", "exp"), "crossover", "crossover"),
        ("eigen_crossover", ("false", "true"), "crossover", "crossover"),
        ("use_archive", ("false", "true"), "archive", "mutation"),
        ("lpsr", ("false", "true"), "population_size_reduction", "population"),
        ("adaptation_F", ("none", "shade"), "parameter_adaptation", "adaptation"),
        ("adaptation_CR", ("none", "shade"), "parameter_adaptation", "adaptation"),
    ],
}

N_LATENT = 4


def variant_configs(family: str, limit: int | None = None) -> list[ConfigRecord]:
    modules = MODULES[family]
    out = []
    for i, values in enumerate(itertools.product(*(m[1] for m in modules))):
        settings = tuple(
            sorted(
                (Setting(name, v, cls, part) for (name, _, cls, part), v in zip(modules, values)),
                key=lambda s: s.parameter_name,
            )
        )
        out.append(ConfigRecord(variant_id=f"{family}_{i:03d}", family=family, settings=settings))
    return out[:limit] if limit is not None else out


def make_dataset(
    n_problems: int = 24,
    n_instances: int = 5,
    dimensions=(5, 30),
    budgets=(50, 100, 300, 500, 1000, 1500),
    families=("modCMA", "modDE"),
    variant_limit: int | None = None,
    noise: float = 0.15,
    seed: int = 0,
) -> Dataset:
    rng = np.random.default_rng(seed)
    mixing = rng.normal(size=(N_LATENT, N_ELA_FEATURES))
    curvature = rng.normal(scale=0.3, size=(N_LATENT, N_ELA_FEATURES))

    latent, ela = {}, []
    for d in dimensions:
        for p in range(1, n_problems + 1):
            z = rng.normal(size=N_LATENT)
            for i in range(1, n_instances + 1):
                zi = z + rng.normal(scale=0.1, size=N_LATENT)
                latent[(p, i, d)] = zi
                feats = np.tanh(zi @ mixing) + (zi**2) @ curvature + rng.normal(scale=0.05, size=N_ELA_FEATURES)
                feats = feats + 0.02 * d
                ela.append(ElaRecord(p, i, d, tuple(float(x) for x in feats)))

    configs, perf = [], []
    for family in families:
        variants = variant_configs(family, variant_limit)
        configs.extend(variants)
        effects = {}
        for name, values, _, _ in MODULES[family]:
            for v in values:
                effects[(name, v)] = (rng.normal(scale=0.3), rng.normal(scale=0.4, size=N_LATENT))
        for c in variants:
            offset = sum(effects[(s.parameter_name, s.parameter_value)][0] for s in c.settings)
            loading = sum(effects[(s.parameter_name, s.parameter_value)][1] for s in c.settings)
            for (p, i, d), z in sorted(latent.items()):
                difficulty = 1.5 * np.tanh(z[0]) + 0.8 * z[1] + 0.02 * d
                speed = 1.0 + 0.5 * np.tanh(z[2] + float(z @ loading) / 4)
                for b in budgets:
                    value = difficulty + offset - speed * 1.4 * np.log10(b / 50 + 1) + rng.normal(scale=noise)
                    value = float(np.clip(value, -9.0, 6.0))
                    perf.append(PerformanceRecord(family, c.variant_id, p, i, d, b, 10.0**value))
    return Dataset(ela, configs, perf)


def write_dataset(ds: Dataset, directory) -> dict:
    """Write the three CSV tables into ``directory`` and return their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "ela": directory / "ela.csv",
        "configs": directory / "configs.csv",
        "performance": directory / "performance.csv",
    }
    with paths["ela"].open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ELA_COLUMNS)
        for r in ds.ela:
            w.writerow([r.problem_id, r.instance_id, r.dimension, *(repr(x) for x in r.features)])
    with paths["configs"].open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONFIG_COLUMNS)
        for c in ds.configs:
            for s in c.settings:
                w.writerow([c.family, c.variant_id, s.parameter_name, s.parameter_value, s.parameter_class, s.execution_part])
    with paths["performance"].open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PERFORMANCE_COLUMNS)
        for r in ds.performance:
            w.writerow([r.family, r.variant_id, r.problem_id, r.instance_id, r.dimension, r.budget_multiplier, repr(r.precision)])
    return paths
