"""
GNN against the random-forest baseline
======================================

The scaled-down comparison protocol (one setting, 32 variants, one grid
cell, two repetitions of leave-instance-out CV) run on synthetic data.
Pass ``--data DIR`` to run it on a real dataset directory instead.

This takes several minutes.
"""

import argparse
import time
from pathlib import Path

from hgperf import synthetic
from hgperf.baseline import ForestParams, run_baseline
from hgperf.hetgraph import add_reverse_relations
from hgperf.ingest import Dataset, build_graph
from hgperf.model import Hyperparams
from hgperf.report import relative_improvement
from hgperf.train import TrainConfig, make_cv_plan, nested_cv

parser = argparse.ArgumentParser()
parser.add_argument("--data", type=Path, help="directory with ela.csv, configs.csv, performance.csv")
parser.add_argument("--lr", type=float, nargs="+", default=[0.1, 0.01])
parser.add_argument("--repetitions", type=int, default=2)
args = parser.parse_args()

if args.data:
    ds = Dataset.from_files(args.data / "ela.csv", args.data / "configs.csv", args.data / "performance.csv")
    source = str(args.data)
else:
    ds = synthetic.make_dataset(dimensions=(5,), budgets=(50,), families=("modCMA",), seed=0)
    source = "synthetic"
ds = ds.restrict_variants("modCMA", 32)
spec = next(s for s in ds.specs() if (s.family, s.dimension, s.budget_multiplier) == ("modCMA", 5, 50))
g = add_reverse_relations(build_graph(spec, ds.ela, ds.configs, ds.performance))
plan = make_cv_plan(g, repetitions=args.repetitions)
print(f"{source}: {spec.slug}, {g.labeled.sum()} labeled nodes, {len(plan.outer)} folds x {plan.repetitions} repetitions")

t0 = time.perf_counter()
rf = run_baseline(g, plan, ForestParams())
print(f"RF   mean test MSE {rf.mean_mse:.4f}  ({time.perf_counter() - t0:.0f}s)")

for lr in args.lr:
    t0 = time.perf_counter()
    gnn = nested_cv(g, plan, [Hyperparams(64, 0.2)], TrainConfig(lr0=lr))
    ratio = gnn.mean_mse / rf.mean_mse
    print(
        f"GNN  mean test MSE {gnn.mean_mse:.4f} at lr {lr}  ratio to RF {ratio:.2f}  "
        f"improvement {relative_improvement(gnn.mean_mse, rf.mean_mse):.1f}%  ({time.perf_counter() - t0:.0f}s)"
    )
