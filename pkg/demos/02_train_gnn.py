"""
Training the graph network
==========================

Train the 4-layer heterogeneous network on a small synthetic setting, with
one instance held out, and compare learning rates.
"""

import time

import numpy as np

from hgperf import synthetic
from hgperf.hetgraph import add_reverse_relations
from hgperf.ingest import build_graph, standardize_problem_features
from hgperf.model import Hyperparams, predict
from hgperf.train import TrainConfig, evaluate_mse, make_cv_plan, train_model

ds = synthetic.make_dataset(
    n_problems=12, n_instances=5, dimensions=(5,), budgets=(50,), families=("modCMA",), variant_limit=16, seed=0
)
g = add_reverse_relations(build_graph(ds.specs()[0], ds.ela, ds.configs, ds.performance))
print(g)

# Leave-instance-out: fold 0 holds out every node of instance 1.
plan = make_cv_plan(g, repetitions=1)
fold = plan.outer[0]
train, test = plan.train_mask(0), plan.test_mask(0)

# Inner split for early-stopping style monitoring: hold out one more instance.
val = plan.mask(fold.train_instances[:1])
fit = train & ~val

# ELA features are standardised with training-instance statistics only.
gs = standardize_problem_features(g, fold.train_instances[1:])

for lr in (0.1, 0.01):
    t0 = time.perf_counter()
    params, hist = train_model(gs, fit, val, Hyperparams(32, 0.1), TrainConfig(epochs=150, lr0=lr), np.random.default_rng(0))
    mse = evaluate_mse(predict(gs, params)[test], g.targets[test])
    print(
        f"lr {lr:<5} best epoch {hist.best_epoch:3d}  val L1 {hist.best_val:.3f}  "
        f"test MSE {mse:.3f}  final lr {hist.lr[-1]:.4g}  ({time.perf_counter() - t0:.1f}s)"
    )

# A constant predictor for scale: the variance of the test targets.
print(f"test target variance {g.targets[test].var():.3f}")
