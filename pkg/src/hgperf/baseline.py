"""Random-forest regression on ELA features, one forest per algorithm variant.

Trees are CART regressors: each split minimises the summed squared error of
the two children over a random subset of features, with thresholds at the
midpoint between consecutive distinct values (``x <= threshold`` goes left).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .hetgraph import HAS_ALGORITHM, HAS_PROBLEM, N_ELA_FEATURES, HeteroGraph, NodeType
from .train import CvPlan, CvResult, FitRecord, FoldResult, evaluate_mse


@dataclass
class TreeNode:
    """A split (``feature`` set) or a leaf (``feature`` is None)."""

    value: float
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())

    def n_leaves(self) -> int:
        return 1 if self.is_leaf else self.left.n_leaves() + self.right.n_leaves()


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: int = math.ceil(N_ELA_FEATURES / 3)
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError("max_depth must be non-negative")
        if self.features_per_split < 1:
            raise ConfigError("features_per_split must be >= 1")

    @property
    def label(self) -> str:
        depth = "none" if self.max_depth is None else self.max_depth
        return (
            f"n_trees={self.n_trees};max_depth={depth};min_samples_leaf={self.min_samples_leaf};"
            f"features_per_split={self.features_per_split};bootstrap={int(self.bootstrap)}"
        )


def best_split(X, y, features, min_samples_leaf=1):
    """Best (feature, threshold, sse) over ``features``, or None if no valid split exists."""
    m = len(y)
    if m < 2 * min_samples_leaf:
        return None
    yc = y - y.mean()
    xs = X[:, features]
    order = np.argsort(xs, axis=0, kind="stable")
    xs = np.take_along_axis(xs, order, axis=0)
    ys = yc[order]
    csum = np.cumsum(ys, axis=0)[:-1]
    csq = np.cumsum(ys * ys, axis=0)[:-1]
    total, total_sq = yc.sum(), (yc * yc).sum()
    n_left = np.arange(1, m, dtype=np.float64)[:, None]
    n_right = m - n_left
    sse = (csq - csum**2 / n_left) + ((total_sq - csq) - (total - csum) ** 2 / n_right)

    valid = xs[1:] > xs[:-1]
    if min_samples_leaf > 1:
        ok = (n_left[:, 0] >= min_samples_leaf) & (n_right[:, 0] >= min_samples_leaf)
        valid &= ok[:, None]
    if not valid.any():
        return None
    sse = np.where(valid, sse, np.inf)
    # first minimum in (feature, position) order
    flat = np.argmin(sse.T)
    j, i = divmod(int(flat), m - 1)
    return int(features[j]), 0.5 * (xs[i, j] + xs[i + 1, j]), float(sse[i, j])


def fit_tree(X, y, params: ForestParams = ForestParams(), rng: np.random.Generator | None = None) -> TreeNode:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ShapeError(f"X has shape {X.shape} for {y.size} targets")
    if y.size == 0:
        raise ValueError("cannot fit a tree to empty data")
    n_features = X.shape[1]
    k = min(params.features_per_split, n_features)
    rng = rng if rng is not None else np.random.default_rng(params.seed)

    root = TreeNode(float(y.mean()))
    stack = [(root, np.arange(y.size), 0)]
    while stack:
        node, rows, depth = stack.pop()
        ys = y[rows]
        if params.max_depth is not None and depth >= params.max_depth:
            continue
        if rows.size < 2 * params.min_samples_leaf or np.all(ys == ys[0]):
            continue
        features = np.sort(rng.choice(n_features, size=k, replace=False)) if k < n_features else np.arange(n_features)
        split = best_split(X[rows], ys, features, params.min_samples_leaf)
        if split is None:
            continue
        f, thr, sse = split
        parent_sse = float(((ys - ys.mean()) ** 2).sum())
        if not sse < parent_sse:
            continue
        go_left = X[rows, f] <= thr
        lrows, rrows = rows[go_left], rows[~go_left]
        node.feature, node.threshold = f, float(thr)
        node.left, node.right = TreeNode(float(y[lrows].mean())), TreeNode(float(y[rrows].mean()))
        stack.append((node.right, rrows, depth + 1))
        stack.append((node.left, lrows, depth + 1))
    return root


def predict_tree(tree: TreeNode, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = np.empty(X.shape[0])
    stack = [(tree, np.arange(X.shape[0]))]
    while stack:
        node, rows = stack.pop()
        if node.is_leaf:
            out[rows] = node.value
            continue
        left = X[rows, node.feature] <= node.threshold
        stack.append((node.left, rows[left]))
        stack.append((node.right, rows[~left]))
    return out


@dataclass
class Forest:
    trees: list
    n_features: int


def fit_forest(X, y, params: ForestParams = ForestParams(), rng: np.random.Generator | None = None) -> Forest:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ShapeError(f"X has shape {X.shape} for {y.size} targets")
    if y.size == 0:
        raise ValueError("cannot fit a forest to empty data")
    rng = rng if rng is not None else np.random.default_rng(params.seed)
    trees = []
    for _ in range(params.n_trees):
        rows = rng.integers(0, y.size, size=y.size) if params.bootstrap else np.arange(y.size)
        trees.append(fit_tree(X[rows], y[rows], params, rng))
    return Forest(trees, X.shape[1])


def predict(forest: Forest, X) -> np.ndarray:
    """Mean of the tree predictions for each row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != forest.n_features:
        raise ShapeError(f"forest expects {forest.n_features} features, got {X.shape[1]}")
    return np.mean([predict_tree(t, X) for t in forest.trees], axis=0)


# ---------------------------------------------------------------------------
# cross-validated baseline


def _performance_design(g: HeteroGraph):
    """Per Performance node: its algorithm index and its raw ELA row."""
    n = g.num_nodes(NodeType.PERFORMANCE)
    alg = np.empty(n, dtype=np.int64)
    prob = np.empty(n, dtype=np.int64)
    e = g.edges[HAS_ALGORITHM]
    alg[e[:, 0]] = e[:, 1]
    e = g.edges[HAS_PROBLEM]
    prob[e[:, 0]] = e[:, 1]
    return alg, g.features[NodeType.PROBLEM][prob]


def run_baseline(g: HeteroGraph, plan: CvPlan, params: ForestParams = ForestParams()) -> CvResult:
    """Per-variant forests evaluated on the same folds and repetitions as the GNN."""
    alg, X = _performance_design(g)
    out = CvResult()
    for rep in range(plan.repetitions):
        for fold in range(len(plan.outer)):
            out.folds.append(baseline_fold(g, plan, rep, fold, params, alg, X))
            o = plan.outer[fold]
            out.fits.append(FitRecord(rep, fold, None, params, o.train_instances, (), o.test_instances))
    return out


def baseline_fold(g, plan, rep, fold, params, alg=None, X=None) -> FoldResult:
    if alg is None:
        alg, X = _performance_design(g)
    train, test = plan.train_mask(fold), plan.test_mask(fold)
    idx = np.flatnonzero(test)
    pred = np.empty(idx.size)
    for a in range(g.num_nodes(NodeType.ALGORITHM)):
        tr = np.flatnonzero(train & (alg == a))
        te_local = np.flatnonzero(alg[idx] == a)
        if te_local.size == 0:
            continue
        if tr.size == 0:
            raise DataError(f"variant {g.nodes[NodeType.ALGORITHM][a]!r} has no training data in fold {fold}")
        rng = np.random.default_rng(np.random.SeedSequence(params.seed, spawn_key=(rep, fold, a)))
        forest = fit_forest(X[tr], g.targets[tr], params, rng)
        pred[te_local] = predict(forest, X[idx[te_local]])
    target = g.targets[idx]
    return FoldResult(rep, fold, params, idx, pred, target, evaluate_mse(pred, target))
