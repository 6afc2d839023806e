"""Full-graph training and leave-instance-out nested cross-validation.

Seeds: every job draws its generator from
``SeedSequence(TrainConfig.seed, spawn_key=(repetition, outer_fold, cell, inner_fold))``
where ``cell`` indexes the hyperparameter grid and ``inner_fold`` is -1 for
the outer retrain (stored as ``2**32 - 1``). Jobs are therefore independent
of execution order and of each other.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, TrainingError
from .hetgraph import HeteroGraph, add_reverse_relations
from .ingest import performance_instances, standardize_problem_features
from .model import Hyperparams, ModelParams, init_model, model_forward

logger = logging.getLogger(__name__)

OUTER = 2**32 - 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr0: float = 0.1
    plateau_patience: int = 20
    lr_factor: float = 0.5
    plateau_tolerance: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0 < self.lr_factor < 1:
            raise ConfigError("lr_factor must lie in (0, 1)")
        if self.plateau_patience < 1:
            raise ConfigError("plateau_patience must be >= 1")
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")


class PlateauScheduler:
    """Halve the learning rate after ``patience`` epochs without improvement.

    An epoch improves when its loss is below ``best - tolerance``. The
    stagnation counter resets after every reduction.
    """

    def __init__(self, lr, patience=20, factor=0.5, tolerance=1e-4):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.tolerance = tolerance
        self.best = math.inf
        self.stagnant = 0

    def step(self, loss: float) -> bool:
        """Record one epoch's monitored loss; return True if the rate was reduced."""
        if loss < self.best - self.tolerance:
            self.best = loss
            self.stagnant = 0
            return False
        self.stagnant += 1
        if self.stagnant >= self.patience:
            self.lr *= self.factor
            self.stagnant = 0
            return True
        return False


def evaluate_mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions for {target.size} targets")
    if pred.size == 0:
        raise ValueError("evaluate_mse needs at least one value")
    return float(np.mean((pred - target) ** 2))


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = math.inf


def train_model(
    g: HeteroGraph,
    train_mask,
    val_mask,
    hp: Hyperparams,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> tuple[ModelParams, History]:
    """Train on ``train_mask`` nodes; keep the parameters of the best monitored epoch.

    The monitored loss is the eval-mode L1 on ``val_mask``. When ``val_mask``
    is None (final retrain without a held-out split) the eval-mode L1 on the
    training nodes is monitored instead.
    """
    train_mask = np.asarray(train_mask, dtype=bool)
    if not train_mask.any():
        raise ValueError("training mask is empty")
    if val_mask is not None:
        val_mask = np.asarray(val_mask, dtype=bool)
        if not val_mask.any():
            raise ValueError("validation mask is empty")
        if (train_mask & val_mask).any():
            raise ValueError("training and validation masks overlap")
    monitor = train_mask if val_mask is None else val_mask

    params = init_model(g, hp, rng)
    tensors = params.parameters()
    state = ad.AdamState()
    sched = PlateauScheduler(cfg.lr0, cfg.plateau_patience, cfg.lr_factor, cfg.plateau_tolerance)
    target = np.where(np.isfinite(g.targets), g.targets, 0.0).reshape(-1, 1)
    hist = History()
    best = params.snapshot()

    for epoch in range(1, cfg.epochs + 1):
        loss = ad.l1_loss(model_forward(g, params, hp, training=True, rng=rng), target, train_mask)
        if not math.isfinite(loss.item()):
            raise TrainingError(f"training loss became non-finite at epoch {epoch}", epoch=epoch)
        loss.backward()
        for t in tensors:
            # parameters outside the loss's receptive field have zero gradient
            if t.grad is None:
                t.grad = np.zeros(t.shape)
        ad.adam_step(tensors, state, sched.lr)

        pred = model_forward(g, params, hp, training=False).data
        monitored = float(np.abs(pred - target)[monitor].mean())
        if not math.isfinite(monitored):
            raise TrainingError(f"validation loss became non-finite at epoch {epoch}", epoch=epoch)
        hist.train_loss.append(loss.item())
        hist.val_loss.append(monitored)
        if monitored < hist.best_val:
            hist.best_val, hist.best_epoch = monitored, epoch
            best = params.snapshot()
        sched.step(monitored)
        hist.lr.append(sched.lr)

    params.restore(best)
    return params, hist


# ---------------------------------------------------------------------------
# cross-validation plan


@dataclass(frozen=True)
class Fold:
    test_instances: tuple
    train_instances: tuple


@dataclass
class CvPlan:
    """Leave-instance-out outer folds, each with its own inner folds."""

    instances: tuple
    node_instances: np.ndarray  # instance id of every Performance node
    labeled: np.ndarray
    outer: list  # list[Fold]
    inner: list  # per outer fold: list[Fold]
    repetitions: int

    def test_mask(self, fold: int) -> np.ndarray:
        return self.mask(self.outer[fold].test_instances)

    def train_mask(self, fold: int) -> np.ndarray:
        return self.mask(self.outer[fold].train_instances)

    def mask(self, instances) -> np.ndarray:
        return np.isin(self.node_instances, list(instances)) & self.labeled

    def mask_hash(self) -> str:
        """Digest of every outer and inner mask, for comparing runs."""
        h = hashlib.sha256()
        for k, f in enumerate(self.outer):
            h.update(np.packbits(self.train_mask(k)).tobytes())
            h.update(np.packbits(self.test_mask(k)).tobytes())
            for inner in self.inner[k]:
                h.update(np.packbits(self.mask(inner.train_instances)).tobytes())
                h.update(np.packbits(self.mask(inner.test_instances)).tobytes())
        return h.hexdigest()


def make_cv_plan(g: HeteroGraph, repetitions: int = 10, instances=None) -> CvPlan:
    """Outer fold k holds out every node of the k-th instance id.

    Inner folds repeat the scheme over the remaining instances; with fewer
    than two remaining instances there are no inner folds.
    """
    if repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    node_inst = performance_instances(g)
    present = tuple(sorted(set(node_inst[g.labeled].tolist())))
    expected = tuple(sorted(instances)) if instances is not None else present
    missing = sorted(set(expected) - set(present))
    if missing:
        raise DataError(f"no labeled Performance nodes for instance id(s) {missing}")
    if len(expected) < 2:
        raise DataError(f"leave-instance-out needs at least 2 instances, found {list(expected)}")

    outer, inner = [], []
    for held in expected:
        rest = tuple(i for i in expected if i != held)
        outer.append(Fold((held,), rest))
        if len(rest) >= 2:
            inner.append([Fold((v,), tuple(i for i in rest if i != v)) for v in rest])
        else:
            inner.append([])
    return CvPlan(expected, node_inst, g.labeled.copy(), outer, inner, repetitions)


def job_rng(root_seed: int, repetition: int, outer_fold: int, cell: int = 0, inner_fold: int = OUTER):
    seq = np.random.SeedSequence(root_seed, spawn_key=(repetition, outer_fold, cell, inner_fold))
    return np.random.default_rng(seq)


# ---------------------------------------------------------------------------
# nested cross-validation


@dataclass(frozen=True)
class FitRecord:
    """Which instances a single fitted model saw; used for leakage audits."""

    repetition: int
    outer_fold: int
    inner_fold: int | None
    hyperparams: object
    train_instances: tuple
    val_instances: tuple
    test_instances: tuple


@dataclass
class FoldResult:
    repetition: int
    outer_fold: int
    hyperparams: object
    node_indices: np.ndarray
    predictions: np.ndarray
    targets: np.ndarray
    mse: float
    inner_scores: dict = field(default_factory=dict)


@dataclass
class CvResult:
    folds: list = field(default_factory=list)
    fits: list = field(default_factory=list)

    @property
    def mean_mse(self) -> float:
        return float(np.mean([f.mse for f in self.folds]))

    def sorted(self) -> "CvResult":
        key = lambda f: (f.repetition, f.outer_fold)
        return CvResult(sorted(self.folds, key=key), list(self.fits))


def select_hyperparams(scores: dict) -> Hyperparams:
    """Lowest mean inner L1; ties go to the smaller embedding, then smaller dropout."""
    return min(scores, key=lambda hp: (scores[hp], hp.embedding_size, hp.dropout))


def _prepared(g: HeteroGraph) -> HeteroGraph:
    if not any(r.is_reverse for r in g.edges):
        g = add_reverse_relations(g)
    return g


def run_outer_fold(
    g: HeteroGraph,
    plan: CvPlan,
    repetition: int,
    fold: int,
    grid,
    cfg: TrainConfig,
) -> tuple[FoldResult, list]:
    """Inner selection (skipped for a single-cell grid), retrain, outer test."""
    g = _prepared(g)
    grid = list(grid)
    if not grid:
        raise ConfigError("hyperparameter grid is empty")
    outer = plan.outer[fold]
    fits = []
    scores = {}
    if len(grid) > 1:
        if not plan.inner[fold]:
            raise ConfigError(
                f"outer fold {fold} has no inner folds; grid search needs at least 3 instances"
            )
        for cell, hp in enumerate(grid):
            losses = []
            for k, inner in enumerate(plan.inner[fold]):
                gi = standardize_problem_features(g, inner.train_instances)
                try:
                    _, hist = train_model(
                        gi,
                        plan.mask(inner.train_instances),
                        plan.mask(inner.test_instances),
                        hp,
                        cfg,
                        job_rng(cfg.seed, repetition, fold, cell, k),
                    )
                except TrainingError as exc:
                    raise TrainingError(
                        f"repetition {repetition}, outer fold {fold}, inner fold {k}, {hp.label}: {exc}",
                        epoch=exc.epoch,
                    ) from exc
                losses.append(hist.best_val)
                fits.append(
                    FitRecord(repetition, fold, k, hp, inner.train_instances, inner.test_instances, outer.test_instances)
                )
            scores[hp] = float(np.mean(losses))
        chosen = select_hyperparams(scores)
    else:
        chosen = grid[0]

    cell = grid.index(chosen)
    go = standardize_problem_features(g, outer.train_instances)
    train_mask = plan.mask(outer.train_instances)
    try:
        params, _ = train_model(go, train_mask, None, chosen, cfg, job_rng(cfg.seed, repetition, fold, cell))
    except TrainingError as exc:
        raise TrainingError(
            f"repetition {repetition}, outer fold {fold}, retrain with {chosen.label}: {exc}", epoch=exc.epoch
        ) from exc
    fits.append(FitRecord(repetition, fold, None, chosen, outer.train_instances, (), outer.test_instances))

    test = plan.test_mask(fold)
    idx = np.flatnonzero(test)
    pred = model_forward(go, params, chosen, training=False).data[idx, 0]
    target = g.targets[idx]
    result = FoldResult(repetition, fold, chosen, idx, pred, target, evaluate_mse(pred, target), scores)
    logger.info("rep %d fold %d %s mse=%.4f", repetition, fold, chosen.label, result.mse)
    return result, fits


def nested_cv(g: HeteroGraph, plan: CvPlan, grid, cfg: TrainConfig) -> CvResult:
    """Run every (repetition, outer fold) of ``plan`` sequentially."""
    out = CvResult()
    for rep in range(plan.repetitions):
        for fold in range(len(plan.outer)):
            res, fits = run_outer_fold(g, plan, rep, fold, grid, cfg)
            out.folds.append(res)
            out.fits.extend(fits)
    return out
