"""Comparison methods: the top-objectness-box SVM (MAX) and iterative MI-SVM.

Both reuse one deterministic L2-regularized hinge solver and emit
LinearScorer, so detection and evaluation treat every method identically.
Baseline confidences are raw decision values w.x + b (epsilon is stored as 0
and never used for scoring).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import FeatureBag, LinearScorer, Region
from .errors import (
    DimensionMismatch,
    InvalidConfig,
    NoNegatives,
    NoPositives,
)
from .evaluation import ranking_average_precision

DEFAULT_WEIGHT_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)


@dataclass(frozen=True)
class SvmConfig:
    """Inner-solver settings; weight_grid is cross-validated by the MAX baseline."""

    weight_grid: tuple[float, ...] = DEFAULT_WEIGHT_GRID
    folds: int = 3
    iterations: int = 300
    learning_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        grid = tuple(float(w) for w in self.weight_grid)
        if len(grid) == 0:
            raise InvalidConfig("weight_grid must be non-empty")
        if any(w <= 0 for w in grid):
            raise InvalidConfig("weight_grid values must be > 0")
        if self.folds < 2:
            raise InvalidConfig(f"folds must be >= 2, got {self.folds}")
        if self.iterations < 1:
            raise InvalidConfig(f"iterations must be >= 1, got {self.iterations}")
        if self.learning_rate <= 0:
            raise InvalidConfig(f"learning_rate must be > 0, got {self.learning_rate}")
        object.__setattr__(self, "weight_grid", grid)


@dataclass(frozen=True)
class MiSvmRecord:
    """Per-iteration SVM objectives and how the alternation terminated."""

    objectives: tuple[float, ...]
    converged: bool
    iterations_run: int


def decision_value(scorer: LinearScorer, region: Region) -> float:
    """Uncalibrated SVM confidence w.x + b for one region."""
    if region.dim != scorer.dim:
        raise DimensionMismatch(f"region dim {region.dim} != scorer dim {scorer.dim}")
    return float(scorer.w @ region.feature.astype(np.float64)) + scorer.b


def _hinge_objective(X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float,
                     weight: float) -> float:
    margins = 1.0 - y * (X @ w + b)
    return 0.5 * float(w @ w) + weight * float(np.mean(np.maximum(margins, 0.0)))


def train_linear_svm(samples: Sequence[tuple[np.ndarray, int]], weight: float,
                     config: SvmConfig, class_name: str = "svm") -> LinearScorer:
    """L2-regularized hinge loss minimized by full-batch subgradient descent.

    Objective 0.5*||w||^2 + weight * mean(hinge); starts from w=0, b=0 with a
    fixed step size, so the result is deterministic for a given sample order.
    """
    if weight <= 0:
        raise InvalidConfig(f"weight must be > 0, got {weight}")
    X = np.asarray([np.asarray(f, dtype=np.float64) for f, _ in samples])
    y = np.asarray([label for _, label in samples], dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch("samples must share one feature dimension")
    if not np.any(y > 0):
        raise NoPositives("SVM training requires a positive sample")
    if not np.any(y < 0):
        raise NoNegatives("SVM training requires a negative sample")
    n, m = X.shape
    w = np.zeros(m)
    b = 0.0
    for _ in range(config.iterations):
        margins = 1.0 - y * (X @ w + b)
        active = margins > 0.0
        coeff = np.where(active, -y, 0.0) * (weight / n)
        grad_w = w + coeff @ X
        grad_b = float(np.sum(coeff))
        w = w - config.learning_rate * grad_w
        b = b - config.learning_rate * grad_b
    return LinearScorer(
        class_name=class_name, w=w, b=b, epsilon=0.0,
        final_loss=_hinge_objective(X, y, w, b, weight), seed_used=config.seed,
    )


def _top_objectness_region(bag: FeatureBag) -> Region:
    # argmax objectness, lowest index on ties
    best = 0
    for i, r in enumerate(bag.regions):
        if r.objectness > bag.regions[best].objectness:
            best = i
    return bag.regions[best]


def _cv_folds(n: int, folds: int, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    return [perm[f::folds] for f in range(folds)]


def train_max_baseline(bags: Sequence[FeatureBag], class_name: str,
                       config: SvmConfig) -> LinearScorer:
    """Reduce every bag to its top-objectness region, then cross-validated SVM.

    The hinge weight is selected by mean AP over the folds (smaller weight on
    ties) and the final model is retrained on all reduced samples. At test
    time the SVM scores every region via its decision value.
    """
    bags = list(bags)
    reduced = [(_top_objectness_region(bag).feature.astype(np.float64),
                bag.labels[class_name]) for bag in bags]
    labels = np.asarray([y for _, y in reduced])
    if not np.any(labels > 0):
        raise NoPositives(f"class {class_name!r} has no positive bags")
    if not np.any(labels < 0):
        raise NoNegatives(f"class {class_name!r} has no negative bags")

    folds = _cv_folds(len(reduced), config.folds, config.seed)
    best_weight = None
    best_ap = -1.0
    for weight in config.weight_grid:
        aps = []
        for f, held in enumerate(folds):
            held_set = set(int(i) for i in held)
            train = [reduced[i] for i in range(len(reduced)) if i not in held_set]
            ytr = [y for _, y in train]
            yho = [reduced[i][1] for i in sorted(held_set)]
            if not (any(y > 0 for y in ytr) and any(y < 0 for y in ytr)
                    and any(y > 0 for y in yho)):
                continue  # fold unusable for AP
            svm = train_linear_svm(train, weight, config, class_name)
            scores = [float(svm.w @ reduced[i][0]) + svm.b for i in sorted(held_set)]
            ap = ranking_average_precision(scores, yho, "all_points")
            if ap is not None:
                aps.append(ap)
        mean_ap = sum(aps) / len(aps) if aps else 0.0
        if mean_ap > best_ap:  # strict: ties keep the earlier (smaller) weight
            best_ap = mean_ap
            best_weight = weight
    return train_linear_svm(reduced, best_weight, config, class_name)


def _initial_representatives(bags: Sequence[FeatureBag]) -> list[int]:
    """Per positive bag: index of the region nearest the bag's mean feature."""
    reps = []
    for bag in bags:
        feats = np.stack([r.feature.astype(np.float64) for r in bag.regions])
        mean = feats.mean(axis=0)
        d2 = np.sum((feats - mean) ** 2, axis=1)
        reps.append(int(np.argmin(d2)))
    return reps


def train_mi_svm(bags: Sequence[FeatureBag], class_name: str, config: SvmConfig,
                 max_iterations: int = 50,
                 weight: float = 1.0) -> tuple[LinearScorer, MiSvmRecord]:
    """Alternating MI-SVM: fit on representatives, re-pick each positive bag's argmax.

    Positive bags start from their mean-nearest region; negatives contribute
    all regions every round. Stops at a representative fixed point or after
    max_iterations alternations (max_iterations=0 fits once on the initial
    representatives).
    """
    bags = list(bags)
    pos_bags = [b for b in bags if b.labels[class_name] == 1]
    neg_bags = [b for b in bags if b.labels[class_name] == -1]
    if not pos_bags:
        raise NoPositives(f"class {class_name!r} has no positive bags")
    if not neg_bags:
        raise NoNegatives(f"class {class_name!r} has no negative bags")

    neg_samples = [(r.feature.astype(np.float64), -1)
                   for bag in neg_bags for r in bag.regions]
    reps = _initial_representatives(pos_bags)

    def fit(current: list[int]) -> LinearScorer:
        pos_samples = [(bag.regions[k].feature.astype(np.float64), 1)
                       for bag, k in zip(pos_bags, current)]
        return train_linear_svm(pos_samples + neg_samples, weight, config, class_name)

    objectives: list[float] = []
    if max_iterations == 0:
        svm = fit(reps)
        objectives.append(svm.final_loss)
        return svm, MiSvmRecord(tuple(objectives), converged=False, iterations_run=0)

    svm = None
    converged = False
    iterations_run = 0
    for _ in range(max_iterations):
        svm = fit(reps)
        objectives.append(svm.final_loss)
        iterations_run += 1
        new_reps = []
        for bag in pos_bags:
            values = [decision_value(svm, r) for r in bag.regions]
            new_reps.append(int(np.argmax(values)))
        if new_reps == reps:
            converged = True
            break
        reps = new_reps
    return svm, MiSvmRecord(tuple(objectives), converged, iterations_run)
