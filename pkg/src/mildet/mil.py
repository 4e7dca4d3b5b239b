"""Multiple-instance trainer: tanh-smoothed max-over-regions loss, SGD, restarts.

The training objective for one category, over N images each holding K_i
regions with features X_ik, objectness s_ik and image label y_i in {+1,-1}:

    data term   phi   = sum_i (-y_i / n_{y_i}) * tanh( max_k (w.X_ik + b) )
    weighted    phi_s = sum_i (-y_i / n_{y_i}) * tanh( max_k (s_ik + eps)(w.X_ik + b) )
    full loss   L     = (phi or phi_s) + C * ||w||^2

n_pos / n_neg are always the full-training-set counts, even when gradients
are taken on minibatches, so the objective does not depend on batch makeup.
The subgradient at the max picks the lowest region index on ties.

Region scores are evaluated in float32 on the SGD hot path (the archive's
native precision) and promoted to float64 for accumulation; the public
diagnostic ops (loss_phi, loss_phi_s, regularized_loss, loss_gradient)
compute entirely in float64 so finite-difference checks are meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .core import FeatureBag, LinearScorer, Region, TrainConfig
from .errors import (
    CountMismatch,
    DimensionMismatch,
    EmptyBatch,
    InvalidConfig,
    NoNegatives,
    NoPositives,
    SplitTooSmall,
)

# Bags processed per vectorized block; constant so that summation order (and
# therefore every trained model) is independent of dataset size.
CHUNK_BAGS = 128


@dataclass(frozen=True)
class ClassCounts:
    """Full-training-set positive/negative image counts for one class."""

    n_pos: int
    n_neg: int

    def __post_init__(self):
        if self.n_pos < 1:
            raise NoPositives(f"n_pos must be >= 1, got {self.n_pos}")
        if self.n_neg < 1:
            raise NoNegatives(f"n_neg must be >= 1, got {self.n_neg}")


@dataclass(frozen=True)
class RestartResult:
    seed: int
    data_loss: float
    regularized_loss: float


@dataclass(frozen=True)
class TrainRecord:
    """Per-restart outcomes plus grid-search bookkeeping when it ran."""

    restarts: tuple[RestartResult, ...]
    chosen_index: int
    chosen_c: float | None = None
    validation_losses: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "restarts", tuple(self.restarts))
        if self.validation_losses is not None:
            object.__setattr__(self, "validation_losses", tuple(self.validation_losses))
        losses = [r.data_loss for r in self.restarts]
        if not losses:
            raise InvalidConfig("TrainRecord requires at least one restart")
        if self.restarts[self.chosen_index].data_loss != min(losses):
            raise InvalidConfig("chosen restart does not minimize the data-term loss")


class RegionStack:
    """Bags stacked into padded arrays for one class: the trainer's working set.

    X is (N, Kmax, M) float32 with zero padding, `valid` marks real regions,
    `y` holds the class's image labels. Any object exposing the same
    attributes and ``iter_chunks`` works as a dataset (the archive module
    provides a disk-streaming equivalent for data too big for memory).
    """

    def __init__(self, X: np.ndarray, obj: np.ndarray, valid: np.ndarray, y: np.ndarray):
        self.X = X
        self.obj = obj
        self.valid = valid
        self.y = y
        self.n = X.shape[0]
        self.kmax = X.shape[1]
        self.dim = X.shape[2]

    @classmethod
    def from_bags(cls, bags: Sequence[FeatureBag], class_name: str,
                  normalize: bool = False) -> "RegionStack":
        if len(bags) == 0:
            raise EmptyBatch("no bags supplied")
        dim = bags[0].dim
        kmax = 0
        for bag in bags:
            if bag.dim != dim:
                raise DimensionMismatch(
                    f"bag {bag.image_id!r} has dim {bag.dim}, expected {dim}"
                )
            kmax = max(kmax, len(bag.regions))
        n = len(bags)
        X = np.zeros((n, kmax, dim), dtype=np.float32)
        obj = np.zeros((n, kmax), dtype=np.float32)
        valid = np.zeros((n, kmax), dtype=bool)
        y = np.zeros(n, dtype=np.int8)
        for i, bag in enumerate(bags):
            if class_name not in bag.labels:
                raise CountMismatch(
                    f"bag {bag.image_id!r} has no label for class {class_name!r}"
                )
            y[i] = bag.labels[class_name]
            k = len(bag.regions)
            for j, r in enumerate(bag.regions):
                X[i, j] = l2_normalize(r.feature) if normalize else r.feature
                obj[i, j] = r.objectness
            valid[i, :k] = True
        return cls(X, obj, valid, y)

    def iter_chunks(
        self, indices: np.ndarray | None = None, chunk: int = CHUNK_BAGS
    ) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
        """Yield (X, obj, valid, y) blocks of at most `chunk` bags."""
        if indices is None:
            for start in range(0, self.n, chunk):
                sl = slice(start, min(start + chunk, self.n))
                yield self.X[sl], self.obj[sl], self.valid[sl], self.y[sl]
        else:
            for start in range(0, len(indices), chunk):
                sel = indices[start : start + chunk]
                yield self.X[sel], self.obj[sel], self.valid[sel], self.y[sel]


def l2_normalize(feature: np.ndarray) -> np.ndarray:
    """Unit-L2 copy of one feature vector (zero vectors pass through)."""
    f = np.asarray(feature, dtype=np.float32)
    norm = float(np.linalg.norm(f))
    return f / norm if norm > 0.0 else f


def normalized_region(region: Region) -> Region:
    """The same region with its feature rescaled to unit L2."""
    return Region(box=region.box, objectness=region.objectness,
                  feature=l2_normalize(region.feature))


def _as_dataset(bags, class_name: str, normalize: bool = False):
    """Accept a bag list or anything already shaped like a dataset."""
    if hasattr(bags, "iter_chunks"):
        return bags
    return RegionStack.from_bags(list(bags), class_name, normalize=normalize)


def class_counts(bags, class_name: str) -> ClassCounts:
    """Full-dataset ClassCounts for one class; raises if a polarity is missing."""
    ds = _as_dataset(bags, class_name)
    n_pos = int(np.sum(ds.y > 0))
    n_neg = int(np.sum(ds.y < 0))
    if n_pos < 1:
        raise NoPositives(f"class {class_name!r} has no positive bags")
    if n_neg < 1:
        raise NoNegatives(f"class {class_name!r} has no negative bags")
    return ClassCounts(n_pos, n_neg)


def _check_dims(ds, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != ds.dim:
        raise DimensionMismatch(f"w has shape {w.shape}, features have dim {ds.dim}")
    return w


def _check_counts(ds, counts: ClassCounts, indices=None) -> None:
    # counts are dataset-level normalizers; they may exceed, but never
    # undercut, what the supplied bags demonstrate.
    y = ds.y if indices is None else ds.y[indices]
    if counts.n_pos < int(np.sum(y > 0)) or counts.n_neg < int(np.sum(y < 0)):
        raise CountMismatch(
            f"counts ({counts.n_pos},{counts.n_neg}) smaller than observed "
            f"({int(np.sum(y > 0))},{int(np.sum(y < 0))})"
        )


def _chunk_max(X, obj, valid, w, b, epsilon, score_weighted, dtype):
    """Per-bag argmax index and max value of the (optionally score-weighted) affine."""
    n, k, m = X.shape
    wd = w.astype(dtype, copy=False)
    aff = (X.reshape(n * k, m).astype(dtype, copy=False) @ wd).reshape(n, k)
    aff += dtype(b)
    if score_weighted:
        val = (obj.astype(dtype, copy=False) + dtype(epsilon)) * aff
    else:
        val = aff
    val[~valid] = -np.inf  # padding slots never win the max
    kstar = np.argmax(val, axis=1)  # first index wins ties
    u = val[np.arange(n), kstar]
    return kstar, u


def _data_loss(ds, counts: ClassCounts, w, b, epsilon, score_weighted, indices=None) -> float:
    terms: list[float] = []
    for X, obj, valid, y in ds.iter_chunks(indices):
        _, u = _chunk_max(X, obj, valid, w, b, epsilon, score_weighted, np.float64)
        t = np.tanh(u)
        ny = np.where(y > 0, counts.n_pos, counts.n_neg).astype(np.float64)
        terms.extend((-y.astype(np.float64) / ny) * t)
    # fsum makes the total exactly independent of bag order.
    return math.fsum(terms)


def _gradient(ds, counts, w, b, epsilon, C, score_weighted, indices=None, dtype=np.float64):
    grad_w = np.zeros(ds.dim, dtype=np.float64)
    grad_b = 0.0
    for X, obj, valid, y in ds.iter_chunks(indices):
        n = X.shape[0]
        kstar, u = _chunk_max(X, obj, valid, w, b, epsilon, score_weighted, dtype)
        t = np.tanh(u.astype(np.float64, copy=False))
        ny = np.where(y > 0, counts.n_pos, counts.n_neg).astype(np.float64)
        coeff = (-y.astype(np.float64) / ny) * (1.0 - t * t)
        if score_weighted:
            coeff *= obj[np.arange(n), kstar].astype(np.float64) + epsilon
        sel = X[np.arange(n), kstar]  # (n, M), argmax features only
        grad_w += coeff @ sel
        grad_b += float(np.sum(coeff))
    grad_w += 2.0 * C * w
    return grad_w, grad_b


def loss_phi(w, b, bags, class_name: str, counts: ClassCounts) -> float:
    """Unweighted data term: sum_i (-y_i/n_{y_i}) tanh(max_k w.X_ik + b)."""
    ds = _as_dataset(bags, class_name)
    w = _check_dims(ds, w)
    _check_counts(ds, counts)
    return _data_loss(ds, counts, w, float(b), 0.0, False)


def loss_phi_s(w, b, bags, class_name: str, counts: ClassCounts, epsilon: float) -> float:
    """Score-weighted data term; the max runs over (s_ik+eps)(w.X_ik+b)."""
    if epsilon < 0:
        raise InvalidConfig(f"epsilon must be >= 0, got {epsilon}")
    ds = _as_dataset(bags, class_name)
    w = _check_dims(ds, w)
    _check_counts(ds, counts)
    return _data_loss(ds, counts, w, float(b), float(epsilon), True)


def regularized_loss(
    w, b, bags, class_name: str, counts: ClassCounts, epsilon: float, C: float,
    score_weighted: bool = True,
) -> float:
    """Data term plus C*||w||^2 (the constant multiplies the regularizer only)."""
    if C < 0:
        raise InvalidConfig(f"C must be >= 0, got {C}")
    ds = _as_dataset(bags, class_name)
    w = _check_dims(ds, w)
    _check_counts(ds, counts)
    data = _data_loss(ds, counts, w, float(b), float(epsilon), score_weighted)
    return data + C * float(w @ w)


def loss_gradient(
    w, b, batch, class_name: str, counts: ClassCounts, epsilon: float, C: float,
    score_weighted: bool = True,
):
    """Subgradient of the regularized loss on a batch of bags.

    Each bag contributes through its argmax region only (lowest index on
    ties): (-y_i/n_{y_i}) * (1-tanh^2(u_i)) * (s+eps) * X at the argmax for
    grad_w (the (s+eps) factor is dropped when unweighted), the same
    coefficient without X for grad_b, plus 2*C*w from the regularizer.
    """
    ds = _as_dataset(batch, class_name)
    if ds.n == 0:
        raise EmptyBatch("gradient requires a non-empty batch")
    w = _check_dims(ds, w)
    _check_counts(ds, counts)
    return _gradient(ds, counts, w, float(b), float(epsilon), float(C), score_weighted)


def _train_core(ds, counts: ClassCounts, config: TrainConfig, C: float, seed: int,
                class_name: str) -> LinearScorer:
    rng = np.random.default_rng(seed)
    m = ds.dim
    w = rng.normal(0.0, 1.0 / math.sqrt(m), size=m)
    b = 0.0
    for _ in range(config.iterations):
        if ds.n <= config.batch_size:
            idx = None  # full batch, no RNG draw
        else:
            idx = rng.choice(ds.n, size=config.batch_size, replace=False)
        gw, gb = _gradient(
            ds, counts, w, b, config.epsilon, C, config.score_weighted,
            indices=idx, dtype=np.float32,
        )
        w = w - config.learning_rate * gw
        b = b - config.learning_rate * gb
    final = _data_loss(ds, counts, w, b, config.epsilon, config.score_weighted)
    return LinearScorer(
        class_name=class_name, w=w, b=float(b), epsilon=config.epsilon,
        final_loss=final, seed_used=seed,
    )


def train_one(bags, class_name: str, config: TrainConfig, C: float | None = None,
              seed: int | None = None) -> LinearScorer:
    """One SGD run: Gaussian init (std 1/sqrt(M), b=0), `config.iterations` fixed-rate steps.

    Uses the full dataset per step when N <= batch_size, otherwise a batch
    sampled uniformly without replacement; n_pos/n_neg stay the full-dataset
    counts. Deterministic given (seed, config, bag order).
    """
    ds = _as_dataset(bags, class_name, config.normalize_features)
    counts = class_counts(ds, class_name)
    return _train_core(
        ds, counts, config,
        config.C if C is None else float(C),
        config.seed if seed is None else int(seed),
        class_name,
    )


def train_restarts(bags, class_name: str, config: TrainConfig,
                   C: float | None = None) -> tuple[LinearScorer, TrainRecord]:
    """Run `config.restarts` independent inits (seeds seed+0..seed+R-1), keep the best.

    Selection minimizes the data term on the full training data (regularizer
    excluded); ties go to the lower restart index, so any parallel schedule
    reduces to the same winner.
    """
    ds = _as_dataset(bags, class_name, config.normalize_features)
    counts = class_counts(ds, class_name)
    C = config.C if C is None else float(C)
    scorers: list[LinearScorer] = []
    results: list[RestartResult] = []
    for i in range(config.restarts):
        s = _train_core(ds, counts, config, C, config.seed + i, class_name)
        scorers.append(s)
        results.append(RestartResult(
            seed=s.seed_used,
            data_loss=s.final_loss,
            regularized_loss=s.final_loss + C * float(s.w @ s.w),
        ))
    chosen = min(range(len(results)), key=lambda i: (results[i].data_loss, i))
    record = TrainRecord(restarts=tuple(results), chosen_index=chosen)
    return scorers[chosen], record


def stratified_split(bags: Sequence[FeatureBag], class_name: str, val_fraction: float,
                     seed: int) -> tuple[list[FeatureBag], list[FeatureBag]]:
    """Deterministic train/validation split, stratified on the class label.

    The validation side receives round(val_fraction * n) bags per polarity,
    clamped so both splits keep at least one of each; raises SplitTooSmall
    when a polarity has fewer than two bags.
    """
    bags = list(bags)
    pos = [i for i, bag in enumerate(bags) if bag.labels.get(class_name) == 1]
    neg = [i for i, bag in enumerate(bags) if bag.labels.get(class_name) == -1]
    if len(pos) < 2 or len(neg) < 2:
        raise SplitTooSmall(
            f"class {class_name!r} needs >= 2 bags of each polarity to split "
            f"(have {len(pos)} positive, {len(neg)} negative)"
        )
    rng = np.random.default_rng(seed)
    val_idx: set[int] = set()
    for group in (pos, neg):
        take = int(round(val_fraction * len(group)))
        take = min(max(take, 1), len(group) - 1)
        perm = rng.permutation(len(group))
        val_idx.update(group[j] for j in perm[:take])
    train = [bags[i] for i in range(len(bags)) if i not in val_idx]
    val = [bags[i] for i in range(len(bags)) if i in val_idx]
    return train, val


def grid_search_c(bags, class_name: str, config: TrainConfig) -> tuple[LinearScorer, TrainRecord]:
    """Grid search on C against a held-out validation split.

    For each C in config.C_grid, trains with restarts on the train split and
    scores the winner by the score-weighted data term (or phi when
    unweighted) on the validation split; the (w, b, C) with the smallest
    validation loss wins, lower C on ties.
    """
    if config.C_grid is None:
        raise InvalidConfig("grid_search_c requires config.C_grid")
    bags = list(bags)
    train, val = stratified_split(bags, class_name, config.val_fraction, config.seed)
    val_ds = _as_dataset(val, class_name, config.normalize_features)
    val_counts = class_counts(val_ds, class_name)
    candidates: list[tuple[float, LinearScorer, TrainRecord, float]] = []
    for c in config.C_grid:
        scorer, record = train_restarts(train, class_name, config, C=c)
        vloss = _data_loss(
            val_ds, val_counts, scorer.w, scorer.b, config.epsilon, config.score_weighted
        )
        candidates.append((c, scorer, record, vloss))
    best = min(range(len(candidates)), key=lambda i: (candidates[i][3], i))
    c_star, scorer, record, _ = candidates[best]
    full_record = TrainRecord(
        restarts=record.restarts,
        chosen_index=record.chosen_index,
        chosen_c=c_star,
        validation_losses=tuple((c, v) for c, _, _, v in candidates),
    )
    return scorer, full_record


def score_region(scorer: LinearScorer, region: Region) -> float:
    """Detection score tanh((s+eps)(w.x+b)); sign follows w.x+b since s+eps > 0."""
    if region.dim != scorer.dim:
        raise DimensionMismatch(
            f"region dim {region.dim} != scorer dim {scorer.dim}"
        )
    affine = float(scorer.w @ region.feature.astype(np.float64)) + scorer.b
    return math.tanh((region.objectness + scorer.epsilon) * affine)
