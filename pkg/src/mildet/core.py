"""Domain types shared by every module: boxes, regions, bags, scorers, configs.

All types are immutable after construction and validate their invariants in
``__post_init__``, so an instance that exists is well formed. Feature vectors
are held as read-only float32 arrays (the archive's native precision);
training promotes to float64 internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyBag,
    InvalidBox,
    InvalidConfig,
    InvalidLabel,
    InvalidObjectness,
)

POSITIVE = 1
NEGATIVE = -1


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in original-image pixel coordinates, x1 < x2, y1 < y2."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise InvalidBox(f"non-finite coordinate in {self.as_tuple()}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise InvalidBox(f"degenerate box {self.as_tuple()}")

    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class Region:
    """One candidate region: box, class-agnostic objectness in [0,1], feature vector."""

    box: BoundingBox
    objectness: float
    feature: np.ndarray

    def __post_init__(self):
        if not (math.isfinite(self.objectness) and 0.0 <= self.objectness <= 1.0):
            raise InvalidObjectness(f"objectness {self.objectness} outside [0,1]")
        feat = np.asarray(self.feature, dtype=np.float32)
        if feat.ndim != 1 or feat.size == 0:
            raise DimensionMismatch(f"feature must be a non-empty 1-d vector, got shape {feat.shape}")
        object.__setattr__(self, "feature", _readonly(feat))

    @property
    def dim(self) -> int:
        return self.feature.shape[0]


@dataclass(frozen=True)
class FeatureBag:
    """One image's regions plus its per-class image-level labels in {+1, -1}.

    Region order is preserved exactly as given; the number of regions K may
    vary across bags but must be at least 1.
    """

    image_id: str
    regions: tuple[Region, ...]
    labels: Mapping[str, int]

    def __post_init__(self):
        regions = tuple(self.regions)
        if len(regions) == 0:
            raise EmptyBag(f"bag {self.image_id!r} has no regions")
        dim = regions[0].dim
        for r in regions:
            if r.dim != dim:
                raise DimensionMismatch(
                    f"bag {self.image_id!r}: feature dims differ ({r.dim} vs {dim})"
                )
        labels = dict(self.labels)
        for cls, y in labels.items():
            if y not in (POSITIVE, NEGATIVE):
                raise InvalidLabel(f"bag {self.image_id!r}: label for {cls!r} must be +1/-1, got {y}")
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return self.regions[0].dim

    def __len__(self) -> int:
        return len(self.regions)


def validate_bag(bag: FeatureBag, expected_dim: int) -> None:
    """Check every FeatureBag invariant plus agreement with the archive-wide dim.

    Construction already guarantees the intrinsic invariants; this re-checks
    them so corrupted or hand-built objects fail loudly at load time.
    """
    if len(bag.regions) == 0:
        raise EmptyBag(f"bag {bag.image_id!r} has no regions")
    for r in bag.regions:
        if r.dim != expected_dim:
            raise DimensionMismatch(
                f"bag {bag.image_id!r}: feature dim {r.dim} != expected {expected_dim}"
            )
        if not (0.0 <= r.objectness <= 1.0):
            raise InvalidObjectness(
                f"bag {bag.image_id!r}: objectness {r.objectness} outside [0,1]"
            )
        if not (r.box.x1 < r.box.x2 and r.box.y1 < r.box.y2):
            raise InvalidBox(f"bag {bag.image_id!r}: degenerate box {r.box.as_tuple()}")


@dataclass(frozen=True)
class LinearScorer:
    """A trained (w, b) for one category, with the loss it achieved."""

    class_name: str
    w: np.ndarray
    b: float
    epsilon: float
    final_loss: float
    seed_used: int

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise DimensionMismatch(f"w must be a non-empty 1-d vector, got shape {w.shape}")
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0.0):
            raise InvalidConfig(f"epsilon must be >= 0, got {self.epsilon}")
        object.__setattr__(self, "w", _readonly(w))

    @property
    def dim(self) -> int:
        return self.w.shape[0]


# Paper-reported training defaults: 300 iterations of SGD at learning rate
# 0.01, epsilon 0.01, batches of 1000 examples, 12 random restarts.
DEFAULT_C_GRID = (0.0, 0.01, 0.1, 0.5, 1.0, 1.5)


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters for the MIL trainer; defaults follow the published recipe."""

    iterations: int = 300
    learning_rate: float = 0.01
    epsilon: float = 0.01
    batch_size: int = 1000
    restarts: int = 12
    C: float = 0.0
    C_grid: tuple[float, ...] | None = None
    val_fraction: float = 0.2
    seed: int = 0
    score_weighted: bool = True
    normalize_features: bool = False

    def __post_init__(self):
        # iterations == 0 is the documented no-step degenerate case.
        if self.iterations < 0:
            raise InvalidConfig(f"iterations must be >= 0, got {self.iterations}")
        if not self.learning_rate > 0:
            raise InvalidConfig(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epsilon < 0:
            raise InvalidConfig(f"epsilon must be >= 0, got {self.epsilon}")
        if self.batch_size < 1:
            raise InvalidConfig(f"batch_size must be >= 1, got {self.batch_size}")
        if self.restarts < 1:
            raise InvalidConfig(f"restarts must be >= 1, got {self.restarts}")
        if self.C < 0:
            raise InvalidConfig(f"C must be >= 0, got {self.C}")
        if not (0.0 < self.val_fraction < 1.0):
            raise InvalidConfig(f"val_fraction must be in (0,1), got {self.val_fraction}")
        if self.C_grid is not None:
            grid = tuple(float(c) for c in self.C_grid)
            if len(grid) == 0:
                raise InvalidConfig("C_grid must be non-empty when present")
            if any(c < 0 for c in grid):
                raise InvalidConfig("C_grid values must be >= 0")
            if list(grid) != sorted(grid):
                raise InvalidConfig("C_grid must be sorted ascending")
            object.__setattr__(self, "C_grid", grid)


@dataclass(frozen=True)
class Detection:
    """A scored, class-tagged box emitted at test time.

    The score is tanh-bounded for the MIL scorer but is a raw decision value
    for the SVM baselines, so only finiteness is enforced here.
    """

    image_id: str
    class_name: str
    box: BoundingBox
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise InvalidConfig(f"detection score must be finite, got {self.score}")
