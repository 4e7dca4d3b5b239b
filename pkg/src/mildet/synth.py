"""Synthetic bags with a planted linear concept: the desk-scale oracle.

Positive bags contain exactly `positives_per_positive_bag` regions whose
projection on the planted unit direction is >= concept_margin; every other
region (and every region of negative bags) projects <= -concept_margin, so
the planted scorer separates instances with zero error and the at-least-one-
positive-instance assumption holds exactly. Region boxes sit on a disjoint
grid, so detection AP measures ranking, not localization ambiguity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BoundingBox, FeatureBag, LinearScorer, Region
from .errors import InvalidConfig
from .evaluation import GroundTruthBox
from .mil import class_counts, loss_phi_s

CONCEPT_CLASS = "concept"

OBJECTNESS_MODES = ("informative", "uniform", "adversarial")

_CELL = 30.0
_BOX = 20.0
_PAD = 5.0


@dataclass(frozen=True)
class SynthConfig:
    n_images: int = 2000
    k_regions: int = 30
    feature_dim: int = 64
    positive_fraction: float = 0.3
    concept_direction: np.ndarray | None = None
    concept_margin: float = 1.0
    positives_per_positive_bag: int = 1
    noise_std: float = 0.25
    objectness_mode: str = "informative"
    seed: int = 0

    def __post_init__(self):
        if self.n_images < 2:
            raise InvalidConfig("n_images must be >= 2 (both polarities needed)")
        if self.k_regions < 1:
            raise InvalidConfig("k_regions must be >= 1")
        if self.feature_dim < 1:
            raise InvalidConfig("feature_dim must be >= 1")
        if not (0.0 < self.positive_fraction < 1.0):
            raise InvalidConfig("positive_fraction must be in (0,1)")
        if self.concept_margin <= 0:
            raise InvalidConfig("concept_margin must be > 0")
        if not (1 <= self.positives_per_positive_bag <= self.k_regions):
            raise InvalidConfig("positives_per_positive_bag must be in [1, k_regions]")
        if self.noise_std <= 0:
            raise InvalidConfig("noise_std must be > 0")
        if self.objectness_mode not in OBJECTNESS_MODES:
            raise InvalidConfig(f"objectness_mode must be one of {OBJECTNESS_MODES}")
        if self.concept_direction is not None:
            v = np.asarray(self.concept_direction, dtype=np.float64)
            if v.shape != (self.feature_dim,):
                raise InvalidConfig("concept_direction must match feature_dim")
            if abs(float(v @ v) - 1.0) > 1e-6:
                raise InvalidConfig("concept_direction must have unit norm")
            object.__setattr__(self, "concept_direction", v)


def region_box(k: int, k_regions: int) -> BoundingBox:
    """Grid cell for region index k; cells never overlap."""
    g = math.ceil(math.sqrt(k_regions))
    col = k % g
    row = k // g
    x1 = _CELL * col + _PAD
    y1 = _CELL * row + _PAD
    return BoundingBox(x1, y1, x1 + _BOX, y1 + _BOX)


def _objectness(rng: np.random.Generator, planted: np.ndarray, mode: str) -> np.ndarray:
    u = rng.uniform(0.0, 1.0, size=planted.shape[0])
    if mode == "uniform":
        return u
    high = 0.7 + 0.3 * u
    low = 0.3 * u
    if mode == "informative":
        return np.where(planted, high, low)
    return np.where(planted, low, high)  # adversarial: noise wins the objectness argmax


def concept_direction(cfg: SynthConfig) -> np.ndarray:
    """The planted unit direction (drawn from the seed when not supplied)."""
    if cfg.concept_direction is not None:
        return cfg.concept_direction
    g = np.random.default_rng(cfg.seed).normal(size=cfg.feature_dim)
    return g / np.linalg.norm(g)


def iter_generate(cfg: SynthConfig):
    """Yield (bag, ground-truth boxes for that bag) one image at a time.

    Streaming counterpart of generate() with the identical random stream, so
    datasets larger than memory can be written straight to an archive.
    """
    rng = np.random.default_rng(cfg.seed)
    m = cfg.feature_dim
    if cfg.concept_direction is not None:
        v = cfg.concept_direction
    else:
        g = rng.normal(size=m)
        v = g / np.linalg.norm(g)

    n_pos = int(round(cfg.positive_fraction * cfg.n_images))
    n_pos = min(max(n_pos, 1), cfg.n_images - 1)
    boxes = [region_box(k, cfg.k_regions) for k in range(cfg.k_regions)]

    for i in range(cfg.n_images):
        image_id = f"img_{i:05d}"
        positive = i < n_pos
        planted = np.zeros(cfg.k_regions, dtype=bool)
        if positive:
            where = rng.choice(cfg.k_regions, size=cfg.positives_per_positive_bag,
                               replace=False)
            planted[np.sort(where)] = True

        raw = rng.normal(0.0, cfg.noise_std, size=(cfg.k_regions, m))
        proj = raw @ v
        perp = raw - proj[:, None] * v
        spread = np.abs(rng.normal(0.0, cfg.noise_std, size=cfg.k_regions))
        alpha = np.where(planted, cfg.concept_margin + spread,
                         -cfg.concept_margin - spread)
        feats = perp + alpha[:, None] * v
        obj = _objectness(rng, planted, cfg.objectness_mode)

        regions = tuple(
            Region(box=boxes[k], objectness=float(obj[k]), feature=feats[k])
            for k in range(cfg.k_regions)
        )
        label = 1 if positive else -1
        bag = FeatureBag(image_id=image_id, regions=regions,
                         labels={CONCEPT_CLASS: label})
        gts = [
            GroundTruthBox(image_id=image_id, class_name=CONCEPT_CLASS,
                           box=boxes[int(k)])
            for k in np.flatnonzero(planted)
        ] if positive else []
        yield bag, gts


def generate(cfg: SynthConfig) -> tuple[list[FeatureBag], list[GroundTruthBox], LinearScorer]:
    """Deterministic bags + ground truth + the planted zero-error scorer."""
    v = concept_direction(cfg)
    bags: list[FeatureBag] = []
    gts: list[GroundTruthBox] = []
    for bag, bag_gts in iter_generate(cfg):
        bags.append(bag)
        gts.extend(bag_gts)

    counts = class_counts(bags, CONCEPT_CLASS)
    planted_eps = 0.01
    planted_scorer = LinearScorer(
        class_name=CONCEPT_CLASS, w=v, b=0.0, epsilon=planted_eps,
        final_loss=loss_phi_s(v, 0.0, bags, CONCEPT_CLASS, counts, planted_eps),
        seed_used=cfg.seed,
    )
    return bags, gts, planted_scorer
