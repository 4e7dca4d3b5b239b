"""Detection-time inference (threshold + NMS) and PASCAL-style AP evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .core import BoundingBox, Detection, FeatureBag, LinearScorer
from .errors import InvalidConfig
from .mil import score_region

ScoreFn = Callable[[LinearScorer, "object"], float]


@dataclass(frozen=True)
class GroundTruthBox:
    """Instance-level annotation; ignore=True excludes it from the recall denominator."""

    image_id: str
    class_name: str
    box: BoundingBox
    ignore: bool = False


@dataclass(frozen=True)
class EvalConfig:
    nms_iou: float = 0.3
    confidence_threshold: float = 0.05
    eval_iou: float = 0.5
    ap_style: str = "eleven_point"

    def __post_init__(self):
        if not (0.0 <= self.nms_iou <= 1.0):
            raise InvalidConfig(f"nms_iou must be in [0,1], got {self.nms_iou}")
        if not (0.0 < self.eval_iou <= 1.0):
            raise InvalidConfig(f"eval_iou must be in (0,1], got {self.eval_iou}")
        if self.ap_style not in ("eleven_point", "all_points"):
            raise InvalidConfig(f"unknown ap_style {self.ap_style!r}")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes, continuous-coordinate convention."""
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    iw = ix2 - ix1
    ih = iy2 - iy1
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area() + b.area() - inter
    return inter / union


def nms(detections: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy non-maximum suppression on one class within one image.

    Keeps the highest-scored remaining detection and discards everything
    overlapping it with IoU strictly greater than the threshold (boundary
    ties survive). Score ties are broken by input order. Output is sorted by
    descending score.
    """
    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    kept: list[Detection] = []
    kept_boxes: list[BoundingBox] = []
    for i in order:
        d = detections[i]
        if all(iou(d.box, kb) <= iou_threshold for kb in kept_boxes):
            kept.append(d)
            kept_boxes.append(d.box)
    return kept


def detect(scorer: LinearScorer, bag: FeatureBag, cfg: EvalConfig,
           score_fn: ScoreFn = score_region) -> list[Detection]:
    """Score every region, drop scores <= confidence threshold, apply NMS."""
    raw: list[Detection] = []
    for region in bag.regions:
        s = float(score_fn(scorer, region))
        if s > cfg.confidence_threshold:
            raw.append(Detection(
                image_id=bag.image_id,
                class_name=scorer.class_name,
                box=region.box,
                score=s,
            ))
    return nms(raw, cfg.nms_iou)


def _pr_points(detections: Sequence[Detection], gts: Sequence[GroundTruthBox],
               eval_iou: float) -> tuple[list[bool], int]:
    """Outcome (is-TP) per counted detection in rank order, plus the GT count.

    Matching, per detection in descending-score order (input order on ties):
    consider the same-image GT boxes with IoU >= eval_iou that are either
    still unmatched or ignore-flagged; the highest IoU wins (lowest GT index
    on ties). An ignore winner makes the detection neither TP nor FP (ignore
    boxes are never consumed); no winner, or an already-matched winner only,
    is a FP.
    """
    by_image: dict[str, list[int]] = {}
    for j, g in enumerate(gts):
        by_image.setdefault(g.image_id, []).append(j)
    matched = [False] * len(gts)
    npos = sum(1 for g in gts if not g.ignore)

    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    outcomes: list[bool] = []
    for i in order:
        d = detections[i]
        best_j = -1
        best_iou = 0.0
        for j in by_image.get(d.image_id, ()):
            if matched[j] and not gts[j].ignore:
                continue
            ov = iou(d.box, gts[j].box)
            if ov >= eval_iou and ov > best_iou:
                best_iou = ov
                best_j = j
        if best_j >= 0 and gts[best_j].ignore:
            continue  # neither TP nor FP
        if best_j >= 0:
            matched[best_j] = True
            outcomes.append(True)
        else:
            outcomes.append(False)
    return outcomes, npos


def _ap_from_pr(recall: np.ndarray, precision: np.ndarray, style: str) -> float:
    if style == "eleven_point":
        peaks = []
        for i in range(11):
            t = i / 10.0
            mask = recall >= t
            peaks.append(float(np.max(precision[mask])) if np.any(mask) else 0.0)
        return math.fsum(peaks) / 11.0
    # all_points: area under the precision envelope
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    idx = np.where(mrec[1:] != mrec[:-1])[0]
    return math.fsum((mrec[j + 1] - mrec[j]) * mpre[j + 1] for j in idx)


def average_precision(detections: Sequence[Detection], gts: Sequence[GroundTruthBox],
                      cfg: EvalConfig) -> float | None:
    """AP for one class over all images; None (undefined) when no non-ignored GT."""
    outcomes, npos = _pr_points(detections, gts, cfg.eval_iou)
    if npos == 0:
        return None
    if not outcomes:
        return 0.0
    tp = np.cumsum([1.0 if o else 0.0 for o in outcomes])
    fp = np.cumsum([0.0 if o else 1.0 for o in outcomes])
    recall = tp / npos
    precision = tp / np.maximum(tp + fp, 1e-12)
    return _ap_from_pr(recall, precision, cfg.ap_style)


def ranking_average_precision(scores: Sequence[float], labels: Sequence[int],
                              style: str = "all_points") -> float | None:
    """AP of a plain score ranking against binary {+1,-1} labels."""
    if len(scores) != len(labels):
        raise InvalidConfig("scores and labels must align")
    npos = sum(1 for y in labels if y > 0)
    if npos == 0:
        return None
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    tp = np.cumsum([1.0 if labels[i] > 0 else 0.0 for i in order])
    fp = np.cumsum([0.0 if labels[i] > 0 else 1.0 for i in order])
    recall = tp / npos
    precision = tp / np.maximum(tp + fp, 1e-12)
    return _ap_from_pr(recall, precision, style)


def classification_by_detection(scorer: LinearScorer, bags: Iterable[FeatureBag],
                                score_fn: ScoreFn = score_region) -> dict[str, float]:
    """Image-level score = max region score, with no NMS and no threshold."""
    out: dict[str, float] = {}
    for bag in bags:
        out[bag.image_id] = max(float(score_fn(scorer, r)) for r in bag.regions)
    return out


@dataclass(frozen=True)
class EvalReport:
    """Per-class AP at each requested IoU plus classification-by-detection AP.

    Undefined APs (no ground truth / no positive images) are stored as None
    and excluded from means, never coerced to zero.
    """

    class_names: tuple[str, ...]
    ious: tuple[float, ...]
    detection_ap: dict[float, dict[str, float | None]]
    classification_ap: dict[str, float | None]

    def mean_ap(self, iou_thr: float) -> float | None:
        vals = [v for v in self.detection_ap[iou_thr].values() if v is not None]
        return sum(vals) / len(vals) if vals else None

    def mean_classification_ap(self) -> float | None:
        vals = [v for v in self.classification_ap.values() if v is not None]
        return sum(vals) / len(vals) if vals else None

    def to_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "ious": list(self.ious),
            "detection_ap": {
                str(thr): dict(per_class) for thr, per_class in self.detection_ap.items()
            },
            "mean_ap": {str(thr): self.mean_ap(thr) for thr in self.ious},
            "classification_ap": dict(self.classification_ap),
            "mean_classification_ap": self.mean_classification_ap(),
        }

    def to_text(self) -> str:
        """Aligned table; APs shown as one-decimal percentages, n/a when undefined."""
        def fmt(v: float | None) -> str:
            return "n/a" if v is None else f"{100.0 * v:.1f}"

        headers = ["class"] + [f"AP@{thr:g}" for thr in self.ious] + ["clsAP"]
        rows = []
        for cls in self.class_names:
            rows.append([cls] + [fmt(self.detection_ap[t][cls]) for t in self.ious]
                        + [fmt(self.classification_ap[cls])])
        rows.append(["mean"] + [fmt(self.mean_ap(t)) for t in self.ious]
                    + [fmt(self.mean_classification_ap())])
        widths = [max(len(r[c]) for r in [headers] + rows) for c in range(len(headers))]
        lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
        for r in rows:
            lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)))
        return "\n".join(lines)


def evaluate(scorers: Mapping[str, LinearScorer], bags: Sequence[FeatureBag],
             gts: Sequence[GroundTruthBox], cfg: EvalConfig,
             score_fn: ScoreFn = score_region,
             ious: Sequence[float] | None = None) -> EvalReport:
    """Full protocol: detect everywhere, AP per class per IoU, classification AP."""
    thresholds = tuple(ious) if ious else (cfg.eval_iou,)
    class_names = tuple(scorers.keys())
    detection_ap: dict[float, dict[str, float | None]] = {t: {} for t in thresholds}
    classification_ap: dict[str, float | None] = {}
    for cls, scorer in scorers.items():
        dets: list[Detection] = []
        for bag in bags:
            dets.extend(detect(scorer, bag, cfg, score_fn))
        cls_gts = [g for g in gts if g.class_name == cls]
        for t in thresholds:
            detection_ap[t][cls] = average_precision(dets, cls_gts, replace(cfg, eval_iou=t))
        img_scores = classification_by_detection(scorer, bags, score_fn)
        pairs = [(img_scores[bag.image_id], bag.labels[cls])
                 for bag in bags if cls in bag.labels]
        classification_ap[cls] = ranking_average_precision(
            [p[0] for p in pairs], [p[1] for p in pairs], cfg.ap_style
        )
    return EvalReport(
        class_names=class_names,
        ious=thresholds,
        detection_ap=detection_ap,
        classification_ap=classification_ap,
    )
