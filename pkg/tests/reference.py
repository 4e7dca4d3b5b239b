"""Independent brute-force references the package implementations are checked against.

Everything here is deliberately naive (plain loops, no shared code with the
package beyond reading the public dataclass fields) so it can serve as an
oracle.
"""

import math


def ref_iou(a, b) -> float:
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    iw = ix2 - ix1
    ih = iy2 - iy1
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter
    return inter / union


def ref_nms(detections, iou_threshold):
    """Exhaustive O(n^2) greedy suppression."""
    remaining = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    kept = []
    while remaining:
        best = remaining.pop(0)
        kept.append(detections[best])
        survivors = []
        for i in remaining:
            if ref_iou(detections[best].box, detections[i].box) <= iou_threshold:
                survivors.append(i)
        remaining = survivors
    return kept


def ref_average_precision(detections, gts, eval_iou, style):
    """Point-by-point PR enumeration with the same matching rule, coded naively.

    Rule: per detection in descending score (input order on ties), consider
    same-image GT with IoU >= eval_iou that are unmatched or ignore-flagged;
    highest IoU wins (lowest GT index on ties); ignore winner -> detection
    dropped (ignore GT never consumed); otherwise TP if a winner exists,
    else FP.
    """
    npos = sum(1 for g in gts if not g.ignore)
    if npos == 0:
        return None
    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    matched = set()
    points = []
    tp = 0
    fp = 0
    for i in order:
        d = detections[i]
        best_j = None
        best_iou = -1.0
        for j, g in enumerate(gts):
            if g.image_id != d.image_id:
                continue
            if j in matched and not g.ignore:
                continue
            ov = ref_iou(d.box, g.box)
            if ov >= eval_iou and ov > best_iou:
                best_iou = ov
                best_j = j
        if best_j is None:
            fp += 1
            points.append((tp, fp))
        elif gts[best_j].ignore:
            continue
        else:
            matched.add(best_j)
            tp += 1
            points.append((tp, fp))

    if style == "eleven_point":
        peaks = []
        for i in range(11):
            t = i / 10.0
            best_p = 0.0
            for tp_i, fp_i in points:
                if tp_i / npos >= t:
                    best_p = max(best_p, tp_i / (tp_i + fp_i))
            peaks.append(best_p)
        return math.fsum(peaks) / 11.0

    # all-points: walk distinct recall levels, take the best precision at or
    # beyond each level
    terms = []
    prev_recall = 0.0
    seen = set()
    recalls = []
    for tp_i, fp_i in points:
        r = tp_i / npos
        if r not in seen:
            seen.add(r)
            recalls.append(r)
    for r in recalls:
        best_p = 0.0
        for tp_i, fp_i in points:
            if tp_i / npos >= r:
                best_p = max(best_p, tp_i / (tp_i + fp_i))
        terms.append((r - prev_recall) * best_p)
        prev_recall = r
    return math.fsum(terms)


def fd_gradient(f, w, b, step=1e-5):
    """Central finite differences of f(w, b) over every parameter."""
    import numpy as np

    gw = np.zeros_like(w, dtype=float)
    for i in range(len(w)):
        wp = w.copy()
        wm = w.copy()
        wp[i] += step
        wm[i] -= step
        gw[i] = (f(wp, b) - f(wm, b)) / (2 * step)
    gb = (f(w, b + step) - f(w, b - step)) / (2 * step)
    return gw, gb
