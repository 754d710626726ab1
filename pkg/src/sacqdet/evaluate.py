"""COCO-style average precision for the toy detector.

Protocol: per-class AP at IoU thresholds 0.50:0.95:0.05 with 101-point
interpolation of the precision-recall curve, then the mean over classes
that have at least one ground-truth instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import SyntheticScene
from .qa import QaConfig, boxes_cxcywh_to_xyxy, qa_apply

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def _iou_cxcywh(a: np.ndarray, b: np.ndarray) -> float:
    ax = boxes_cxcywh_to_xyxy(a.reshape(1, 4))[0]
    bx = boxes_cxcywh_to_xyxy(b.reshape(1, 4))[0]
    iw = max(min(ax[2], bx[2]) - max(ax[0], bx[0]), 0.0)
    ih = max(min(ax[3], bx[3]) - max(ax[1], bx[1]), 0.0)
    inter = iw * ih
    area_a = (ax[2] - ax[0]) * (ax[3] - ax[1])
    area_b = (bx[2] - bx[0]) * (bx[3] - bx[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def average_precision(detections, gt_by_image, iou_thr: float) -> float:
    """AP at one IoU threshold over a pooled detection list.

    detections: (image_id, score, cxcywh box) triples; gt_by_image maps
    image_id to its ground-truth box list. Detections are visited in
    descending score order and each ground truth matches at most once,
    going to the candidate with the highest IoU among those still free.
    Returns NaN when there is no ground truth at all.
    """
    n_gt = sum(len(v) for v in gt_by_image.values())
    if n_gt == 0:
        return float("nan")
    order = sorted(range(len(detections)), key=lambda i: -detections[i][1])
    taken = {img: [False] * len(boxes) for img, boxes in gt_by_image.items()}
    tp = []
    for di in order:
        img, _, box = detections[di]
        best_iou, best_g = 0.0, -1
        for g, gb in enumerate(gt_by_image.get(img, [])):
            if taken[img][g]:
                continue
            v = _iou_cxcywh(np.asarray(box), np.asarray(gb))
            if v > best_iou:
                best_iou, best_g = v, g
        if best_g >= 0 and best_iou >= iou_thr:
            taken[img][best_g] = True
            tp.append(1)
        else:
            tp.append(0)

    total = 0.0
    n_tp, n_fp = 0, 0
    precisions, recalls = [], []
    for t in tp:
        n_tp += t
        n_fp += 1 - t
        precisions.append(n_tp / (n_tp + n_fp))
        recalls.append(n_tp / n_gt)
    for r in np.linspace(0.0, 1.0, 101):
        total += max((p for p, rc in zip(precisions, recalls)
                      if rc >= r - 1e-12), default=0.0)
    return total / 101.0


@dataclass
class ApReport:
    ap: float
    ap50: float
    ap75: float
    per_class: dict = field(default_factory=dict)
    merges: int = 0
    num_images: int = 0

    def as_dict(self) -> dict:
        return {"ap": self.ap, "ap50": self.ap50, "ap75": self.ap75,
                "per_class": self.per_class, "merges": self.merges,
                "num_images": self.num_images}


def evaluate_ap(model, scenes: list[SyntheticScene], qa_config: QaConfig,
                iou_thresholds=IOU_THRESHOLDS,
                score_threshold: float = 0.0) -> ApReport:
    """Run the model over scenes and score the final-layer predictions.

    Each query contributes one detection per scene: label = argmax class,
    score = max class probability. Query merging runs first when the
    config asks for it at inference time.
    """
    m = model.config.m
    det_by_class = {c: [] for c in range(m)}
    gt_by_class = {c: {} for c in range(m)}
    merges = 0
    with T.no_grad():
        for img_id, scene in enumerate(scenes):
            preds = model.decode(scene.image)[-1]
            if qa_config.enabled and qa_config.apply_at_inference:
                plan = qa_apply(preds, qa_config)
                merges += plan.num_merges
                preds = plan.merged
            probs, boxes = preds.as_arrays()
            labels = probs.argmax(axis=1)
            scores = probs.max(axis=1)
            for c in range(m):
                gt_by_class[c][img_id] = [t.box for t in scene.targets
                                          if t.class_id == c]
            for qi in range(probs.shape[0]):
                if scores[qi] >= score_threshold:
                    det_by_class[int(labels[qi])].append(
                        (img_id, float(scores[qi]), boxes[qi]))

    per_class = {}
    for c in range(m):
        if sum(len(v) for v in gt_by_class[c].values()) == 0:
            continue
        aps = [average_precision(det_by_class[c], gt_by_class[c], thr)
               for thr in iou_thresholds]
        per_class[c] = {"ap": float(np.mean(aps)),
                        "by_threshold": dict(zip(map(str, iou_thresholds),
                                                 map(float, aps)))}

    def mean_at(thr):
        key = str(thr)
        vals = [v["by_threshold"][key] for v in per_class.values()]
        return float(np.mean(vals)) if vals else 0.0

    ap = float(np.mean([v["ap"] for v in per_class.values()])) \
        if per_class else 0.0
    return ApReport(ap=ap, ap50=mean_at(0.5), ap75=mean_at(0.75),
                    per_class=per_class, merges=merges,
                    num_images=len(scenes))
