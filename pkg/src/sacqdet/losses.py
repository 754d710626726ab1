"""One-to-one set matching and the detection losses.

Matching is minimum-cost assignment over a focal/L1/GIoU cost matrix; the
training loss applies the same three terms to the matched pairs, with
auxiliary supervision on every decoder layer and optional query aggregation
on the final layer before matching.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import tensor as T
from .qa import QaConfig, boxes_cxcywh_to_xyxy, qa_apply
from .structures import PredictionSet
from .tensor import ContractError, Tensor


@dataclass
class Target:
    class_id: int
    box: np.ndarray  # cxcywh in [0,1]


@dataclass
class MatchResult:
    pairs: list[tuple[int, int]]  # (prediction_index, target_index), by target
    unmatched_predictions: list[int]
    total_cost: float


@dataclass
class LossWeights:
    cls: float = 2.0
    l1: float = 5.0
    giou: float = 2.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0

    def __post_init__(self):
        for name in ("cls", "l1", "giou", "focal_alpha", "focal_gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")


def _lsap_total(cost: np.ndarray) -> float:
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def hungarian_match(cost: np.ndarray) -> MatchResult:
    """Minimum-cost one-to-one assignment of targets to predictions.

    cost is [n_pred, n_tgt] with n_tgt <= n_pred; among cost-tied optima the
    lexicographically smallest prediction sequence (ordered by target) wins.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ContractError(f"cost must be a matrix, got shape {cost.shape}")
    n_pred, n_tgt = cost.shape
    if n_tgt > n_pred:
        raise ContractError(f"{n_tgt} targets exceed {n_pred} predictions")
    if not np.all(np.isfinite(cost)):
        raise ContractError("cost matrix contains non-finite entries")

    optimum = _lsap_total(cost)
    # fix targets left to right, always taking the smallest prediction index
    # that keeps the remainder solvable at the global optimum
    avail = list(range(n_pred))
    pairs = []
    remaining = cost
    prefix = 0.0
    for j in range(n_tgt):
        for pos, i in enumerate(avail):
            rest_rows = [r for r in range(remaining.shape[0]) if r != pos]
            sub = remaining[np.ix_(rest_rows, range(1, remaining.shape[1]))]
            tail = _lsap_total(sub) if sub.shape[1] else 0.0
            total = prefix + remaining[pos, 0] + tail
            if np.isclose(total, optimum, rtol=1e-9, atol=1e-9):
                pairs.append((i, j))
                prefix += remaining[pos, 0]
                avail.pop(pos)
                remaining = remaining[np.ix_(rest_rows, range(1, remaining.shape[1]))]
                break
    matched = {i for i, _ in pairs}
    return MatchResult(
        pairs=sorted(pairs, key=lambda p: p[1]),
        unmatched_predictions=[i for i in range(n_pred) if i not in matched],
        total_cost=float(sum(cost[i, j] for i, j in pairs)),
    )


# ---------------------------------------------------------------------------
# GIoU

def _giou_xyxy_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    iw = np.maximum(np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0]), 0)
    ih = np.maximum(np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1]), 0)
    inter = iw * ih
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a + area_b - inter
    hw = np.maximum(a[:, 2], b[:, 2]) - np.minimum(a[:, 0], b[:, 0])
    hh = np.maximum(a[:, 3], b[:, 3]) - np.minimum(a[:, 1], b[:, 1])
    hull = hw * hh
    iou = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return np.where(hull > 0, iou - (hull - union) / np.where(hull > 0, hull, 1.0),
                    iou)


def _column(t: Tensor, i: int) -> Tensor:
    return T.reshape(T.take_rows(T.transpose(t, (1, 0)), [i]), (t.shape[0],))


_CXCYWH_TO_XYXY = np.array([
    [1.0, 0.0, -0.5, 0.0],
    [0.0, 1.0, 0.0, -0.5],
    [1.0, 0.0, 0.5, 0.0],
    [0.0, 1.0, 0.0, 0.5],
])


def giou_pairs(pred: Tensor, target: Tensor) -> Tensor:
    """Differentiable rowwise GIoU of two [k,4] cxcywh box sets -> [k]."""
    a = T.matmul(pred, Tensor(_CXCYWH_TO_XYXY.T.astype(pred.dtype)))
    b = T.matmul(target, Tensor(_CXCYWH_TO_XYXY.T.astype(target.dtype)))
    ax0, ay0, ax1, ay1 = (_column(a, i) for i in range(4))
    bx0, by0, bx1, by1 = (_column(b, i) for i in range(4))
    iw = T.relu(T.sub(T.minimum(ax1, bx1), T.maximum(ax0, bx0)))
    ih = T.relu(T.sub(T.minimum(ay1, by1), T.maximum(ay0, by0)))
    inter = T.mul(iw, ih)
    area_a = T.mul(T.sub(ax1, ax0), T.sub(ay1, ay0))
    area_b = T.mul(T.sub(bx1, bx0), T.sub(by1, by0))
    union = T.sub(T.add(area_a, area_b), inter)
    hull = T.mul(T.sub(T.maximum(ax1, bx1), T.minimum(ax0, bx0)),
                 T.sub(T.maximum(ay1, by1), T.minimum(ay0, by0)))
    iou = T.div(inter, union)
    return T.sub(iou, T.div(T.sub(hull, union), hull))


def giou(a, b) -> float:
    """GIoU of two cxcywh boxes; range (-1, 1]."""
    with T.no_grad():
        out = giou_pairs(Tensor(np.asarray(a, dtype=np.float64).reshape(1, 4)),
                         Tensor(np.asarray(b, dtype=np.float64).reshape(1, 4)))
    return float(out.data[0])


def giou_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Sum over rows of 1 - GIoU."""
    g = giou_pairs(pred, target)
    return T.sum_all(T.scalar_add(T.scalar_mul(g, -1.0), 1.0))


# ---------------------------------------------------------------------------
# focal loss

def focal_terms_from_probs(probs: Tensor, target_matrix: np.ndarray,
                           alpha: float, gamma: float) -> Tensor:
    """Per-cell sigmoid focal loss summed over all (slot, class) cells."""
    tgt = Tensor(target_matrix.astype(probs.dtype))
    inv_tgt = Tensor((1.0 - target_matrix).astype(probs.dtype))
    one_minus_p = T.scalar_add(T.scalar_mul(probs, -1.0), 1.0)
    pos = T.scalar_mul(
        T.mul(tgt, T.mul(T.power(one_minus_p, gamma), T.log(probs))), -alpha)
    neg = T.scalar_mul(
        T.mul(inv_tgt, T.mul(T.power(probs, gamma), T.log(one_minus_p))),
        -(1.0 - alpha))
    return T.sum_all(T.add(pos, neg))


def focal_loss(logits: Tensor, matched_targets, alpha: float = 0.25,
               gamma: float = 2.0) -> Tensor:
    """Sigmoid focal loss over [q,m] logits, normalized by target count.

    matched_targets: (slot, class) pairs marking the positive cells; every
    other cell is supervised as negative.
    """
    q, m = logits.shape
    tgt = np.zeros((q, m))
    for slot, cls in matched_targets:
        tgt[slot, cls] = 1.0
    total = focal_terms_from_probs(T.sigmoid(logits), tgt, alpha, gamma)
    return T.scalar_mul(total, 1.0 / max(1, len(matched_targets)))


# ---------------------------------------------------------------------------
# matching cost

def match_cost(predictions: PredictionSet, targets: list[Target],
               weights: LossWeights = None) -> np.ndarray:
    """Cost matrix mirroring the loss terms (no gradients)."""
    weights = weights or LossWeights()
    probs, boxes = predictions.as_arrays()
    probs = np.clip(probs.astype(np.float64), T.LOG_EPS, 1.0 - T.LOG_EPS)
    n_tgt = len(targets)
    classes = np.array([t.class_id for t in targets], dtype=int)
    tboxes = np.stack([np.asarray(t.box, dtype=np.float64) for t in targets]) \
        if n_tgt else np.zeros((0, 4))

    a, g = weights.focal_alpha, weights.focal_gamma
    pos_cost = a * (1 - probs) ** g * (-np.log(probs))
    neg_cost = (1 - a) * probs ** g * (-np.log(1 - probs))
    cls_cost = pos_cost[:, classes] - neg_cost[:, classes]

    l1_cost = np.abs(boxes[:, None, :] - tboxes[None, :, :]).sum(axis=2)

    pred_xy = boxes_cxcywh_to_xyxy(boxes.astype(np.float64))
    tgt_xy = boxes_cxcywh_to_xyxy(tboxes)
    giou_cost = np.zeros((boxes.shape[0], n_tgt))
    for j in range(n_tgt):
        giou_cost[:, j] = 1.0 - _giou_xyxy_arrays(
            pred_xy, np.repeat(tgt_xy[j:j + 1], boxes.shape[0], axis=0))

    return weights.cls * cls_cost + weights.l1 * l1_cost + weights.giou * giou_cost


# ---------------------------------------------------------------------------
# total loss

@dataclass
class LossReport:
    total: float = 0.0
    cls: float = 0.0
    l1: float = 0.0
    giou: float = 0.0
    per_layer: list = field(default_factory=list)
    merges: int = 0
    qa_bypassed: int = 0

    def as_dict(self):
        return {"total": self.total, "cls": self.cls, "l1": self.l1,
                "giou": self.giou, "per_layer": self.per_layer,
                "merges": self.merges, "qa_bypassed": self.qa_bypassed}


def _layer_loss(preds: PredictionSet, targets: list[Target],
                weights: LossWeights):
    """Weighted focal + L1 + GIoU for one prediction set."""
    n_tgt = len(targets)
    norm = 1.0 / max(1, n_tgt)
    q, m = preds.probs.shape

    if n_tgt == 0:
        cls = T.scalar_mul(
            focal_terms_from_probs(preds.probs, np.zeros((q, m)),
                                   weights.focal_alpha, weights.focal_gamma),
            norm)
        zero = T.sum_all(T.scalar_mul(preds.boxes, 0.0))
        return cls, zero, zero, None

    cost = match_cost(preds, targets, weights)
    match = hungarian_match(cost)
    tgt_matrix = np.zeros((q, m))
    for i, j in match.pairs:
        tgt_matrix[i, targets[j].class_id] = 1.0
    cls = T.scalar_mul(
        focal_terms_from_probs(preds.probs, tgt_matrix,
                               weights.focal_alpha, weights.focal_gamma),
        norm)

    pred_idx = [i for i, _ in match.pairs]
    matched_boxes = T.take_rows(preds.boxes, pred_idx)
    tboxes = Tensor(np.stack([np.asarray(targets[j].box, dtype=np.float64)
                              for _, j in match.pairs]).astype(preds.boxes.dtype))
    l1 = T.scalar_mul(T.sum_all(T.absolute(T.sub(matched_boxes, tboxes))), norm)
    g = giou_pairs(matched_boxes, tboxes)
    gl = T.scalar_mul(T.sum_all(T.scalar_add(T.scalar_mul(g, -1.0), 1.0)), norm)
    return cls, l1, gl, match


def combine_weighted(cls: float, l1: float, giou_term: float,
                     weights: LossWeights) -> float:
    return weights.cls * cls + weights.l1 * l1 + weights.giou * giou_term


def total_loss(per_layer_predictions: list[PredictionSet],
               targets: list[Target], qa_config: QaConfig | None,
               weights: LossWeights = None):
    """Auxiliary losses on every layer; QA (when enabled) only on the last.

    Returns (scalar loss Tensor, LossReport). When QA would merge below the
    target count the merge is bypassed for that image and counted.
    """
    weights = weights or LossWeights()
    report = LossReport()
    terms = []
    last = len(per_layer_predictions) - 1
    for li, preds in enumerate(per_layer_predictions):
        layer_preds = preds
        if li == last and qa_config is not None and qa_config.enabled:
            plan = qa_apply(preds, qa_config)
            if len(plan.groups) >= len(targets):
                layer_preds = plan.merged
                report.merges += plan.num_merges
            else:
                report.qa_bypassed += 1
        cls, l1, gl, _ = _layer_loss(layer_preds, targets, weights)
        layer_total = T.add(T.add(T.scalar_mul(cls, weights.cls),
                                  T.scalar_mul(l1, weights.l1)),
                            T.scalar_mul(gl, weights.giou))
        terms.append(layer_total)
        report.per_layer.append(float(layer_total.data))
        report.cls += float(cls.data)
        report.l1 += float(l1.data)
        report.giou += float(gl.data)
    loss = terms[0]
    for t in terms[1:]:
        loss = T.add(loss, t)
    report.total = float(loss.data)
    return loss, report
