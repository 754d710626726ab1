"""Query aggregation: merging near-duplicate predictions before matching.

Two predictions are merge candidates when their class distributions are
nearly identical (symmetric KL below t_c) and their boxes overlap heavily
(IoU above t_b). Merge groups are connected components of the pairwise
criteria graph; each group's predictions are averaged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .structures import PredictionSet
from .tensor import ConfigurationError, Tensor


@dataclass
class QaConfig:
    t_c: float = 3e-7
    t_b: float = 0.9
    epsilon: float = 1e-8
    enabled: bool = True
    apply_at_inference: bool = True

    def __post_init__(self):
        # t_b > 1 is tolerated as an explicit "never merge" setting
        if self.t_b < 0.0:
            raise ConfigurationError(f"t_b must be nonnegative, got {self.t_b}")
        if self.t_c <= 0:
            raise ConfigurationError(f"t_c must be positive, got {self.t_c}")
        if not 0.0 < self.epsilon < 1e-3:
            raise ConfigurationError(f"epsilon must be in (0,1e-3), got {self.epsilon}")


@dataclass
class MergePlan:
    groups: list[list[int]]
    merged: PredictionSet
    provenance: dict[int, list[int]]

    @property
    def num_merges(self) -> int:
        """Count of predictions absorbed into larger groups."""
        return sum(len(g) - 1 for g in self.groups)


def class_similarity(probs: np.ndarray, epsilon: float = 1e-8) -> np.ndarray:
    """Symmetric KL matrix over rows of per-class scores.

    Scores are clamped to [epsilon, 1] and each row renormalized into a
    distribution (the classifier emits independent sigmoids). Natural log;
    diagonal 0; symmetric.
    """
    probs = np.asarray(probs, dtype=np.float64)
    q, m = probs.shape
    if m < 2:
        raise ConfigurationError(f"class_similarity needs >= 2 classes, got {m}")
    p = np.clip(probs, epsilon, 1.0)
    p = p / p.sum(axis=1, keepdims=True)
    logp = np.log(p)
    # KL(p_i || p_j) = sum_k p_i[k] (log p_i[k] - log p_j[k])
    ent = (p * logp).sum(axis=1)
    cross = p @ logp.T  # cross[i,j] = sum_k p_i[k] log p_j[k]
    kl = ent[:, None] - cross
    s = kl + kl.T
    np.fill_diagonal(s, 0.0)
    return s


def boxes_cxcywh_to_xyxy(boxes: np.ndarray) -> np.ndarray:
    cx, cy, w, h = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)


def box_iou_matrix(boxes: np.ndarray) -> np.ndarray:
    """Pairwise IoU over cxcywh boxes; zero-area boxes score 0 everywhere."""
    xy = boxes_cxcywh_to_xyxy(np.asarray(boxes, dtype=np.float64))
    area = np.maximum(xy[:, 2] - xy[:, 0], 0.0) * np.maximum(xy[:, 3] - xy[:, 1], 0.0)
    x0 = np.maximum(xy[:, None, 0], xy[None, :, 0])
    y0 = np.maximum(xy[:, None, 1], xy[None, :, 1])
    x1 = np.minimum(xy[:, None, 2], xy[None, :, 2])
    y1 = np.minimum(xy[:, None, 3], xy[None, :, 3])
    inter = np.maximum(x1 - x0, 0.0) * np.maximum(y1 - y0, 0.0)
    union = area[:, None] + area[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(union > 0.0, inter / np.where(union > 0, union, 1.0), 0.0)
    return iou


def build_merge_groups(s_cls: np.ndarray, s_box: np.ndarray,
                       config: QaConfig) -> list[list[int]]:
    """Connected components of the graph with edge (i,j) iff both criteria
    hold; groups ordered by smallest member, members ascending."""
    q = s_cls.shape[0]
    adj = (s_cls < config.t_c) & (s_box > config.t_b)
    np.fill_diagonal(adj, False)
    label = np.full(q, -1, dtype=int)
    groups = []
    for start in range(q):
        if label[start] >= 0:
            continue
        comp = [start]
        label[start] = len(groups)
        stack = [start]
        while stack:
            node = stack.pop()
            for nb in np.nonzero(adj[node])[0]:
                if label[nb] < 0:
                    label[nb] = label[start]
                    comp.append(int(nb))
                    stack.append(int(nb))
        groups.append(sorted(comp))
    return sorted(groups, key=lambda g: g[0])


def _averaging_matrix(groups, q, dtype):
    mat = np.zeros((len(groups), q), dtype=dtype)
    for gi, members in enumerate(groups):
        mat[gi, members] = 1.0 / len(members)
    return mat


def aggregate(predictions: PredictionSet, groups: list[list[int]]) -> PredictionSet:
    """Average probs and boxes within each group.

    Implemented as a constant row-averaging matrix product, so gradients
    distribute 1/n to the members.
    """
    q = predictions.num_queries
    avg = Tensor(_averaging_matrix(groups, q, predictions.probs.dtype))
    return PredictionSet(
        probs=T.matmul(avg, predictions.probs),
        boxes=T.matmul(avg, predictions.boxes),
        logits=None,
    )


def identity_plan(predictions: PredictionSet) -> MergePlan:
    groups = [[i] for i in range(predictions.num_queries)]
    return MergePlan(groups=groups, merged=aggregate(predictions, groups),
                     provenance={i: [i] for i in range(predictions.num_queries)})


def qa_apply(predictions: PredictionSet, config: QaConfig) -> MergePlan:
    """Similarity matrices -> merge groups -> averaged predictions."""
    if not config.enabled:
        return identity_plan(predictions)
    probs, boxes = predictions.as_arrays()
    s_cls = class_similarity(probs, config.epsilon)
    s_box = box_iou_matrix(boxes)
    groups = build_merge_groups(s_cls, s_box, config)
    return MergePlan(groups=groups, merged=aggregate(predictions, groups),
                     provenance={gi: list(g) for gi, g in enumerate(groups)})
