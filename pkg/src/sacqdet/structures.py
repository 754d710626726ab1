"""Shared data containers passed between the detector stages."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class FeatureScale:
    tensor: Tensor  # [d, h_s, w_s]
    stride: int


@dataclass
class FeatureMapSet:
    """Per-scale encoder feature maps with spatial metadata."""

    scales: list[FeatureScale]
    image_size: tuple[int, int]  # (h, w) pixels

    def __post_init__(self):
        strides = [s.stride for s in self.scales]
        if strides != sorted(strides) or len(set(strides)) != len(strides):
            raise ValueError(f"strides must be strictly increasing, got {strides}")

    @property
    def finest(self) -> FeatureScale:
        return self.scales[0]


@dataclass
class QueryState:
    """Per-layer decoder query slots."""

    content: Tensor  # [q, d]
    positional: Tensor  # [q, d]
    reference_boxes: Tensor  # [q, 4] cxcywh in [0,1]

    def __post_init__(self):
        if self.content.shape != self.positional.shape:
            raise ValueError("content and positional queries must share a shape")


@dataclass
class PredictionSet:
    """Per-query class probabilities and boxes from one decoder layer."""

    probs: Tensor  # [q, m], sigmoid of logits
    boxes: Tensor  # [q, 4] cxcywh in [0,1]
    logits: Tensor | None = None  # [q, m], kept for the loss

    @property
    def num_queries(self) -> int:
        return self.probs.shape[0]

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.probs.data, self.boxes.data
