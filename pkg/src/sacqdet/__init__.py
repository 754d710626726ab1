"""Toy DETR-style detector with pooled content queries and duplicate
prediction aggregation, built on a small numpy autodiff tape.
"""

from .detector import Detector, DetectorConfig
from .qa import QaConfig, qa_apply
from .structures import PredictionSet
from .tensor import Tensor

__all__ = ["Detector", "DetectorConfig", "PredictionSet", "QaConfig",
           "Tensor", "qa_apply"]

__version__ = "0.1.0"
