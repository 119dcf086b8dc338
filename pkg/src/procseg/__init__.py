"""Procedure segmentation: anchor-based segment proposals plus a
segment-level recurrent decoder, with baselines, metrics and synthetic data."""

from .anchors import Segment
from .config import RunConfig
from .model import ProcNet

__all__ = ["Segment", "RunConfig", "ProcNet"]
__version__ = "0.1.0"
