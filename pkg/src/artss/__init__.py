"""Radiograph joint-damage toolkit: preprocessing, hand masks, joint-crop
sequences, detection and regression metrics, and a ridge TSS baseline."""

from .core import (
    BoundingBox,
    DatasetSplit,
    Gender,
    ImageRecord,
    JointClass,
    JointDetection,
    SharpScore,
    Side,
)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "DatasetSplit",
    "Gender",
    "ImageRecord",
    "JointClass",
    "JointDetection",
    "SharpScore",
    "Side",
]
