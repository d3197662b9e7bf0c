"""Calibration-free indoor localization from anchor range/bearing measurements."""

from ubiloc.geometry import (
    AnchorTag,
    Pose,
    TagMeasurement,
    euclidean_distance,
    normalize_angle,
    relative_to_world,
    world_to_relative,
)

__version__ = "0.1.0"

__all__ = [
    "AnchorTag",
    "Pose",
    "TagMeasurement",
    "euclidean_distance",
    "normalize_angle",
    "relative_to_world",
    "world_to_relative",
]
