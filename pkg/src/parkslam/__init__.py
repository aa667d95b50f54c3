"""Parking-lot SLAM on a synthetic world.

The package builds a semantic map of parking slots from odometry and
per-frame slot detections (the ``gcslam`` pipeline), then localizes a
revisiting vehicle against that map with semantic ICP (the ``sfloc``
pipeline).  A deterministic simulator provides the world, the routes,
and every sensor stream.
"""

from .geometry import Pose2, Vec2, between, compose, inverse, normalize_angle, transform_point

__version__ = "0.1.0"

__all__ = [
    "Pose2",
    "Vec2",
    "between",
    "compose",
    "inverse",
    "normalize_angle",
    "transform_point",
    "__version__",
]
