"""SE(2) pose algebra for the planar pipeline.

Angles live in (-pi, pi] at all times.  Every operation that produces an
angle routes it through :func:`normalize_angle`, so downstream residuals
never see 2*pi jumps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Vec2",
    "Pose2",
    "IDENTITY",
    "normalize_angle",
    "normalize_angles",
    "rotation_matrix",
    "compose",
    "inverse",
    "between",
    "transform_point",
    "transform_points",
]

_TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap ``theta`` to (-pi, pi].

    Values already inside the interval are returned bit-for-bit unchanged.
    Raises ``ValueError`` for NaN or infinite input.
    """
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    if -math.pi < theta <= math.pi:
        return theta
    wrapped = (theta - math.pi) % (-_TWO_PI) + math.pi
    if wrapped <= -math.pi:
        # float modulo can land exactly on the open boundary
        wrapped += _TWO_PI
    return wrapped


def normalize_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorized :func:`normalize_angle` (no finiteness check)."""
    wrapped = (np.asarray(theta, dtype=float) - math.pi) % (-_TWO_PI) + math.pi
    return np.where(wrapped <= -math.pi, wrapped + _TWO_PI, wrapped)


@dataclass(frozen=True)
class Vec2:
    """2-D point or direction, in meters."""

    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def norm(self) -> float:
        return math.hypot(self.x, self.y)


@dataclass(frozen=True)
class Pose2:
    """Rigid planar transform: translation (x, y) and heading theta."""

    x: float
    y: float
    theta: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=float)


IDENTITY = Pose2(0.0, 0.0, 0.0)


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Group product a * b: apply ``b`` expressed in ``a``'s frame."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.theta + b.theta,
    )


def inverse(a: Pose2) -> Pose2:
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(-(c * a.x + s * a.y), s * a.x - c * a.y, -a.theta)


def between(a: Pose2, b: Pose2) -> Pose2:
    """Relative pose from ``a`` to ``b``: compose(a, between(a, b)) == b."""
    return compose(inverse(a), b)


def transform_point(pose: Pose2, pt: Vec2) -> Vec2:
    """Map a point from ``pose``'s local frame into the parent frame."""
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    return Vec2(
        pose.x + c * pt.x - s * pt.y,
        pose.y + s * pt.x + c * pt.y,
    )


def transform_points(pose: Pose2, pts: np.ndarray) -> np.ndarray:
    """Apply ``pose`` to an (N, 2) array of points."""
    pts = np.asarray(pts, dtype=float)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    out = np.empty_like(pts)
    out[:, 0] = pose.x + c * pts[:, 0] - s * pts[:, 1]
    out[:, 1] = pose.y + s * pts[:, 0] + c * pts[:, 1]
    return out
