"""Trajectory and map quality measures.

Trajectory error is computed on matched frames without any alignment step,
since all estimates here live in the same world frame as the ground truth.
Map measures work on slot midpoints and entry vectors; pair selection uses
plain distance cutoffs so they apply to estimated and true maps alike.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose2, Vec2


def trajectory_length(poses: Sequence[Pose2]) -> float:
    """Total translation along a pose sequence."""
    if len(poses) < 2:
        return 0.0
    xy = np.array([[p.x, p.y] for p in poses])
    return float(np.sum(np.linalg.norm(np.diff(xy, axis=0), axis=1)))


def match_frames(
    trajectory: Sequence[tuple[int, Pose2]], reference: Sequence[Pose2] | Mapping[int, Pose2]
) -> tuple[list[Pose2], list[Pose2]]:
    """Pair tagged poses with reference poses at the same frame indices."""
    est: list[Pose2] = []
    ref: list[Pose2] = []
    for frame, pose in trajectory:
        if isinstance(reference, Mapping):
            if frame not in reference:
                continue
            ref_pose = reference[frame]
        else:
            if not 0 <= frame < len(reference):
                continue
            ref_pose = reference[frame]
        est.append(pose)
        ref.append(ref_pose)
    return est, ref


def ate_rmse(estimated: Sequence[Pose2], reference: Sequence[Pose2]) -> float:
    """Root-mean-square translation error over paired poses."""
    if len(estimated) != len(reference):
        raise ValueError("pose sequences must have equal length")
    if not estimated:
        raise ValueError("cannot compute error over zero poses")
    e = np.array([[p.x, p.y] for p in estimated])
    r = np.array([[p.x, p.y] for p in reference])
    return float(np.sqrt(np.mean(np.sum((e - r) ** 2, axis=1))))


def nees(ate_m: float, length_m: float) -> float:
    """Error normalized by distance traveled, as a percentage."""
    if length_m <= 0:
        raise ValueError("trajectory length must be > 0")
    return 100.0 * ate_m / length_m


def _pairs_within(midpoints: np.ndarray, max_dist: float) -> list[tuple[int, int]]:
    tree = cKDTree(midpoints)
    return sorted(tree.query_pairs(max_dist))


def slot_width_error(midpoints, true_width: float) -> float:
    """Deviation of the mean neighbor spacing from the true width, in cm.

    Neighbors are all slot pairs closer than 1.5 times the true width.
    """
    pts = np.asarray(midpoints, dtype=float).reshape(-1, 2)
    if true_width <= 0:
        raise ValueError("true_width must be > 0")
    pairs = _pairs_within(pts, 1.5 * true_width)
    if not pairs:
        raise ValueError("no slot pairs within pairing distance")
    spacing = [float(np.linalg.norm(pts[a] - pts[b])) for a, b in pairs]
    return abs(float(np.mean(spacing)) - true_width) * 100.0


def adjacent_error(midpoints, entry_vecs) -> float:
    """Mean mismatch between entry-vector averages and neighbor offsets, in cm.

    For each pair of slots closer than 1.5 times the mean entry-vector
    length, the two entry vectors are brought into a common half plane,
    averaged, aligned with the actual offset, and compared against it.
    """
    pts = np.asarray(midpoints, dtype=float).reshape(-1, 2)
    vecs = np.asarray(entry_vecs, dtype=float).reshape(-1, 2)
    if len(pts) != len(vecs):
        raise ValueError("midpoints and entry_vecs must have equal length")
    norms = np.linalg.norm(vecs, axis=1)
    if not len(norms):
        raise ValueError("need at least one slot")
    pairs = _pairs_within(pts, 1.5 * float(np.mean(norms)))
    if not pairs:
        raise ValueError("no slot pairs within pairing distance")
    errs = []
    for a, b in pairs:
        wa, wb = vecs[a], vecs[b]
        if float(wa @ wb) < 0.0:
            wb = -wb
        m = (wa + wb) / 2.0
        delta = pts[a] - pts[b]
        if float(m @ delta) < 0.0:
            m = -m
        errs.append(float(np.linalg.norm(m - delta)))
    return float(np.mean(errs)) * 100.0


def row_orientation_error(midpoints, direction: Vec2, pair_max_dist: float) -> float:
    """Mean angular deviation of neighbor offsets from a row axis, in radians.

    Offsets are folded onto the quarter circle, so alignment with the
    direction or its perpendicular both count as zero deviation; the worst
    case is pi/4.
    """
    pts = np.asarray(midpoints, dtype=float).reshape(-1, 2)
    pairs = _pairs_within(pts, pair_max_dist)
    if not pairs:
        raise ValueError("no slot pairs within pairing distance")
    base = math.atan2(direction.y, direction.x)
    devs = []
    for a, b in pairs:
        delta = pts[a] - pts[b]
        phi = math.atan2(delta[1], delta[0])
        folded = (phi - base) % (math.pi / 2.0)
        devs.append(min(folded, math.pi / 2.0 - folded))
    return float(np.mean(devs))
