"""Global parking-slot bookkeeping.

Covers the life cycle of a mapped slot: nearest-neighbor association of
detections to existing slots, the keep/stabilize/delete filter for
unstable slots, confidence-weighted fusion of repeated observations, and
re-registration of every slot after pose optimization.  Also owns the
on-disk map schema shared with the localization side.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose2, Vec2, normalize_angle, normalize_angles
from .pointcloud import SEMANTIC_CLASSES, SemanticPointCloud

# Association bands (meters): nearest stored slot at distance d is a match
# when d <= ASSOCIATE_RADIUS, a fresh slot when d >= CREATE_RADIUS, and the
# detection is dropped in between.
ASSOCIATE_RADIUS = 1.0
CREATE_RADIUS = 2.0

# Two slots observed in the same keyframe count as adjacent when their
# registered midpoints are within [ADJACENT_MIN, ADJACENT_MAX].
ADJACENT_MIN = 2.0
ADJACENT_MAX = 2.5

# Unstable-slot filter thresholds, in keyframes.
STABILIZE_OBS_COUNT = 9
DELETE_EXIST_COUNT = 30

# A slot keeps at most this many raw observations for re-registration.
ANCHOR_CAP = 20

MAP_VERSION = 1


@dataclass(frozen=True)
class SlotObservation:
    """One detected slot entry edge, expressed in the car frame."""

    midpoint_car: Vec2
    entry_dir_car: Vec2
    confidence: float
    dist_ic: float
    roll: float
    pitch: float
    frame: int

    def __post_init__(self) -> None:
        n = self.entry_dir_car.norm()
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"entry direction must be unit length, norm={n!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence outside [0, 1]: {self.confidence!r}")
        if not 0.0 <= self.dist_ic <= 1.0:
            raise ValueError(f"dist_ic outside [0, 1]: {self.dist_ic!r}")


class Anchor(NamedTuple):
    """A retained raw observation, ready for replay through new poses."""

    frame: int
    mx: float
    my: float
    theta_car: float
    w_obs: float


@dataclass
class GlobalSlot:
    """A slot in the global map with its fusion state."""

    id: int
    node: Pose2
    entry_vec: Vec2
    weight: float
    obs_count: int = 1
    exist_count: int = 1
    stable: bool = False
    anchors: list[Anchor] = field(default_factory=list)


class AssocKind(Enum):
    ASSOCIATED = "associated"
    CREATE_NEW = "create_new"
    DISCARD = "discard"


@dataclass(frozen=True)
class Association:
    kind: AssocKind
    slot_id: int | None
    distance: float


class FilterAction(Enum):
    KEEP = "keep"
    STABILIZE = "stabilize"
    DELETE = "delete"


class SlotIndex:
    """Nearest-neighbor index over global slot midpoints.

    Backed by a kd-tree that is rebuilt after each batch of mutations;
    queries between rebuilds see a consistent snapshot.
    """

    def __init__(self) -> None:
        self._ids: np.ndarray = np.empty((0,), dtype=int)
        self._tree: cKDTree | None = None

    def __len__(self) -> int:
        return int(self._ids.shape[0])

    def rebuild(self, slots: Mapping[int, GlobalSlot]) -> None:
        ids = sorted(slots)
        self._ids = np.asarray(ids, dtype=int)
        if ids:
            pts = np.array([[slots[i].node.x, slots[i].node.y] for i in ids])
            self._tree = cKDTree(pts)
        else:
            self._tree = None

    def nearest(self, point: Vec2) -> tuple[int, float] | None:
        if self._tree is None:
            return None
        dist, idx = self._tree.query([point.x, point.y])
        return int(self._ids[idx]), float(dist)


def associate(
    obs_world: Vec2,
    index: SlotIndex,
    associate_radius: float = ASSOCIATE_RADIUS,
    create_radius: float = CREATE_RADIUS,
) -> Association:
    """Classify a world-registered detection against the stored slots."""
    hit = index.nearest(obs_world)
    if hit is None:
        return Association(AssocKind.CREATE_NEW, None, math.inf)
    slot_id, dist = hit
    if dist <= associate_radius:
        return Association(AssocKind.ASSOCIATED, slot_id, dist)
    if dist >= create_radius:
        return Association(AssocKind.CREATE_NEW, None, dist)
    return Association(AssocKind.DISCARD, None, dist)


def find_adjacent_pairs(
    frame_obs: Sequence[tuple[int, Vec2]],
    lo: float = ADJACENT_MIN,
    hi: float = ADJACENT_MAX,
) -> list[tuple[int, int]]:
    """Adjacent slot pairs among one keyframe's registered observations.

    Returns unordered pairs (small id first) whose observation midpoints are
    between ``lo`` and ``hi`` apart, both bounds inclusive.
    """
    pairs = []
    for a in range(len(frame_obs)):
        ida, pa = frame_obs[a]
        for b in range(a + 1, len(frame_obs)):
            idb, pb = frame_obs[b]
            d = math.hypot(pa.x - pb.x, pa.y - pb.y)
            if lo <= d <= hi:
                pairs.append((min(ida, idb), max(ida, idb)))
    return sorted(set(pairs))


def filter_step(
    unstable: Sequence[GlobalSlot],
    observed_ids: set[int],
) -> list[tuple[int, FilterAction]]:
    """One keyframe of the unstable-slot filter.

    For each slot, in order: bump ``exist_count``; if the slot was observed
    this keyframe, bump ``obs_count``; then stabilize once ``obs_count``
    exceeds ``STABILIZE_OBS_COUNT``, else delete once ``exist_count``
    exceeds ``DELETE_EXIST_COUNT``, else keep.  Counters are mutated in
    place; applying stabilize/delete to the store is the caller's job.
    """
    actions: list[tuple[int, FilterAction]] = []
    for slot in unstable:
        if slot.stable:
            raise ValueError(f"slot {slot.id} is already stable")
        slot.exist_count += 1
        if slot.id in observed_ids:
            slot.obs_count += 1
        if slot.obs_count > STABILIZE_OBS_COUNT:
            actions.append((slot.id, FilterAction.STABILIZE))
        elif slot.exist_count > DELETE_EXIST_COUNT:
            actions.append((slot.id, FilterAction.DELETE))
        else:
            actions.append((slot.id, FilterAction.KEEP))
    return actions


def angle_weight(roll: float, pitch: float) -> float:
    """Down-weight detections made while the car is pitched or rolled."""
    return math.exp(-10.0 * (abs(roll) + abs(pitch)) / 2.0)


def observation_weight(obs: SlotObservation) -> float:
    """Blend detector confidence, range, and vehicle attitude into one weight."""
    return 0.2 * obs.confidence + 0.5 * obs.dist_ic + 0.3 * angle_weight(obs.roll, obs.pitch)


def update_slot(slot: GlobalSlot, mid_world: Vec2, theta_world: float, w_obs: float) -> GlobalSlot:
    """Fuse one observation into a slot (weighted incremental average).

    ``slot.obs_count`` must already include this observation.  The history
    carries weight ``slot.weight * (obs_count - 1)``, the new observation
    weight ``w_obs``; the slot weight becomes the running mean of applied
    weights.  The heading is averaged with wrap-aware differences.
    """
    c = slot.obs_count
    if c < 1:
        raise ValueError("obs_count must be >= 1 when updating")
    if w_obs <= 0.0:
        raise ValueError("observation weight must be positive")
    hist = slot.weight * (c - 1)
    denom = hist + w_obs
    x = (slot.node.x * hist + mid_world.x * w_obs) / denom
    y = (slot.node.y * hist + mid_world.y * w_obs) / denom
    theta = normalize_angle(
        slot.node.theta + w_obs * normalize_angle(theta_world - slot.node.theta) / denom
    )
    width = slot.entry_vec.norm()
    slot.node = Pose2(x, y, theta)
    slot.entry_vec = Vec2(width * math.cos(theta), width * math.sin(theta))
    slot.weight = denom / c
    return slot


def reregister_all(
    slots: Sequence[GlobalSlot],
    poses: Mapping[int, Pose2],
) -> Sequence[GlobalSlot]:
    """Recompute every slot from its anchors through updated poses.

    Each slot's position, heading, and weight are replayed as the weighted
    fusion of its stored observations registered through ``poses``.  Pure in
    the poses: replaying twice with the same poses is a no-op.  Slots are
    processed together, one fusion step across all of them at a time, so the
    cost per call stays at a handful of array passes.
    """
    items = [s for s in slots if s.anchors]
    if not items:
        return slots
    counts = np.array([len(s.anchors) for s in items])
    flat = np.asarray([a for s in items for a in s.anchors], dtype=float)

    frames = flat[:, 0].astype(int)
    uniq = np.unique(frames)
    try:
        pose_arr = np.array([(poses[f].x, poses[f].y, poses[f].theta) for f in uniq])
    except KeyError as e:
        raise ValueError(f"no pose for anchor frame {e.args[0]}") from None
    fi = np.searchsorted(uniq, frames)
    px, py, pth = pose_arr[fi, 0], pose_arr[fi, 1], pose_arr[fi, 2]
    c, s = np.cos(pth), np.sin(pth)
    mx, my = flat[:, 1], flat[:, 2]
    xw = px + c * mx - s * my
    yw = py + s * mx + c * my
    thw = pth + flat[:, 3]
    w = flat[:, 4]

    offsets = np.concatenate([[0], np.cumsum(counts)])[:-1]
    pos_x = xw[offsets].copy()
    pos_y = yw[offsets].copy()
    theta = normalize_angles(thw[offsets])
    acc_w = w[offsets].copy()
    for step in range(1, int(counts.max())):
        live = np.flatnonzero(counts > step)
        i = offsets[live] + step
        wo = w[i]
        new_w = acc_w[live] + wo
        pos_x[live] = (pos_x[live] * acc_w[live] + xw[i] * wo) / new_w
        pos_y[live] = (pos_y[live] * acc_w[live] + yw[i] * wo) / new_w
        theta[live] = normalize_angles(
            theta[live] + wo * normalize_angles(thw[i] - theta[live]) / new_w
        )
        acc_w[live] = new_w

    weight = acc_w / counts
    for k, slot in enumerate(items):
        th = float(theta[k])
        width = slot.entry_vec.norm()
        slot.node = Pose2(float(pos_x[k]), float(pos_y[k]), th)
        slot.entry_vec = Vec2(width * math.cos(th), width * math.sin(th))
        slot.weight = float(weight[k])
    return slots


def _sample_segments(
    segs: Sequence[tuple[np.ndarray, np.ndarray]], spacing: float, jitter: float
) -> np.ndarray:
    """Sample line segments at ``spacing``, optionally de-combed.

    With ``jitter`` > 0 each sample is displaced along its segment by a
    deterministic fraction of the spacing cell.  That keeps the density but
    breaks the uniform comb, so a rendering cannot be slid a whole number
    of spacing steps along itself and still line up point for point.
    """
    rng = np.random.default_rng(9041)
    chunks = []
    for a, b in segs:
        length = float(np.linalg.norm(b - a))
        n = max(int(math.floor(length / spacing + 1e-9)), 1)
        ks = np.arange(n, dtype=float)
        if jitter > 0.0:
            ks += jitter * rng.random(n)
        ts = np.minimum(ks * spacing / length, 1.0)
        chunks.append(a[None, :] + ts[:, None] * (b - a)[None, :])
    return np.vstack(chunks)


def slot_outline_points(
    x: float,
    y: float,
    theta: float,
    width: float,
    depth: float,
    open_dir: Vec2,
    spacing: float = 0.1,
    jitter: float = 0.0,
) -> np.ndarray:
    """Sample a slot's painted U outline at fixed spacing.

    The entry edge is centered on (x, y) along heading ``theta``; the two
    side edges extend ``depth`` meters away from ``open_dir``.  The back of
    the slot stays unpainted, matching lots where the far end is a curb or
    wall.  Each edge is sampled half-open so shared corners appear exactly
    once.
    """
    d = np.array([math.cos(theta), math.sin(theta)])
    away = -np.array([open_dir.x, open_dir.y]) / max(open_dir.norm(), 1e-12)
    mid = np.array([x, y])
    e1 = mid - d * (width / 2.0)
    e2 = mid + d * (width / 2.0)
    b1 = e1 + away * depth
    b2 = e2 + away * depth
    return _sample_segments([(e1, e2), (e2, b2), (b1, e1)], spacing, jitter)


def slot_corners(
    x: float, y: float, theta: float, width: float, depth: float, open_dir: Vec2
) -> np.ndarray:
    """The four rectangle corners, entry edge first."""
    d = np.array([math.cos(theta), math.sin(theta)])
    away = -np.array([open_dir.x, open_dir.y]) / max(open_dir.norm(), 1e-12)
    mid = np.array([x, y])
    e1 = mid - d * (width / 2.0)
    e2 = mid + d * (width / 2.0)
    return np.array([e1, e2, e2 + away * depth, e1 + away * depth])


GLYPH_INSET = 0.38   # stall-number marker center, meters inside the entry edge
GLYPH_WIDTH = 0.35
GLYPH_HEIGHT = 0.7


def slot_glyph_points(
    x: float,
    y: float,
    theta: float,
    open_dir: Vec2,
    spacing: float = 0.1,
    jitter: float = 0.0,
) -> np.ndarray:
    """Sample the painted stall-number marker of a slot.

    A boxed diagonal stroke stands in for the number, centered just inside
    the entry edge the way stall numbers are painted at the mouth of a slot.
    """
    d = np.array([math.cos(theta), math.sin(theta)])
    inward = -np.array([open_dir.x, open_dir.y]) / max(open_dir.norm(), 1e-12)
    c = np.array([x, y]) + inward * GLYPH_INSET
    a = d * (GLYPH_WIDTH / 2.0)
    b = inward * (GLYPH_HEIGHT / 2.0)
    corners = [c - a - b, c + a - b, c + a + b, c - a + b]
    segs = [(corners[i], corners[(i + 1) % 4]) for i in range(4)]
    segs.append((corners[0], corners[2]))
    return _sample_segments(segs, spacing, jitter)


@dataclass(frozen=True)
class MapSlot:
    """One slot entry of the exported map document."""

    id: int
    x: float
    y: float
    theta: float
    width: float
    weight: float
    obs_count: int
    stable: bool
    open_x: float
    open_y: float


@dataclass
class MapDocument:
    """Slots plus semantic point cloud, as written by mapping and read by localization."""

    slots: list[MapSlot]
    cloud: SemanticPointCloud
    slot_depth: float
    version: int = MAP_VERSION

    def stable_slots(self) -> list[MapSlot]:
        return [s for s in self.slots if s.stable]


def save_map(doc: MapDocument, path: str | Path) -> None:
    payload = {
        "version": doc.version,
        "slot_depth": float(doc.slot_depth),
        "classes": list(SEMANTIC_CLASSES),
        "slots": [
            {
                "id": s.id,
                "x": float(s.x),
                "y": float(s.y),
                "theta": float(s.theta),
                "width": float(s.width),
                "weight": float(s.weight),
                "obs_count": int(s.obs_count),
                "stable": bool(s.stable),
                "open_x": float(s.open_x),
                "open_y": float(s.open_y),
            }
            for s in doc.slots
        ],
        "points": [
            [float(p[0]), float(p[1]), int(c)]
            for p, c in zip(doc.cloud.xy, doc.cloud.labels)
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def load_map(path: str | Path) -> MapDocument:
    payload = json.loads(Path(path).read_text())
    version = payload.get("version")
    if version != MAP_VERSION:
        raise ValueError(f"unsupported map version {version!r}")
    slots = [
        MapSlot(
            id=int(s["id"]),
            x=float(s["x"]),
            y=float(s["y"]),
            theta=float(s["theta"]),
            width=float(s["width"]),
            weight=float(s["weight"]),
            obs_count=int(s["obs_count"]),
            stable=bool(s["stable"]),
            open_x=float(s["open_x"]),
            open_y=float(s["open_y"]),
        )
        for s in payload["slots"]
    ]
    pts = payload["points"]
    if pts:
        arr = np.asarray(pts, dtype=float)
        cloud = SemanticPointCloud(arr[:, :2], arr[:, 2].astype(np.uint8))
    else:
        cloud = SemanticPointCloud.empty()
    return MapDocument(slots=slots, cloud=cloud, slot_depth=float(payload["slot_depth"]))
