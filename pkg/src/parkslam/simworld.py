"""Synthetic parking-lot world and sensor streams.

Everything here is deterministic given its seed: the lot layout, the
sampled trajectory, the drifting odometry, the noisy slot detections, and
the per-frame semantic point clouds.  Random streams are kept separate so
changing one knob never reshuffles the others.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Pose2, Vec2, between, compose, inverse, normalize_angle, transform_point, transform_points
from .pointcloud import CLASS_INDEX, SEMANTIC_CLASSES, SemanticPointCloud
from .slots import SlotObservation, slot_glyph_points, slot_outline_points

_SPACING = 0.1          # sampling step for painted markings, meters
_INCLINED_CLEARANCE = 4.0   # minimum gap between an inclined slot and anything else
_CHEVRON_SPACING = 12.0
_CHEVRON_CLEAR = 1.0    # center line stops this far from a chevron tip or tail
_FALSE_POSITIVE_CLEARANCE = 0.5

# independent random streams under one seed
_STREAM_LOT = 0
_STREAM_ODOMETRY = 1
_STREAM_DETECTIONS = 2
_STREAM_SEMANTICS = 3

DATASET_VERSION = 1


@dataclass(frozen=True)
class TrueSlot:
    """Ground-truth slot: entry-edge midpoint, direction along the edge,
    and the unit direction from the edge toward the driving lane."""

    id: int
    entry_mid: Vec2
    entry_dir: Vec2
    open_dir: Vec2
    inclined: bool = False


@dataclass(frozen=True)
class LotLayout:
    lane_centers_y: tuple[float, ...]
    row_x0: float
    row_x1: float
    connector_left_x: float
    connector_right_x: float
    lane_width: float


@dataclass
class WorldModel:
    lot_width: float
    lot_height: float
    slots: list[TrueSlot]
    semantic_cloud: SemanticPointCloud
    true_slot_width: float
    true_slot_depth: float
    layout: LotLayout


@dataclass(frozen=True)
class OdometrySample:
    frame: int
    pose: Pose2


@dataclass(frozen=True)
class DetectionFrame:
    frame: int
    true_pose: Pose2
    roll: float
    pitch: float
    detections: tuple[SlotObservation, ...]


@dataclass(frozen=True)
class SimNoiseConfig:
    """Noise model for odometry and detections.

    Odometry sigmas are per meter traveled; ``odo_drift_bias`` is a
    systematic yaw offset in rad per meter.  Detection sigmas are absolute.
    ``speed_bump_frames`` lists frames where the car pitches and rolls;
    ``slip_frames`` lists frames where the encoder overcounts forward
    travel by ``slip_dist`` meters.
    """

    odo_trans_sigma: float = 0.0
    odo_rot_sigma: float = 0.0
    odo_drift_bias: float = 0.0
    det_pos_sigma: float = 0.0
    det_dir_sigma: float = 0.0
    false_positive_rate: float = 0.0
    miss_rate: float = 0.0
    speed_bump_frames: tuple[int, ...] = ()
    bump_roll_pitch: float = 0.0
    slip_frames: tuple[int, ...] = ()
    slip_dist: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("odo_trans_sigma", "odo_rot_sigma", "det_pos_sigma", "det_dir_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("false_positive_rate", "miss_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def _chevron_anchors(row_x0: float, row_x1: float) -> list[float]:
    """Anchor abscissas of the no-parking chevrons painted along a lane."""
    out = []
    xa = row_x0 + 6.0
    while xa + 1.0 < row_x1:
        out.append(xa)
        xa += _CHEVRON_SPACING
    return out


def _sample_polyline(points: Sequence[np.ndarray], spacing: float = _SPACING) -> np.ndarray:
    """Sample an open polyline at fixed spacing, endpoints included."""
    chunks = []
    for a, b in zip(points[:-1], points[1:]):
        length = float(np.linalg.norm(b - a))
        if length < 1e-12:
            continue
        n = max(int(math.floor(length / spacing + 1e-9)), 1)
        ts = np.arange(n) * spacing / length
        chunks.append(a[None, :] + ts[:, None] * (b - a)[None, :])
    chunks.append(np.asarray(points[-1], dtype=float)[None, :])
    return np.vstack(chunks)


def generate_lot(
    rows: int,
    slots_per_row: int,
    slot_width: float = 2.5,
    slot_depth: float = 5.3,
    inclined_fraction: float = 0.0,
    seed: int = 0,
    *,
    lane_width: float = 6.0,
    margin: float = 6.0,
    pair_gap: float = 0.0,
) -> WorldModel:
    """Build a lot of parallel slot rows plus isolated inclined slots.

    Rows come in facing pairs around a driving lane; consecutive entry
    midpoints in a row are exactly ``slot_width`` apart.  The painted
    world (slot rectangles, lane guide lines, arrows) is sampled into the
    semantic cloud at 0.1 m spacing.
    """
    if rows < 1 or slots_per_row < 1:
        raise ValueError("rows and slots_per_row must be >= 1")
    if slot_width <= 0 or slot_depth <= 0 or lane_width <= 0 or margin <= 0:
        raise ValueError("slot_width, slot_depth, lane_width, margin must be > 0")
    if not 0.0 <= inclined_fraction <= 1.0:
        raise ValueError("inclined_fraction must lie in [0, 1]")

    stride = 2 * slot_depth + lane_width + pair_gap
    row_x0 = margin
    row_x1 = margin + slots_per_row * slot_width
    lot_width = row_x1 + margin

    slots: list[TrueSlot] = []
    entry_lines: list[tuple[float, float]] = []  # (y, open sign)
    lane_centers: list[float] = []
    top = 0.0
    next_id = 0
    for r in range(rows):
        p, q = divmod(r, 2)
        y0 = margin + p * stride
        if q == 0:
            entry_y = y0 + slot_depth
            open_sign = 1.0
            lane_centers.append(entry_y + lane_width / 2.0)
            top = max(top, entry_y + lane_width)
        else:
            entry_y = y0 + slot_depth + lane_width
            open_sign = -1.0
            top = max(top, entry_y + slot_depth)
        entry_lines.append((entry_y, open_sign))
        for j in range(slots_per_row):
            mid = Vec2(row_x0 + (j + 0.5) * slot_width, entry_y)
            slots.append(
                TrueSlot(
                    id=next_id,
                    entry_mid=mid,
                    entry_dir=Vec2(1.0, 0.0),
                    open_dir=Vec2(0.0, open_sign),
                )
            )
            next_id += 1
    lot_height = top + margin

    layout = LotLayout(
        lane_centers_y=tuple(lane_centers),
        row_x0=row_x0,
        row_x1=row_x1,
        connector_left_x=margin / 2.0,
        connector_right_x=lot_width - margin / 2.0,
        lane_width=lane_width,
    )

    # isolated inclined slots in the connector strips
    n_inclined = int(round(inclined_fraction * rows * slots_per_row))
    if n_inclined:
        rng = np.random.default_rng([seed, _STREAM_LOT])
        strips = (
            (1.5, margin - 1.0),
            (lot_width - margin + 1.0, lot_width - 1.5),
        )
        mids = [s.entry_mid for s in slots]
        placed = 0
        attempts = 0
        while placed < n_inclined:
            attempts += 1
            if attempts > 5000:
                raise ValueError("could not place inclined slots with required clearance")
            lo, hi = strips[int(rng.integers(2))]
            x = float(rng.uniform(lo, hi))
            y = float(rng.uniform(2.0, lot_height - 2.0))
            ang = float(rng.uniform(math.pi / 6.0, math.pi / 3.0))
            if rng.integers(2):
                ang = -ang
            cand = Vec2(x, y)
            if any(math.hypot(cand.x - m.x, cand.y - m.y) < _INCLINED_CLEARANCE for m in mids):
                continue
            d = Vec2(math.cos(ang), math.sin(ang))
            open_dir = Vec2(-d.y, d.x)
            slots.append(TrueSlot(next_id, cand, d, open_dir, inclined=True))
            mids.append(cand)
            next_id += 1
            placed += 1

    # painted markings
    clouds_xy: list[np.ndarray] = []
    clouds_label: list[int] = []

    def add(points: np.ndarray, label: str) -> None:
        clouds_xy.append(points)
        clouds_label.extend([CLASS_INDEX[label]] * len(points))

    for s in slots:
        add(
            slot_outline_points(
                s.entry_mid.x, s.entry_mid.y,
                math.atan2(s.entry_dir.y, s.entry_dir.x),
                slot_width, slot_depth, s.open_dir,
            ),
            "slot-line",
        )

    # every slot carries a painted stall number just inside its mouth; the
    # marker shares the symbol class with the lane arrows
    for s in slots:
        add(
            slot_glyph_points(
                s.entry_mid.x, s.entry_mid.y,
                math.atan2(s.entry_dir.y, s.entry_dir.x),
                s.open_dir,
            ),
            "arrow",
        )

    # the center line is interrupted around each hatched no-parking chevron,
    # the way hatch zones replace the line instead of painting over it
    for y_c in lane_centers:
        x = row_x0
        for xa in _chevron_anchors(row_x0, row_x1):
            if xa - _CHEVRON_CLEAR > x:
                add(
                    _sample_polyline(
                        [np.array([x, y_c]), np.array([xa - _CHEVRON_CLEAR, y_c])]
                    ),
                    "lane-marking",
                )
            x = xa + _CHEVRON_CLEAR
        if row_x1 > x:
            add(
                _sample_polyline([np.array([x, y_c]), np.array([row_x1, y_c])]),
                "lane-marking",
            )
    if lane_centers:
        y_lo, y_hi = min(lane_centers), max(lane_centers)
        if y_hi > y_lo:
            for x in (layout.connector_left_x, layout.connector_right_x):
                add(
                    _sample_polyline([np.array([x, y_lo]), np.array([x, y_hi])]),
                    "lane-marking",
                )

    for y_c in lane_centers:
        for xa in _chevron_anchors(row_x0, row_x1):
            tip = np.array([xa + 0.6, y_c])
            add(_sample_polyline([np.array([xa - 0.6, y_c + 0.45]), tip]), "arrow")
            add(_sample_polyline([np.array([xa - 0.6, y_c - 0.45]), tip]), "arrow")

    cloud = SemanticPointCloud(np.vstack(clouds_xy), np.asarray(clouds_label, dtype=np.uint8))
    return WorldModel(
        lot_width=lot_width,
        lot_height=lot_height,
        slots=slots,
        semantic_cloud=cloud,
        true_slot_width=slot_width,
        true_slot_depth=slot_depth,
        layout=layout,
    )


def generate_trajectory(world: WorldModel, route: Sequence[Vec2], step: float) -> list[Pose2]:
    """Sample poses every ``step`` meters along a piecewise-linear route.

    The heading of each pose is the tangent of the segment it lies on.
    Waypoints must stay inside the lot bounds.
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    pts = []
    for w in route:
        if not (0.0 <= w.x <= world.lot_width and 0.0 <= w.y <= world.lot_height):
            raise ValueError(f"waypoint ({w.x}, {w.y}) outside lot bounds")
        p = np.array([w.x, w.y])
        if pts and np.linalg.norm(p - pts[-1]) < 1e-12:
            continue
        pts.append(p)
    if len(pts) < 2:
        raise ValueError("route needs at least two distinct waypoints")

    seg = np.diff(np.asarray(pts), axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    headings = np.arctan2(seg[:, 1], seg[:, 0])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = float(cum[-1])

    n = int(math.floor(total / step + 1e-9))
    poses = []
    for k in range(n + 1):
        s = k * step
        i = int(np.searchsorted(cum, s, side="right")) - 1
        i = min(max(i, 0), len(seg_len) - 1)
        t = (s - cum[i]) / seg_len[i]
        pos = pts[i] + t * seg[i]
        poses.append(Pose2(float(pos[0]), float(pos[1]), float(headings[i])))
    return poses


def simulate_odometry(trajectory: Sequence[Pose2], noise: SimNoiseConfig) -> list[OdometrySample]:
    """Dead-reckoned odometry: true relative increments, perturbed, re-chained.

    Per-meter Gaussian noise plus the systematic yaw bias are applied to
    each increment; the first sample equals the first true pose.  At each
    frame listed in ``slip_frames`` the encoder overcounts forward travel
    by ``slip_dist`` meters (a wheel-slip event), shifting the chain from
    that frame on.
    """
    if not trajectory:
        return []
    rng = np.random.default_rng([noise.seed, _STREAM_ODOMETRY])
    slips = frozenset(noise.slip_frames)
    out = [OdometrySample(0, trajectory[0])]
    cur = trajectory[0]
    for i in range(1, len(trajectory)):
        d = between(trajectory[i - 1], trajectory[i])
        dist = math.hypot(d.x, d.y)
        e = rng.normal(size=3)
        st = noise.odo_trans_sigma * dist
        sr = noise.odo_rot_sigma * dist
        slip = noise.slip_dist if i in slips else 0.0
        noisy = Pose2(
            d.x + e[0] * st + slip,
            d.y + e[1] * st,
            d.theta + e[2] * sr + noise.odo_drift_bias * dist,
        )
        cur = compose(cur, noisy)
        out.append(OdometrySample(i, cur))
    return out


def simulate_detections(
    world: WorldModel,
    trajectory: Sequence[Pose2],
    noise: SimNoiseConfig,
    detect_radius: float = 8.0,
) -> list[DetectionFrame]:
    """Per-frame slot detections in the car frame.

    True slots within ``detect_radius`` are reported with Gaussian position
    and direction noise unless missed; with probability
    ``false_positive_rate`` a frame gains one spurious detection placed
    uniformly in range but never within 0.5 m of a true slot midpoint.
    """
    if detect_radius <= 0:
        raise ValueError("detect_radius must be > 0")
    rng = np.random.default_rng([noise.seed, _STREAM_DETECTIONS])
    mids = np.array([[s.entry_mid.x, s.entry_mid.y] for s in world.slots])
    bump_frames = set(noise.speed_bump_frames)
    frames: list[DetectionFrame] = []
    for i, pose in enumerate(trajectory):
        roll = pitch = 0.0
        if i in bump_frames:
            roll = pitch = noise.bump_roll_pitch
        inv = inverse(pose)
        dets: list[SlotObservation] = []
        if len(mids):
            deltas = mids - pose.xy[None, :]
            in_range = np.flatnonzero(np.einsum("ij,ij->i", deltas, deltas) <= detect_radius**2)
        else:
            in_range = np.empty((0,), dtype=int)
        for idx in in_range:
            if noise.miss_rate > 0 and rng.uniform() < noise.miss_rate:
                continue
            s = world.slots[int(idx)]
            mid_car = transform_point(inv, s.entry_mid)
            e = rng.normal(size=2) * noise.det_pos_sigma
            mx, my = mid_car.x + e[0], mid_car.y + e[1]
            rng_m = math.hypot(mx, my)
            ang_car = normalize_angle(
                math.atan2(s.entry_dir.y, s.entry_dir.x) - pose.theta
                + rng.normal() * noise.det_dir_sigma
            )
            conf = float(rng.uniform(0.5, 1.0))
            if rng_m > detect_radius:
                continue
            dets.append(
                SlotObservation(
                    midpoint_car=Vec2(mx, my),
                    entry_dir_car=Vec2(math.cos(ang_car), math.sin(ang_car)),
                    confidence=conf,
                    dist_ic=1.0 - min(rng_m / detect_radius, 1.0),
                    roll=roll,
                    pitch=pitch,
                    frame=i,
                )
            )
        if noise.false_positive_rate > 0 and rng.uniform() < noise.false_positive_rate:
            for _ in range(100):
                r = detect_radius * math.sqrt(float(rng.uniform()))
                phi = float(rng.uniform(0.0, 2.0 * math.pi))
                cand_car = Vec2(r * math.cos(phi), r * math.sin(phi))
                cand_world = transform_point(pose, cand_car)
                if len(mids):
                    d2 = np.min(np.sum((mids - np.array([cand_world.x, cand_world.y])) ** 2, axis=1))
                    if d2 < _FALSE_POSITIVE_CLEARANCE**2:
                        continue
                ang = float(rng.uniform(-math.pi, math.pi))
                dets.append(
                    SlotObservation(
                        midpoint_car=cand_car,
                        entry_dir_car=Vec2(math.cos(ang), math.sin(ang)),
                        confidence=float(rng.uniform(0.2, 0.7)),
                        dist_ic=1.0 - min(r / detect_radius, 1.0),
                        roll=roll,
                        pitch=pitch,
                        frame=i,
                    )
                )
                break
        frames.append(DetectionFrame(i, pose, roll, pitch, tuple(dets)))
    return frames


def simulate_semantic_frames(
    world: WorldModel,
    trajectory: Sequence[Pose2],
    noise: SimNoiseConfig,
    radius: float = 8.0,
    stride: int = 8,
) -> list[SemanticPointCloud]:
    """Per-frame semantic point clouds in the car frame.

    World marking points within ``radius`` of the car are subsampled by
    ``stride`` and perturbed with the detection position noise.
    """
    rng = np.random.default_rng([noise.seed, _STREAM_SEMANTICS])
    xy = world.semantic_cloud.xy
    labels = world.semantic_cloud.labels
    out = []
    for pose in trajectory:
        d = xy - pose.xy[None, :]
        idx = np.flatnonzero(np.einsum("ij,ij->i", d, d) <= radius**2)[::stride]
        pts = transform_points(inverse(pose), xy[idx])
        if noise.det_pos_sigma > 0:
            pts = pts + rng.normal(size=pts.shape) * noise.det_pos_sigma
        elif len(idx):
            rng.normal(size=(len(idx), 2))  # keep the stream aligned across noise settings
        out.append(SemanticPointCloud(pts, labels[idx]))
    return out


@dataclass
class Dataset:
    """Everything one simulated traversal produces."""

    world: WorldModel
    truth: list[Pose2]
    odometry: list[OdometrySample]
    detections: list[DetectionFrame]
    semantic_frames: list[SemanticPointCloud] = field(default_factory=list)
    detect_radius: float = 8.0


def write_pose_csv(path: str | Path, rows: Sequence[tuple[int, Pose2]], header: str) -> None:
    lines = [f"# parkslam {header} v{DATASET_VERSION}", "frame,x,y,theta"]
    for frame, p in rows:
        lines.append(f"{frame},{p.x!r},{p.y!r},{p.theta!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_pose_csv(path: str | Path) -> list[tuple[int, Pose2]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("frame"):
            continue
        f, x, y, th = line.split(",")
        rows.append((int(f), Pose2(float(x), float(y), float(th))))
    return rows


def save_dataset(dataset: Dataset, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    w = dataset.world
    world_payload = {
        "version": DATASET_VERSION,
        "lot_width": float(w.lot_width),
        "lot_height": float(w.lot_height),
        "true_slot_width": float(w.true_slot_width),
        "true_slot_depth": float(w.true_slot_depth),
        "detect_radius": float(dataset.detect_radius),
        "layout": {
            "lane_centers_y": [float(v) for v in w.layout.lane_centers_y],
            "row_x0": float(w.layout.row_x0),
            "row_x1": float(w.layout.row_x1),
            "connector_left_x": float(w.layout.connector_left_x),
            "connector_right_x": float(w.layout.connector_right_x),
            "lane_width": float(w.layout.lane_width),
        },
        "slots": [
            {
                "id": s.id,
                "x": float(s.entry_mid.x),
                "y": float(s.entry_mid.y),
                "dir_x": float(s.entry_dir.x),
                "dir_y": float(s.entry_dir.y),
                "open_x": float(s.open_dir.x),
                "open_y": float(s.open_dir.y),
                "inclined": bool(s.inclined),
            }
            for s in w.slots
        ],
        "classes": list(SEMANTIC_CLASSES),
        "points": [
            [float(p[0]), float(p[1]), int(c)]
            for p, c in zip(w.semantic_cloud.xy, w.semantic_cloud.labels)
        ],
    }
    (out / "world.json").write_text(json.dumps(world_payload, sort_keys=True) + "\n")

    write_pose_csv(out / "odometry.csv", [(o.frame, o.pose) for o in dataset.odometry], "odometry")
    write_pose_csv(out / "truth.csv", list(enumerate(dataset.truth)), "truth")

    det_payload = {
        "version": DATASET_VERSION,
        "frames": [
            {
                "frame": f.frame,
                "roll": float(f.roll),
                "pitch": float(f.pitch),
                "true": [float(f.true_pose.x), float(f.true_pose.y), float(f.true_pose.theta)],
                "detections": [
                    {
                        "x": float(d.midpoint_car.x),
                        "y": float(d.midpoint_car.y),
                        "dx": float(d.entry_dir_car.x),
                        "dy": float(d.entry_dir_car.y),
                        "conf": float(d.confidence),
                        "dist_ic": float(d.dist_ic),
                    }
                    for d in f.detections
                ],
            }
            for f in dataset.detections
        ],
    }
    (out / "detections.json").write_text(json.dumps(det_payload, sort_keys=True) + "\n")

    lines = [f"# parkslam semantics v{DATASET_VERSION}", "frame,label,x,y"]
    for i, cloud in enumerate(dataset.semantic_frames):
        for p, c in zip(cloud.xy, cloud.labels):
            lines.append(f"{i},{int(c)},{float(p[0])!r},{float(p[1])!r}")
    (out / "semantics.csv").write_text("\n".join(lines) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    root = Path(path)
    payload = json.loads((root / "world.json").read_text())
    if payload.get("version") != DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {payload.get('version')!r}")
    slots = [
        TrueSlot(
            id=int(s["id"]),
            entry_mid=Vec2(float(s["x"]), float(s["y"])),
            entry_dir=Vec2(float(s["dir_x"]), float(s["dir_y"])),
            open_dir=Vec2(float(s["open_x"]), float(s["open_y"])),
            inclined=bool(s["inclined"]),
        )
        for s in payload["slots"]
    ]
    pts = payload["points"]
    if pts:
        arr = np.asarray(pts, dtype=float)
        cloud = SemanticPointCloud(arr[:, :2], arr[:, 2].astype(np.uint8))
    else:
        cloud = SemanticPointCloud.empty()
    lay = payload["layout"]
    world = WorldModel(
        lot_width=float(payload["lot_width"]),
        lot_height=float(payload["lot_height"]),
        slots=slots,
        semantic_cloud=cloud,
        true_slot_width=float(payload["true_slot_width"]),
        true_slot_depth=float(payload["true_slot_depth"]),
        layout=LotLayout(
            lane_centers_y=tuple(float(v) for v in lay["lane_centers_y"]),
            row_x0=float(lay["row_x0"]),
            row_x1=float(lay["row_x1"]),
            connector_left_x=float(lay["connector_left_x"]),
            connector_right_x=float(lay["connector_right_x"]),
            lane_width=float(lay["lane_width"]),
        ),
    )

    odometry = [OdometrySample(f, p) for f, p in read_pose_csv(root / "odometry.csv")]
    truth = [p for _f, p in read_pose_csv(root / "truth.csv")]

    det_payload = json.loads((root / "detections.json").read_text())
    detections = []
    for f in det_payload["frames"]:
        dets = tuple(
            SlotObservation(
                midpoint_car=Vec2(float(d["x"]), float(d["y"])),
                entry_dir_car=Vec2(float(d["dx"]), float(d["dy"])),
                confidence=float(d["conf"]),
                dist_ic=float(d["dist_ic"]),
                roll=float(f["roll"]),
                pitch=float(f["pitch"]),
                frame=int(f["frame"]),
            )
            for d in f["detections"]
        )
        tp = f["true"]
        detections.append(
            DetectionFrame(
                frame=int(f["frame"]),
                true_pose=Pose2(float(tp[0]), float(tp[1]), float(tp[2])),
                roll=float(f["roll"]),
                pitch=float(f["pitch"]),
                detections=dets,
            )
        )

    semantic_frames: list[SemanticPointCloud] = []
    sem_path = root / "semantics.csv"
    if sem_path.exists():
        per_frame_xy: dict[int, list[list[float]]] = {}
        per_frame_label: dict[int, list[int]] = {}
        for line in sem_path.read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("frame"):
                continue
            f_s, c_s, x_s, y_s = line.split(",")
            f_i = int(f_s)
            per_frame_xy.setdefault(f_i, []).append([float(x_s), float(y_s)])
            per_frame_label.setdefault(f_i, []).append(int(c_s))
        n = len(truth)
        for i in range(n):
            if i in per_frame_xy:
                semantic_frames.append(
                    SemanticPointCloud(
                        np.asarray(per_frame_xy[i]),
                        np.asarray(per_frame_label[i], dtype=np.uint8),
                    )
                )
            else:
                semantic_frames.append(SemanticPointCloud.empty())

    return Dataset(
        world=world,
        truth=truth,
        odometry=odometry,
        detections=detections,
        semantic_frames=semantic_frames,
        detect_radius=float(payload.get("detect_radius", 8.0)),
    )
