"""Keyframe mapping pipeline over odometry and parking-slot detections.

Every keyframe chains a new pose from the previous optimized one, folds the
frame's detections into the global slot store, extends the factor graph
(odometry, slot registrations, adjacency and row-direction constraints),
optimizes, and re-registers all slots through the refreshed poses.  The slot
store is authoritative: graph slot nodes mirror it before optimization and
are overwritten from it afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Pose2, Vec2, between, compose, normalize_angle, transform_point, transform_points
from .graph import FactorGraph, OptimizeSettings, compute_global_direction
from .pointcloud import CLASS_INDEX, SemanticPointCloud
from .slots import (
    ANCHOR_CAP,
    Anchor,
    AssocKind,
    FilterAction,
    GlobalSlot,
    MapDocument,
    MapSlot,
    SlotIndex,
    SlotObservation,
    associate,
    filter_step,
    find_adjacent_pairs,
    observation_weight,
    reregister_all,
    slot_glyph_points,
    slot_outline_points,
    update_slot,
)

_MAP_VOXEL = 0.05

# De-comb fraction for re-rendered slot markings in the exported map; keeps
# localization from sliding a rendering along itself by whole sample steps.
_RENDER_JITTER = 0.5


@dataclass(frozen=True)
class GcslamConfig:
    """Pipeline knobs; the ablation switches are the ``use_*`` flags."""

    keyframe_spacing: float = 1.0
    slot_width: float = 2.5
    slot_depth: float = 5.3
    use_adjacent: bool = True
    use_vertical: bool = True
    use_filter: bool = True
    oet_trans_sigma_per_m: float = 0.01
    oet_rot_sigma_per_m: float = 0.001
    oet_sigma_floor: float = 1e-4
    ret_sigma: float = 0.05
    ret_sigma_floor: float = 1e-3
    adjacent_information: float = 400.0
    vertical_information: float = 2500.0
    prior_information: float = 1e6
    direction_min_stable: int = 5
    optimize: OptimizeSettings = OptimizeSettings(cost_tol=1e-8, step_tol=1e-8)


@dataclass
class KeyframeLogEntry:
    frame: int
    keyframe: int
    n_slots: int
    n_stable: int
    n_factors: int
    iterations: int
    initial_cost: float
    final_cost: float
    converged: bool


@dataclass
class PipelineState:
    graph: FactorGraph
    slots: dict[int, GlobalSlot]
    index: SlotIndex
    config: GcslamConfig
    next_slot_id: int = 0
    keyframes: list[int] = field(default_factory=list)
    kf_odo: list[Pose2] = field(default_factory=list)
    kf_clouds: list[SemanticPointCloud | None] = field(default_factory=list)
    stabilized_order: list[int] = field(default_factory=list)
    global_direction: Vec2 | None = None
    adjacent_pairs: set[tuple[int, int]] = field(default_factory=set)
    vertical_pairs: set[tuple[int, int]] = field(default_factory=set)
    log: list[KeyframeLogEntry] = field(default_factory=list)
    link_dtheta: list[float] = field(default_factory=list)
    link_dist: list[float] = field(default_factory=list)
    yaw_bias: float = 0.0
    priors_refreshed: bool = False


def new_state(config: GcslamConfig | None = None) -> PipelineState:
    cfg = config if config is not None else GcslamConfig()
    return PipelineState(graph=FactorGraph(), slots={}, index=SlotIndex(), config=cfg)


def _car_heading(obs: SlotObservation) -> float:
    return math.atan2(obs.entry_dir_car.y, obs.entry_dir_car.x)


def _adjacent_measurement(slot_k: GlobalSlot, slot_p: GlobalSlot) -> Vec2:
    """Expected offset between two adjacent slots from their entry vectors.

    The second vector is flipped onto the first if they disagree, then the
    average is flipped once more so it points from p toward k.
    """
    wk = slot_k.entry_vec
    wp = slot_p.entry_vec
    if wk.x * wp.x + wk.y * wp.y < 0.0:
        wp = Vec2(-wp.x, -wp.y)
    mx = (wk.x + wp.x) / 2.0
    my = (wk.y + wp.y) / 2.0
    dx = slot_k.node.x - slot_p.node.x
    dy = slot_k.node.y - slot_p.node.y
    if mx * dx + my * dy < 0.0:
        mx, my = -mx, -my
    return Vec2(mx, my)


_BIAS_MIN_BASELINE = 30.0
_PRIOR_REFRESH_BASELINE = 60.0


def _calibrate_heading_rate(state: PipelineState) -> None:
    """Re-estimate the constant heading-rate error of the odometry.

    The optimized poses recover the true heading increments wherever slot
    registrations pin them down, so the average gap between raw odometry
    increments and optimized increments, per meter traveled, estimates the
    gyro-style bias.  Every stored odometry measurement is then rectified
    with the refreshed estimate.  The estimate stays zero until enough
    baseline has accumulated.

    Once the baseline is long enough for the estimate to settle, the global
    slot direction and the adjacent-offset measurements are re-derived, one
    time only, from the current slot estimates, so the structural priors do
    not bake in the drift of the uncalibrated opening stretch.  Repeating
    that refresh would couple the priors to the layout they themselves pull
    on, which turns estimation noise into an unbounded rotation random walk,
    so after the single refresh both stay frozen.
    """
    total = sum(state.link_dist)
    if total < _BIAS_MIN_BASELINE:
        return
    g = state.graph
    opt_sum = 0.0
    for k in range(1, len(state.keyframes)):
        opt_sum += normalize_angle(g.pose(k).theta - g.pose(k - 1).theta)
    raw_sum = sum(state.link_dtheta)
    state.yaw_bias = (raw_sum - opt_sum) / total
    g.set_odometry_rotations(
        [
            raw - state.yaw_bias * dist
            for raw, dist in zip(state.link_dtheta, state.link_dist)
        ]
    )
    if state.priors_refreshed or total < _PRIOR_REFRESH_BASELINE:
        return
    state.priors_refreshed = True
    if state.global_direction is not None:
        first = state.stabilized_order[: state.config.direction_min_stable]
        if all(sid in state.slots for sid in first):
            state.global_direction = compute_global_direction(
                [state.slots[sid].entry_vec for sid in first]
            )
            g.set_vertical_directions(state.global_direction)
    if state.config.use_adjacent:
        g.set_adjacent_measurements(
            lambda a, b: _adjacent_measurement(state.slots[a], state.slots[b])
        )


def process_keyframe(
    state: PipelineState,
    frame: int,
    odo_pose: Pose2,
    observations: Sequence[SlotObservation],
    cloud: SemanticPointCloud | None = None,
) -> KeyframeLogEntry:
    """Fold one keyframe into the map and re-optimize."""
    cfg = state.config
    g = state.graph
    kf = len(state.keyframes)

    if kf == 0:
        pose = odo_pose
        g.add_pose_node(0, pose)
        g.add_prior(0, pose, (cfg.prior_information,) * 3)
    else:
        raw = between(state.kf_odo[-1], odo_pose)
        dist = math.hypot(raw.x, raw.y)
        # subtract the running heading-rate bias estimate before the
        # increment enters the graph; the raw value is kept for updating it
        rel = Pose2(raw.x, raw.y, raw.theta - state.yaw_bias * dist)
        sig_t = max(cfg.oet_trans_sigma_per_m * dist, cfg.oet_sigma_floor)
        sig_r = max(cfg.oet_rot_sigma_per_m * dist, cfg.oet_sigma_floor)
        pose = compose(g.pose(kf - 1), rel)
        g.add_pose_node(kf, pose)
        g.add_odometry(kf - 1, kf, rel, (sig_t**-2, sig_t**-2, sig_r**-2))
        state.link_dtheta.append(raw.theta)
        state.link_dist.append(dist)
    state.keyframes.append(frame)
    state.kf_odo.append(odo_pose)
    if cloud is not None:
        keep = cloud.labels != CLASS_INDEX["slot-line"]
        state.kf_clouds.append(cloud.subset(keep))
    else:
        state.kf_clouds.append(None)

    # classify detections against the stored slots; at most one update per
    # slot per keyframe, extra hits on the same slot are dropped
    assoc: list[tuple[int, SlotObservation, Vec2]] = []
    fresh: list[tuple[SlotObservation, Vec2]] = []
    claimed: set[int] = set()
    for obs in observations:
        mid_w = transform_point(pose, obs.midpoint_car)
        a = associate(mid_w, state.index)
        if a.kind is AssocKind.ASSOCIATED and a.slot_id not in claimed:
            claimed.add(a.slot_id)
            assoc.append((a.slot_id, obs, mid_w))
        elif a.kind is AssocKind.CREATE_NEW:
            fresh.append((obs, mid_w))

    observed_ids = {sid for sid, _o, _m in assoc}
    deleted: set[int] = set()
    newly_stable: list[int] = []
    if cfg.use_filter:
        unstable = [s for s in state.slots.values() if not s.stable]
        for sid, action in filter_step(unstable, observed_ids):
            if action is FilterAction.STABILIZE:
                state.slots[sid].stable = True
                newly_stable.append(sid)
            elif action is FilterAction.DELETE:
                deleted.add(sid)
        for sid in deleted:
            del state.slots[sid]
            g.remove_slot(sid)
            state.adjacent_pairs = {p for p in state.adjacent_pairs if sid not in p}
            state.vertical_pairs = {p for p in state.vertical_pairs if sid not in p}
        filtered_ids = {s.id for s in unstable}
        for sid in observed_ids - filtered_ids:
            state.slots[sid].obs_count += 1
    else:
        for s in state.slots.values():
            s.exist_count += 1
        for sid in observed_ids:
            state.slots[sid].obs_count += 1
    state.stabilized_order.extend(newly_stable)

    ret_sigma = max(cfg.ret_sigma, cfg.ret_sigma_floor)
    ret_info = (ret_sigma**-2, ret_sigma**-2)
    for sid, obs, mid_w in assoc:
        if sid in deleted:
            continue
        slot = state.slots[sid]
        th_car = _car_heading(obs)
        th_w = normalize_angle(pose.theta + th_car)
        w_obs = observation_weight(obs)
        update_slot(slot, mid_w, th_w, w_obs)
        slot.anchors.append(Anchor(kf, obs.midpoint_car.x, obs.midpoint_car.y, th_car, w_obs))
        if len(slot.anchors) > ANCHOR_CAP:
            del slot.anchors[0]
        g.add_registration(kf, sid, obs.midpoint_car, ret_info)

    created: list[int] = []
    for obs, mid_w in fresh:
        sid = state.next_slot_id
        state.next_slot_id += 1
        th_car = _car_heading(obs)
        th_w = normalize_angle(pose.theta + th_car)
        w_obs = observation_weight(obs)
        state.slots[sid] = GlobalSlot(
            id=sid,
            node=Pose2(mid_w.x, mid_w.y, th_w),
            entry_vec=Vec2(cfg.slot_width * math.cos(th_w), cfg.slot_width * math.sin(th_w)),
            weight=w_obs,
            stable=not cfg.use_filter,
            anchors=[Anchor(kf, obs.midpoint_car.x, obs.midpoint_car.y, th_car, w_obs)],
        )
        g.add_slot_node(sid, mid_w.as_array())
        g.add_registration(kf, sid, obs.midpoint_car, ret_info)
        created.append(sid)
        if not cfg.use_filter:
            state.stabilized_order.append(sid)

    # adjacency among this keyframe's stable slots drives both constraint kinds
    if cfg.use_adjacent or cfg.use_vertical:
        eligible = sorted(
            sid for sid in (observed_ids - deleted) | set(created) if state.slots[sid].stable
        )
        points = [(sid, Vec2(state.slots[sid].node.x, state.slots[sid].node.y)) for sid in eligible]
        for a, b in find_adjacent_pairs(points):
            if (a, b) in state.adjacent_pairs:
                continue
            state.adjacent_pairs.add((a, b))
            if cfg.use_adjacent:
                m = _adjacent_measurement(state.slots[a], state.slots[b])
                g.add_adjacent(a, b, m, (cfg.adjacent_information,) * 2)
            if cfg.use_vertical and state.global_direction is not None:
                g.add_vertical(a, b, state.global_direction, cfg.vertical_information)
                state.vertical_pairs.add((a, b))

    if (
        cfg.use_vertical
        and state.global_direction is None
        and len(state.stabilized_order) >= cfg.direction_min_stable
    ):
        first = state.stabilized_order[: cfg.direction_min_stable]
        state.global_direction = compute_global_direction(
            [state.slots[sid].entry_vec for sid in first]
        )
        for a, b in sorted(state.adjacent_pairs - state.vertical_pairs):
            g.add_vertical(a, b, state.global_direction, cfg.vertical_information)
            state.vertical_pairs.add((a, b))

    # anchors replayed through the latest pose estimates give every slot a
    # fused initial value, then the solve refines slots and poses jointly
    poses = {k: g.pose(k) for k in range(len(state.keyframes))}
    reregister_all(list(state.slots.values()), poses)
    for sid, s in state.slots.items():
        g.set_slot(sid, (s.node.x, s.node.y))
    report = g.optimize(cfg.optimize)
    for sid, s in state.slots.items():
        x, y = g.slot(sid)
        s.node = Pose2(float(x), float(y), s.node.theta)
    state.index.rebuild(state.slots)
    _calibrate_heading_rate(state)

    entry = KeyframeLogEntry(
        frame=frame,
        keyframe=kf,
        n_slots=len(state.slots),
        n_stable=sum(1 for s in state.slots.values() if s.stable),
        n_factors=sum(g.factor_counts().values()),
        iterations=report.iterations,
        initial_cost=report.initial_cost,
        final_cost=report.final_cost,
        converged=report.converged,
    )
    state.log.append(entry)
    return entry


@dataclass
class GcslamResult:
    state: PipelineState
    config: GcslamConfig

    @property
    def trajectory(self) -> list[tuple[int, Pose2]]:
        """Optimized pose per keyframe, tagged with the source frame index."""
        g = self.state.graph
        return [(f, g.pose(k)) for k, f in enumerate(self.state.keyframes)]

    @property
    def slots(self) -> dict[int, GlobalSlot]:
        return self.state.slots

    @property
    def log(self) -> list[KeyframeLogEntry]:
        return self.state.log


def run_gcslam(
    odometry: Sequence[Pose2],
    detections: Sequence[Sequence[SlotObservation]],
    config: GcslamConfig | None = None,
    semantic_frames: Sequence[SemanticPointCloud] | None = None,
) -> GcslamResult:
    """Run the full pipeline over per-frame odometry poses and detections.

    A keyframe is taken at frame 0 and whenever the odometry has moved
    ``keyframe_spacing`` meters since the previous one; detections on other
    frames are ignored.
    """
    cfg = config if config is not None else GcslamConfig()
    if len(odometry) != len(detections):
        raise ValueError("odometry and detections must cover the same frames")
    if semantic_frames is not None and len(semantic_frames) != len(odometry):
        raise ValueError("semantic_frames must cover the same frames as odometry")

    state = new_state(cfg)
    traveled = 0.0
    prev: Pose2 | None = None
    for frame, odo in enumerate(odometry):
        if prev is not None:
            d = between(prev, odo)
            traveled += math.hypot(d.x, d.y)
        prev = odo
        if frame != 0 and traveled < cfg.keyframe_spacing:
            continue
        traveled = 0.0
        cloud = semantic_frames[frame] if semantic_frames is not None else None
        process_keyframe(state, frame, odo, detections[frame], cloud)
    return GcslamResult(state=state, config=cfg)


def _open_direction(slot: GlobalSlot) -> Vec2:
    """Open side of a slot by majority vote over its anchors.

    Each anchor saw the car somewhere in the driving lane; the sign of the
    car's offset across the entry edge picks which perpendicular faces the
    lane.
    """
    vote = 0
    for a in slot.anchors:
        s = a.mx * math.sin(a.theta_car) - a.my * math.cos(a.theta_car)
        vote += 1 if s >= 0.0 else -1
    sign = 1.0 if vote >= 0 else -1.0
    th = slot.node.theta
    return Vec2(sign * -math.sin(th), sign * math.cos(th))


def _voxel_dedup(xy: np.ndarray, labels: np.ndarray, voxel: float) -> tuple[np.ndarray, np.ndarray]:
    if not len(xy):
        return xy, labels
    key = np.empty((len(xy), 3), dtype=np.int64)
    key[:, :2] = np.floor(xy / voxel).astype(np.int64)
    key[:, 2] = labels
    _, first = np.unique(key, axis=0, return_index=True)
    first.sort()
    return xy[first], labels[first]


_CULL_DILATION = 0.3


def _outside_stable_slots(
    state: PipelineState, cfg: GcslamConfig, xy: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """Mask of points to keep: symbol points inside a stable slot are dropped.

    The rectangle test runs in each slot's own frame and is dilated a little
    so observation noise around the rendered marker is swept up as well.
    """
    keep = np.ones(len(xy), dtype=bool)
    sym = np.flatnonzero(labels == CLASS_INDEX["arrow"])
    if not len(sym):
        return keep
    pts = xy[sym]
    alive = keep[sym]
    for s in state.slots.values():
        if not s.stable:
            continue
        open_dir = _open_direction(s)
        th = s.node.theta
        rel = pts - np.array([s.node.x, s.node.y])
        u = rel[:, 0] * math.cos(th) + rel[:, 1] * math.sin(th)
        v = -(rel[:, 0] * open_dir.x + rel[:, 1] * open_dir.y)
        half_w = s.entry_vec.norm() / 2.0 + _CULL_DILATION
        inside = (
            (np.abs(u) <= half_w)
            & (v >= -_CULL_DILATION)
            & (v <= cfg.slot_depth + _CULL_DILATION)
        )
        alive &= ~inside
    keep[sym] = alive
    return keep


def export_map(result: GcslamResult) -> MapDocument:
    """Bundle the final slots and semantic cloud into a map document.

    Slot rectangles are regenerated from the fused slot states so the cloud
    reflects the optimized map rather than raw hits; lane markings and
    arrows are the accumulated keyframe points pushed through the optimized
    poses and thinned on a 5 cm grid.
    """
    state = result.state
    cfg = result.config
    g = state.graph

    rows: list[MapSlot] = []
    parts_xy: list[np.ndarray] = []
    parts_label: list[np.ndarray] = []
    for sid in sorted(state.slots):
        s = state.slots[sid]
        open_dir = _open_direction(s)
        rows.append(
            MapSlot(
                id=sid,
                x=s.node.x,
                y=s.node.y,
                theta=s.node.theta,
                width=s.entry_vec.norm(),
                weight=s.weight,
                obs_count=s.obs_count,
                stable=s.stable,
                open_x=open_dir.x,
                open_y=open_dir.y,
            )
        )
        if s.stable:
            pts = slot_outline_points(
                s.node.x,
                s.node.y,
                s.node.theta,
                s.entry_vec.norm(),
                cfg.slot_depth,
                open_dir,
                jitter=_RENDER_JITTER,
            )
            parts_xy.append(pts)
            parts_label.append(np.full(len(pts), CLASS_INDEX["slot-line"], dtype=np.uint8))
            glyph = slot_glyph_points(
                s.node.x, s.node.y, s.node.theta, open_dir, jitter=_RENDER_JITTER
            )
            parts_xy.append(glyph)
            parts_label.append(np.full(len(glyph), CLASS_INDEX["arrow"], dtype=np.uint8))

    # slot-attached markings were re-rendered above from the fused states, so
    # raw observations of them would only smear the crisp rendering; symbol
    # points inside a stable slot are dropped, everything else is kept
    obs_xy: list[np.ndarray] = []
    obs_label: list[np.ndarray] = []
    for k, cl in enumerate(state.kf_clouds):
        if cl is None or not len(cl):
            continue
        obs_xy.append(transform_points(g.pose(k), cl.xy))
        obs_label.append(cl.labels)
    if obs_xy:
        xy = np.vstack(obs_xy)
        labels = np.concatenate(obs_label)
        mask = _outside_stable_slots(state, cfg, xy, labels)
        parts_xy.append(xy[mask])
        parts_label.append(labels[mask])

    if parts_xy:
        xy = np.vstack(parts_xy)
        labels = np.concatenate(parts_label)
        xy, labels = _voxel_dedup(xy, labels, _MAP_VOXEL)
        cloud = SemanticPointCloud(xy, labels)
    else:
        cloud = SemanticPointCloud.empty()
    return MapDocument(slots=rows, cloud=cloud, slot_depth=cfg.slot_depth)
