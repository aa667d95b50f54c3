"""Localization against a previously built map.

Per-frame odometry chains pose nodes; every few frames the semantic scan is
registered to a local crop of the map cloud by class-aware ICP, and accepted
registrations enter the graph as unary pose measurements.  Only a sliding
window of recent nodes stays free during optimization, so the cost per
update stays bounded while the full trajectory remains available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose2, Vec2, between, compose, transform_points
from .graph import FactorGraph, OptimizeSettings
from .pointcloud import SEMANTIC_CLASSES, SemanticPointCloud
from .slots import MapDocument


@dataclass(frozen=True)
class SflocConfig:
    """Settings for map-based tracking.

    Odometry sigmas here are deliberately inflated well past the sensor
    noise level: dead reckoning carries unmodeled bias, so the chain should
    only smooth between registrations, never outvote them.  The initial
    prior is loose for the same reason; the first registration is what
    actually fixes the start of the track.
    """

    icp_every: int = 10
    local_map_size: float = 30.0
    max_corr_dist: float = 1.0
    icp_max_iters: int = 50
    icp_tol: float = 1e-4
    min_correspondences: int = 10
    jump_threshold: float = 2.0
    window: int = 100
    oet_trans_sigma_per_m: float = 0.1
    oet_rot_sigma_per_m: float = 0.01
    oet_sigma_floor: float = 1e-4
    icp_information: float = 2500.0
    prior_information: float = 1.0
    optimize: OptimizeSettings = OptimizeSettings()


@dataclass(frozen=True)
class IcpResult:
    pose: Pose2
    converged: bool
    n_correspondences: int
    iterations: int
    rmse: float


@dataclass(frozen=True)
class IcpDiagnostic:
    frame: int
    converged: bool
    n_correspondences: int
    iterations: int
    rmse: float
    jump: float
    accepted: bool


def extract_local_map(cloud: SemanticPointCloud, center: Vec2, size: float) -> SemanticPointCloud:
    """Axis-aligned size-by-size crop of the map cloud around ``center``."""
    if size <= 0:
        raise ValueError("size must be > 0")
    half = size / 2.0
    keep = (np.abs(cloud.xy[:, 0] - center.x) <= half) & (
        np.abs(cloud.xy[:, 1] - center.y) <= half
    )
    return cloud.subset(keep)


def semantic_icp(
    scan: SemanticPointCloud,
    map_cloud: SemanticPointCloud,
    init: Pose2,
    max_corr_dist: float = 1.0,
    max_iters: int = 50,
    tol: float = 1e-4,
    min_correspondences: int = 10,
) -> IcpResult:
    """Register a car-frame scan to a world-frame map, matching within class.

    Each round matches every scan point to its nearest map point of the same
    class (within ``max_corr_dist``) and re-solves the full 2-D alignment in
    closed form.  Stops when the pose change drops below ``tol``; reports
    ``converged=False`` when matches ever fall short of
    ``min_correspondences``.
    """
    trees: dict[int, tuple[cKDTree, np.ndarray]] = {}
    for c in range(len(SEMANTIC_CLASSES)):
        pts = map_cloud.of_class(c)
        if len(pts):
            trees[c] = (cKDTree(pts), pts)

    scan_parts = [
        (c, scan.of_class(c)) for c in range(len(SEMANTIC_CLASSES)) if c in trees
    ]
    scan_parts = [(c, pts) for c, pts in scan_parts if len(pts)]

    pose = init
    n_corr = 0
    rmse = math.inf
    for it in range(1, max_iters + 1):
        src_chunks = []
        dst_chunks = []
        d2_sum = 0.0
        for c, pts in scan_parts:
            tree, map_pts = trees[c]
            world = transform_points(pose, pts)
            dist, idx = tree.query(world, distance_upper_bound=max_corr_dist)
            ok = np.isfinite(dist)
            if not np.any(ok):
                continue
            src_chunks.append(pts[ok])
            dst_chunks.append(map_pts[idx[ok]])
            d2_sum += float(np.sum(dist[ok] ** 2))
        n_corr = sum(len(c_) for c_ in src_chunks)
        if n_corr < min_correspondences:
            return IcpResult(pose, False, n_corr, it, math.inf)
        src = np.vstack(src_chunks)
        dst = np.vstack(dst_chunks)
        rmse = math.sqrt(d2_sum / n_corr)

        sc = src.mean(axis=0)
        dc = dst.mean(axis=0)
        ps = src - sc
        qs = dst - dc
        s_dot = float(np.sum(ps[:, 0] * qs[:, 0] + ps[:, 1] * qs[:, 1]))
        s_cross = float(np.sum(ps[:, 0] * qs[:, 1] - ps[:, 1] * qs[:, 0]))
        theta = math.atan2(s_cross, s_dot)
        ct, st = math.cos(theta), math.sin(theta)
        tx = dc[0] - (ct * sc[0] - st * sc[1])
        ty = dc[1] - (st * sc[0] + ct * sc[1])
        new_pose = Pose2(tx, ty, theta)

        d = between(pose, new_pose)
        delta = max(math.hypot(d.x, d.y), abs(d.theta))
        pose = new_pose
        if delta < tol:
            return IcpResult(pose, True, n_corr, it, rmse)
    # ran out of iterations while still moving: report a failed registration
    return IcpResult(pose, False, n_corr, max_iters, rmse)


def detect_jump(prev_icp: Pose2 | None, cur_icp: Pose2, threshold: float) -> bool:
    """Gate between consecutive registrations: strictly farther than
    ``threshold`` counts as a jump; the very first registration never does."""
    if prev_icp is None:
        return False
    return math.hypot(cur_icp.x - prev_icp.x, cur_icp.y - prev_icp.y) > threshold


@dataclass
class SflocState:
    graph: FactorGraph
    config: SflocConfig
    map_cloud: SemanticPointCloud
    n_frames: int = 0
    last_odo: Pose2 | None = None
    last_icp: Pose2 | None = None
    diagnostics: list[IcpDiagnostic] = field(default_factory=list)


def new_state(map_doc: MapDocument, config: SflocConfig | None = None) -> SflocState:
    cfg = config if config is not None else SflocConfig()
    return SflocState(graph=FactorGraph(), config=cfg, map_cloud=map_doc.cloud)


def localize_frame(
    state: SflocState, odo_pose: Pose2, scan: SemanticPointCloud | None
) -> Pose2:
    """Advance the estimator by one frame; returns the current pose estimate."""
    cfg = state.config
    g = state.graph
    frame = state.n_frames

    if frame == 0:
        g.add_pose_node(0, odo_pose)
        g.add_prior(0, odo_pose, (cfg.prior_information,) * 3)
        est = odo_pose
    else:
        rel = between(state.last_odo, odo_pose)
        dist = math.hypot(rel.x, rel.y)
        sig_t = max(cfg.oet_trans_sigma_per_m * dist, cfg.oet_sigma_floor)
        sig_r = max(cfg.oet_rot_sigma_per_m * dist, cfg.oet_sigma_floor)
        est = compose(g.pose(frame - 1), rel)
        g.add_pose_node(frame, est)
        g.add_odometry(frame - 1, frame, rel, (sig_t**-2, sig_t**-2, sig_r**-2))
    state.last_odo = odo_pose
    state.n_frames += 1

    run_icp = scan is not None and frame % cfg.icp_every == 0
    if run_icp:
        local = extract_local_map(state.map_cloud, Vec2(est.x, est.y), cfg.local_map_size)
        res = semantic_icp(
            scan,
            local,
            est,
            max_corr_dist=cfg.max_corr_dist,
            max_iters=cfg.icp_max_iters,
            tol=cfg.icp_tol,
            min_correspondences=cfg.min_correspondences,
        )
        jump = (
            math.hypot(res.pose.x - state.last_icp.x, res.pose.y - state.last_icp.y)
            if state.last_icp is not None
            else 0.0
        )
        accepted = False
        if res.converged:
            if not detect_jump(state.last_icp, res.pose, cfg.jump_threshold):
                g.add_icp(frame, res.pose, (cfg.icp_information,) * 3)
                accepted = True
            state.last_icp = res.pose
        state.diagnostics.append(
            IcpDiagnostic(
                frame=frame,
                converged=res.converged,
                n_correspondences=res.n_correspondences,
                iterations=res.iterations,
                rmse=res.rmse,
                jump=jump,
                accepted=accepted,
            )
        )
        if accepted:
            free = list(range(max(0, frame - cfg.window + 1), frame + 1))
            g.optimize(cfg.optimize, free_poses=free)
            return g.pose(frame)
    return est if frame > 0 else g.pose(0)


@dataclass
class SflocResult:
    estimator: str
    trajectory: list[tuple[int, Pose2]]
    diagnostics: list[IcpDiagnostic]


def run_localization(
    map_doc: MapDocument,
    odometry: Sequence[Pose2],
    semantic_frames: Sequence[SemanticPointCloud],
    config: SflocConfig | None = None,
    estimator: str = "fused",
) -> SflocResult:
    """Track a traversal against a stored map.

    ``estimator`` picks the pipeline: "fused" runs the graph with gated
    registrations, "icp_only" dead-reckons and overwrites the pose with any
    converged registration, "icp_blind" does the same with class labels
    collapsed so matching is purely geometric.
    """
    cfg = config if config is not None else SflocConfig()
    if len(odometry) != len(semantic_frames):
        raise ValueError("odometry and semantic_frames must cover the same frames")
    if estimator not in ("fused", "icp_only", "icp_blind"):
        raise ValueError(f"unknown estimator {estimator!r}")

    if estimator == "fused":
        state = new_state(map_doc, cfg)
        for frame, odo in enumerate(odometry):
            localize_frame(state, odo, semantic_frames[frame])
        g = state.graph
        traj = [(f, g.pose(f)) for f in range(state.n_frames)]
        return SflocResult("fused", traj, state.diagnostics)

    blind = estimator == "icp_blind"
    map_cloud = map_doc.cloud.relabeled() if blind else map_doc.cloud
    diagnostics: list[IcpDiagnostic] = []
    traj: list[tuple[int, Pose2]] = []
    cur: Pose2 | None = None
    prev_odo: Pose2 | None = None
    for frame, odo in enumerate(odometry):
        cur = odo if cur is None else compose(cur, between(prev_odo, odo))
        prev_odo = odo
        if frame % cfg.icp_every == 0:
            scan = semantic_frames[frame]
            scan = scan.relabeled() if blind else scan
            local = extract_local_map(map_cloud, Vec2(cur.x, cur.y), cfg.local_map_size)
            res = semantic_icp(
                scan,
                local,
                cur,
                max_corr_dist=cfg.max_corr_dist,
                max_iters=cfg.icp_max_iters,
                tol=cfg.icp_tol,
                min_correspondences=cfg.min_correspondences,
            )
            if res.converged:
                cur = res.pose
            diagnostics.append(
                IcpDiagnostic(
                    frame=frame,
                    converged=res.converged,
                    n_correspondences=res.n_correspondences,
                    iterations=res.iterations,
                    rmse=res.rmse,
                    jump=0.0,
                    accepted=res.converged,
                )
            )
        traj.append((frame, cur))
    return SflocResult(estimator, traj, diagnostics)
