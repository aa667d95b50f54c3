"""Canned experiment setups: lot geometry, route, noise, and pipeline knobs.

A preset bundles everything needed to reproduce a run from a single seed.
The ``*-clean`` variants share the geometry of their parent but zero out
every noise term, which makes them useful for exactness checks.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gcslam import GcslamConfig
from .geometry import Pose2, Vec2, compose, inverse
from .sfloc import SflocConfig
from .simworld import (
    Dataset,
    OdometrySample,
    SimNoiseConfig,
    WorldModel,
    generate_lot,
    generate_trajectory,
    simulate_detections,
    simulate_odometry,
    simulate_semantic_frames,
)

REVISIT_SEED_OFFSET = 101
REVISIT_INIT_LATERAL = (0.6, 0.9)
REVISIT_INIT_ALONG = 0.35
REVISIT_INIT_ROT = 0.05
_INIT_STREAM = 4
REVISIT_ODO_INFLATION = 5.0

# Wheel-slip events on the revisit drive: the encoder overcounts forward
# travel by about half a slot pitch, at five points spread along the route.
REVISIT_SLIP_DIST = 1.15
REVISIT_SLIP_PHASES = (0.15, 0.33, 0.5, 0.67, 0.85)


class ConfigError(Exception):
    """A preset or configuration file could not be applied."""


@dataclass(frozen=True)
class WorldSpec:
    rows: int
    slots_per_row: int
    slot_width: float = 2.5
    slot_depth: float = 5.3
    lane_width: float = 7.0
    margin: float = 7.0
    pair_gap: float = 3.0
    inclined_fraction: float = 0.0
    detect_radius: float = 8.0
    step: float = 0.1


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    world: WorldSpec
    noise: SimNoiseConfig
    gcslam: GcslamConfig
    sfloc: SflocConfig


def _derive_pipeline(world: WorldSpec, noise: SimNoiseConfig) -> tuple[GcslamConfig, SflocConfig]:
    # the heading-rate bias is calibrated online and the stored odometry is
    # rectified with it, so the chain can be weighted at its true white-noise
    # sigma instead of budgeting extra rotation slack for the bias
    gc = GcslamConfig(
        slot_width=world.slot_width,
        slot_depth=world.slot_depth,
        oet_trans_sigma_per_m=noise.odo_trans_sigma,
        oet_rot_sigma_per_m=noise.odo_rot_sigma,
        ret_sigma=noise.det_pos_sigma,
    )
    # tracking keeps its own odometry weighting (see SflocConfig for why),
    # so the noise model only shapes the mapping side
    sf = SflocConfig()
    return gc, sf


def _preset(name: str, world: WorldSpec, noise: SimNoiseConfig) -> ExperimentPreset:
    gc, sf = _derive_pipeline(world, noise)
    return ExperimentPreset(name=name, world=world, noise=noise, gcslam=gc, sfloc=sf)


_SQUARE_WORLD = WorldSpec(rows=6, slots_per_row=36, inclined_fraction=0.05)
_SQUARE_NOISE = SimNoiseConfig(
    odo_trans_sigma=0.01,
    odo_rot_sigma=0.001,
    odo_drift_bias=5e-4,
    det_pos_sigma=0.05,
    det_dir_sigma=0.02,
    false_positive_rate=0.05,
    miss_rate=0.1,
    speed_bump_frames=(700, 2100, 3500),
    bump_roll_pitch=0.06,
)

_MINI_WORLD = WorldSpec(
    rows=2, slots_per_row=8, lane_width=6.0, margin=6.0, pair_gap=0.0
)
_MINI_NOISE = SimNoiseConfig(
    odo_trans_sigma=0.01,
    odo_rot_sigma=0.001,
    odo_drift_bias=5e-4,
    det_pos_sigma=0.05,
    det_dir_sigma=0.02,
    false_positive_rate=0.05,
    miss_rate=0.1,
    speed_bump_frames=(120, 300),
    bump_roll_pitch=0.06,
)

_ZERO_NOISE = SimNoiseConfig()

PRESETS: dict[str, ExperimentPreset] = {
    p.name: p
    for p in (
        _preset("square-loop", _SQUARE_WORLD, _SQUARE_NOISE),
        _preset("square-loop-clean", _SQUARE_WORLD, _ZERO_NOISE),
        _preset("mini", _MINI_WORLD, _MINI_NOISE),
        _preset("mini-clean", _MINI_WORLD, _ZERO_NOISE),
    )
}


def get_preset(name: str) -> ExperimentPreset:
    try:
        return PRESETS[name]
    except KeyError:
        known = ", ".join(sorted(PRESETS))
        raise ConfigError(f"unknown preset {name!r}; available: {known}") from None


def make_noise(preset: ExperimentPreset, seed: int, revisit: bool = False) -> SimNoiseConfig:
    """Noise model for a run; a revisit traversal draws fresh noise.

    A revisit also inflates the odometry sigmas and suffers occasional
    wheel slips: the mapping rig carries survey-grade dead reckoning while
    later visitors localize with ordinary wheel odometry, which is the
    case map-based tracking exists to serve.  Slip events are pinned to
    straight lane legs once the trajectory is known (``simulate_dataset``).
    """
    if not revisit:
        return dataclasses.replace(preset.noise, seed=seed)
    slip = REVISIT_SLIP_DIST if preset.noise.odo_trans_sigma > 0 else 0.0
    return dataclasses.replace(
        preset.noise,
        seed=seed + REVISIT_SEED_OFFSET,
        odo_trans_sigma=preset.noise.odo_trans_sigma * REVISIT_ODO_INFLATION,
        odo_rot_sigma=preset.noise.odo_rot_sigma * REVISIT_ODO_INFLATION,
        slip_dist=slip,
    )


def build_world(preset: ExperimentPreset, seed: int) -> WorldModel:
    w = preset.world
    return generate_lot(
        rows=w.rows,
        slots_per_row=w.slots_per_row,
        slot_width=w.slot_width,
        slot_depth=w.slot_depth,
        inclined_fraction=w.inclined_fraction,
        seed=seed,
        lane_width=w.lane_width,
        margin=w.margin,
        pair_gap=w.pair_gap,
    )


def build_route(world: WorldModel) -> list[Vec2]:
    """Serpentine through every driving lane, closed by a return pass.

    Lanes are swept in alternating directions with connector legs between
    them.  The return pass runs back along one connector, re-traverses the
    first lane, and finishes up the opposite connector, so the slots mapped
    earliest are revisited and every row is re-observed near both ends.
    """
    lay = world.layout
    lanes = lay.lane_centers_y
    x0, x1 = lay.row_x0, lay.row_x1
    cl, cr = lay.connector_left_x, lay.connector_right_x
    if not lanes:
        raise ValueError("world has no driving lanes")

    if len(lanes) == 1:
        # single lane: a narrow rectangle inside it instead of a connector loop
        y = lanes[0]
        h = min(1.0, lay.lane_width / 2.0 - 0.5)
        return [
            Vec2(x0, y - h),
            Vec2(x1, y - h),
            Vec2(x1, y + h),
            Vec2(x0, y + h),
            Vec2(x0, y - h),
        ]

    pts: list[Vec2] = []
    for i, y in enumerate(lanes):
        if i % 2 == 0:
            pts += [Vec2(x0, y), Vec2(x1, y)]
        else:
            pts += [Vec2(x1, y), Vec2(x0, y)]
        if i + 1 < len(lanes):
            cx = cr if i % 2 == 0 else cl
            pts += [Vec2(cx, y), Vec2(cx, lanes[i + 1])]

    y_last, y_first = lanes[-1], lanes[0]
    if len(lanes) % 2 == 1:
        # ended at the east side; return south along the east connector,
        # re-traverse the first lane, then run the west connector north so
        # both ends of every row are revisited late in the drive
        pts += [Vec2(cr, y_last), Vec2(cr, y_first), Vec2(x1, y_first), Vec2(x0, y_first)]
        pts += [Vec2(cl, y_first), Vec2(cl, y_last)]
    else:
        pts += [Vec2(cl, y_last), Vec2(cl, y_first), Vec2(x0, y_first)]
        pts += [Vec2(x1, y_first), Vec2(cr, y_first), Vec2(cr, y_last)]
    return pts


def _offset_start(odometry: list[OdometrySample], noise_seed: int) -> list[OdometrySample]:
    """Shift a dead-reckoned track by a bounded initial-pose error.

    A revisit starts from a coarse fix rather than the exact map origin, so
    the whole integrated track is moved rigidly by an error expressed in the
    start pose's own frame.  The error is mostly cross-track, which is the
    hard direction for registration in a striped lot.
    """
    rng = np.random.default_rng([noise_seed, _INIT_STREAM])
    side = 1.0 if rng.integers(2) else -1.0
    lat = side * rng.uniform(*REVISIT_INIT_LATERAL)
    along = rng.uniform(-REVISIT_INIT_ALONG, REVISIT_INIT_ALONG)
    dth = rng.uniform(-REVISIT_INIT_ROT, REVISIT_INIT_ROT)
    err = Pose2(along, lat, dth)
    start = odometry[0].pose
    world_err = compose(compose(start, err), inverse(start))
    return [OdometrySample(o.frame, compose(world_err, o.pose)) for o in odometry]


def _lane_slip_frames(
    world: WorldModel, truth: list[Pose2], phases: tuple[float, ...]
) -> tuple[int, ...]:
    """Pin slip events to straight lane legs nearest the requested phases."""
    lay = world.layout
    lo, hi = lay.row_x0 + 8.0, lay.row_x1 - 8.0
    ok = np.flatnonzero(
        [abs(math.sin(p.theta)) < 0.05 and lo <= p.x <= hi for p in truth]
    )
    if not len(ok):
        return ()
    picks = {int(ok[np.argmin(np.abs(ok - ph * (len(truth) - 1)))]) for ph in phases}
    return tuple(sorted(picks))


def simulate_dataset(preset: ExperimentPreset, seed: int, revisit: bool = False) -> Dataset:
    """World, truth, odometry, detections, and scans for one traversal."""
    world = build_world(preset, seed)
    route = build_route(world)
    truth = generate_trajectory(world, route, preset.world.step)
    noise = make_noise(preset, seed, revisit)
    if noise.slip_dist > 0.0:
        noise = dataclasses.replace(
            noise, slip_frames=_lane_slip_frames(world, truth, REVISIT_SLIP_PHASES)
        )
    odometry = simulate_odometry(truth, noise)
    if revisit:
        odometry = _offset_start(odometry, noise.seed)
    detections = simulate_detections(world, truth, noise, preset.world.detect_radius)
    semantic = simulate_semantic_frames(world, truth, noise, radius=preset.world.detect_radius)
    return Dataset(
        world=world,
        truth=truth,
        odometry=odometry,
        detections=detections,
        semantic_frames=semantic,
        detect_radius=preset.world.detect_radius,
    )


def _replace_section(obj, updates: dict, section: str):
    names = {f.name: f for f in dataclasses.fields(obj)}
    fixed = dict(updates)
    for key, value in updates.items():
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in section {section!r}")
        if isinstance(value, dict):
            fixed[key] = _replace_section(getattr(obj, key), value, f"{section}.{key}")
        elif isinstance(value, list):
            fixed[key] = tuple(value)
    try:
        return dataclasses.replace(obj, **fixed)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad value in section {section!r}: {e}") from None


def apply_overrides(preset: ExperimentPreset, overrides: dict) -> ExperimentPreset:
    """Apply a nested override mapping to a preset.

    Top-level sections are ``world``, ``noise``, ``gcslam``, and ``sfloc``;
    each maps field names to new values.  Unknown sections or fields raise
    :class:`ConfigError`.
    """
    out = preset
    for section, updates in overrides.items():
        if section not in ("world", "noise", "gcslam", "sfloc"):
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(updates, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        out = dataclasses.replace(
            out, **{section: _replace_section(getattr(out, section), updates, section)}
        )
    return out


def load_overrides(path: str | Path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {p} is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a JSON object")
    return data
