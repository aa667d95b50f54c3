"""Pose graph with parking-slot landmarks and a sparse Levenberg-Marquardt solver.

Pose nodes carry (x, y, theta); slot nodes carry (x, y) only.  Factors are
stored per kind in parallel columns so residuals and Jacobians evaluate as
batched numpy expressions.  The scalar reference implementations at the top
of the module define the math; the batched code must agree with them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix, diags
from scipy.sparse.linalg import splu

from .geometry import Pose2, Vec2, between, inverse, normalize_angle, normalize_angles

FACTOR_KINDS = ("prior", "odometry", "registration", "adjacent", "vertical", "icp")

_DIAG_FLOOR = 1e-12


def _xy(v) -> np.ndarray:
    if isinstance(v, Vec2):
        return v.as_array()
    a = np.asarray(v, dtype=float)
    if a.shape != (2,):
        raise ValueError(f"expected a 2-vector, got shape {a.shape}")
    return a


# ---------------------------------------------------------------------------
# scalar reference residuals

def unary_residual(pose: Pose2, z: Pose2) -> np.ndarray:
    """Pose measured directly: r = log(z^-1 * pose) as (dx, dy, dtheta)."""
    d = between(z, pose)
    return np.array([d.x, d.y, d.theta])


def odometry_residual(pose_i: Pose2, pose_j: Pose2, rel: Pose2) -> np.ndarray:
    """Relative-motion mismatch: r = log(pred^-1 * rel), pred = i^-1 * j."""
    pred = between(pose_i, pose_j)
    d = between(pred, rel)
    return np.array([d.x, d.y, d.theta])


def registration_residual(pose: Pose2, obs_car, slot_xy) -> np.ndarray:
    """Detected midpoint projected to world minus the slot node position."""
    obs = _xy(obs_car)
    s = _xy(slot_xy)
    c, sn = math.cos(pose.theta), math.sin(pose.theta)
    return np.array(
        [c * obs[0] - sn * obs[1] + pose.x - s[0],
         sn * obs[0] + c * obs[1] + pose.y - s[1]]
    )


def adjacent_residual(measured, slot_k, slot_p) -> np.ndarray:
    """Measured inter-slot offset minus the current offset k - p."""
    m = _xy(measured)
    return m - (_xy(slot_k) - _xy(slot_p))


def vertical_residual(slot_k, slot_p, direction) -> float:
    """Smaller component of the slot offset along/across a fixed direction.

    Driving this to zero aligns the pair offset with the direction or its
    perpendicular, whichever is already closer.  Ties take the along
    component.
    """
    d = _xy(direction)
    delta = _xy(slot_k) - _xy(slot_p)
    along = delta[0] * d[0] + delta[1] * d[1]
    across = -delta[0] * d[1] + delta[1] * d[0]
    if abs(along) <= abs(across):
        return abs(along)
    return abs(across)


def compute_global_direction(entry_vecs: Sequence) -> Vec2:
    """Average entry direction after flipping all vectors into the half
    plane of the first one; returned normalized."""
    if not entry_vecs:
        raise ValueError("need at least one entry vector")
    ref = _xy(entry_vecs[0])
    acc = np.zeros(2)
    for v in entry_vecs:
        a = _xy(v)
        if a[0] * ref[0] + a[1] * ref[1] < 0.0:
            a = -a
        acc += a
    n = float(np.hypot(acc[0], acc[1]))
    if n < 1e-9:
        raise ValueError("entry vectors cancel out; no usable mean direction")
    return Vec2(acc[0] / n, acc[1] / n)


# ---------------------------------------------------------------------------
# solver configuration and report

@dataclass(frozen=True)
class OptimizeSettings:
    max_iters: int = 50
    lambda_init: float = 1e-6
    lambda_max: float = 1e12
    cost_tol: float = 1e-10
    step_tol: float = 1e-10


@dataclass
class OptimizationReport:
    iterations: int
    initial_cost: float
    final_cost: float
    converged: bool
    residual_norms: dict[str, float] = field(default_factory=dict)
    cost_history: list[float] = field(default_factory=list)


def _sqrt_info(information, size: int) -> tuple[float, ...]:
    arr = np.atleast_1d(np.asarray(information, dtype=float))
    if arr.shape == (1,) and size > 1:
        arr = np.full(size, arr[0])
    if arr.shape != (size,):
        raise ValueError(f"information must be a scalar or length-{size} diagonal")
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise ValueError("information entries must be finite and > 0")
    return tuple(math.sqrt(v) for v in arr)


class FactorGraph:
    """Pose/slot graph over SE(2) with batched residual evaluation."""

    def __init__(self) -> None:
        self._poses: dict[int, tuple[float, float, float]] = {}
        self._slots: dict[int, tuple[float, float]] = {}
        self._prior: tuple[int, tuple[float, float, float], tuple[float, ...]] | None = None
        # odometry
        self._odo_i: list[int] = []
        self._odo_j: list[int] = []
        self._odo_rel: list[tuple[float, float, float]] = []
        self._odo_si: list[tuple[float, ...]] = []
        # registration
        self._reg_pose: list[int] = []
        self._reg_slot: list[int] = []
        self._reg_obs: list[tuple[float, float]] = []
        self._reg_si: list[tuple[float, ...]] = []
        # adjacent
        self._adj_k: list[int] = []
        self._adj_p: list[int] = []
        self._adj_m: list[tuple[float, float]] = []
        self._adj_si: list[tuple[float, ...]] = []
        # vertical
        self._ver_k: list[int] = []
        self._ver_p: list[int] = []
        self._ver_d: list[tuple[float, float]] = []
        self._ver_si: list[float] = []
        # unary pose measurements (scan registration results)
        self._icp_pose: list[int] = []
        self._icp_z: list[tuple[float, float, float]] = []
        self._icp_si: list[tuple[float, ...]] = []

    # -- nodes --------------------------------------------------------------

    def add_pose_node(self, pose_id: int, value: Pose2) -> None:
        if pose_id in self._poses:
            raise ValueError(f"pose node {pose_id} already exists")
        self._poses[pose_id] = (value.x, value.y, value.theta)

    def add_slot_node(self, slot_id: int, xy) -> None:
        if slot_id in self._slots:
            raise ValueError(f"slot node {slot_id} already exists")
        a = _xy(xy)
        self._slots[slot_id] = (float(a[0]), float(a[1]))

    def set_pose(self, pose_id: int, value: Pose2) -> None:
        if pose_id not in self._poses:
            raise KeyError(f"no pose node {pose_id}")
        self._poses[pose_id] = (value.x, value.y, value.theta)

    def set_slot(self, slot_id: int, xy) -> None:
        if slot_id not in self._slots:
            raise KeyError(f"no slot node {slot_id}")
        a = _xy(xy)
        self._slots[slot_id] = (float(a[0]), float(a[1]))

    def pose(self, pose_id: int) -> Pose2:
        x, y, th = self._poses[pose_id]
        return Pose2(x, y, th)

    def slot(self, slot_id: int) -> np.ndarray:
        return np.array(self._slots[slot_id])

    def has_pose(self, pose_id: int) -> bool:
        return pose_id in self._poses

    def has_slot(self, slot_id: int) -> bool:
        return slot_id in self._slots

    @property
    def pose_ids(self) -> list[int]:
        return sorted(self._poses)

    @property
    def slot_ids(self) -> list[int]:
        return sorted(self._slots)

    # -- factors ------------------------------------------------------------

    def add_prior(self, pose_id: int, z: Pose2, information) -> None:
        if self._prior is not None:
            raise ValueError("graph already has a prior; remove it first")
        if pose_id not in self._poses:
            raise KeyError(f"no pose node {pose_id}")
        self._prior = (pose_id, (z.x, z.y, z.theta), _sqrt_info(information, 3))

    def remove_prior(self) -> bool:
        had = self._prior is not None
        self._prior = None
        return had

    def add_odometry(self, i: int, j: int, rel: Pose2, information) -> None:
        if i not in self._poses or j not in self._poses:
            raise KeyError(f"odometry needs existing pose nodes {i}, {j}")
        self._odo_i.append(i)
        self._odo_j.append(j)
        self._odo_rel.append((rel.x, rel.y, rel.theta))
        self._odo_si.append(_sqrt_info(information, 3))

    def add_registration(self, pose_id: int, slot_id: int, obs_car, information) -> None:
        if pose_id not in self._poses:
            raise KeyError(f"no pose node {pose_id}")
        if slot_id not in self._slots:
            raise KeyError(f"no slot node {slot_id}")
        a = _xy(obs_car)
        self._reg_pose.append(pose_id)
        self._reg_slot.append(slot_id)
        self._reg_obs.append((float(a[0]), float(a[1])))
        self._reg_si.append(_sqrt_info(information, 2))

    def add_adjacent(self, slot_k: int, slot_p: int, measured, information) -> None:
        if slot_k not in self._slots or slot_p not in self._slots:
            raise KeyError(f"adjacent factor needs existing slot nodes {slot_k}, {slot_p}")
        m = _xy(measured)
        self._adj_k.append(slot_k)
        self._adj_p.append(slot_p)
        self._adj_m.append((float(m[0]), float(m[1])))
        self._adj_si.append(_sqrt_info(information, 2))

    def add_vertical(self, slot_k: int, slot_p: int, direction, information) -> None:
        if slot_k not in self._slots or slot_p not in self._slots:
            raise KeyError(f"vertical factor needs existing slot nodes {slot_k}, {slot_p}")
        d = _xy(direction)
        n = float(np.hypot(d[0], d[1]))
        if abs(n - 1.0) > 1e-6:
            raise ValueError("direction must be a unit vector")
        self._ver_k.append(slot_k)
        self._ver_p.append(slot_p)
        self._ver_d.append((float(d[0]), float(d[1])))
        self._ver_si.append(_sqrt_info(information, 1)[0])

    def add_icp(self, pose_id: int, z: Pose2, information) -> None:
        if pose_id not in self._poses:
            raise KeyError(f"no pose node {pose_id}")
        self._icp_pose.append(pose_id)
        self._icp_z.append((z.x, z.y, z.theta))
        self._icp_si.append(_sqrt_info(information, 3))

    def set_odometry_rotations(self, dthetas: Sequence[float]) -> None:
        """Replace the rotation component of every odometry measurement.

        ``dthetas`` is aligned with insertion order.  Translation components
        and information matrices are untouched; this exists so a caller can
        rectify measurements after calibrating a systematic heading error.
        """
        if len(dthetas) != len(self._odo_rel):
            raise ValueError(
                f"expected {len(self._odo_rel)} rotations, got {len(dthetas)}"
            )
        self._odo_rel = [
            (x, y, float(th)) for (x, y, _old), th in zip(self._odo_rel, dthetas)
        ]

    def set_vertical_directions(self, direction) -> None:
        """Point every vertical factor at a refreshed global direction."""
        d = _xy(direction)
        n = float(np.hypot(d[0], d[1]))
        if abs(n - 1.0) > 1e-6:
            raise ValueError("direction must be a unit vector")
        self._ver_d = [(float(d[0]), float(d[1]))] * len(self._ver_d)

    def set_adjacent_measurements(self, measure) -> None:
        """Recompute every adjacent measurement as measure(slot_k, slot_p).

        Used together with :meth:`set_vertical_directions` when the caller
        re-derives its structural priors, so the two stay consistent instead
        of pulling the layout toward measurements taken at different times.
        """
        fresh = []
        for k, p in zip(self._adj_k, self._adj_p):
            m = _xy(measure(k, p))
            fresh.append((float(m[0]), float(m[1])))
        self._adj_m = fresh

    def remove_slot(self, slot_id: int) -> None:
        """Delete a slot node together with every factor touching it."""
        if slot_id not in self._slots:
            raise KeyError(f"no slot node {slot_id}")
        del self._slots[slot_id]

        keep = [n for n, s in enumerate(self._reg_slot) if s != slot_id]
        self._reg_pose = [self._reg_pose[n] for n in keep]
        self._reg_slot = [self._reg_slot[n] for n in keep]
        self._reg_obs = [self._reg_obs[n] for n in keep]
        self._reg_si = [self._reg_si[n] for n in keep]

        keep = [n for n in range(len(self._adj_k))
                if self._adj_k[n] != slot_id and self._adj_p[n] != slot_id]
        self._adj_k = [self._adj_k[n] for n in keep]
        self._adj_p = [self._adj_p[n] for n in keep]
        self._adj_m = [self._adj_m[n] for n in keep]
        self._adj_si = [self._adj_si[n] for n in keep]

        keep = [n for n in range(len(self._ver_k))
                if self._ver_k[n] != slot_id and self._ver_p[n] != slot_id]
        self._ver_k = [self._ver_k[n] for n in keep]
        self._ver_p = [self._ver_p[n] for n in keep]
        self._ver_d = [self._ver_d[n] for n in keep]
        self._ver_si = [self._ver_si[n] for n in keep]

    def factor_counts(self) -> dict[str, int]:
        return {
            "prior": 0 if self._prior is None else 1,
            "odometry": len(self._odo_i),
            "registration": len(self._reg_pose),
            "adjacent": len(self._adj_k),
            "vertical": len(self._ver_k),
            "icp": len(self._icp_pose),
        }

    def dump(self) -> str:
        counts = self.factor_counts()
        lines = [f"nodes: {len(self._poses)} poses, {len(self._slots)} slots"]
        lines.append("factors: " + ", ".join(f"{k}={counts[k]}" for k in FACTOR_KINDS))
        for pid in self.pose_ids:
            x, y, th = self._poses[pid]
            lines.append(f"  pose {pid}: {x:.4f} {y:.4f} {th:.4f}")
        for sid in self.slot_ids:
            x, y = self._slots[sid]
            lines.append(f"  slot {sid}: {x:.4f} {y:.4f}")
        return "\n".join(lines)

    # -- optimization ---------------------------------------------------------

    def optimize(
        self,
        settings: OptimizeSettings | None = None,
        free_poses: Iterable[int] | None = None,
    ) -> OptimizationReport:
        """Run damped Gauss-Newton until the cost or the step stalls.

        ``free_poses`` restricts which pose nodes move; the rest keep their
        values but still generate residuals.  Slot nodes are always free.
        """
        st = settings if settings is not None else OptimizeSettings()
        ev = _Evaluator(self, free_poses, check_gauge=True)

        x = ev.pack()
        r = ev.residuals(x)
        cost = float(r @ r)
        history = [cost]
        converged = False

        if ev.n_state == 0 or ev.n_rows == 0:
            ev.unpack(x)
            return OptimizationReport(0, cost, cost, True, ev.residual_norms(x), history)

        lam = st.lambda_init
        for _ in range(st.max_iters):
            jac = ev.jacobian(x)
            grad = jac.T @ r
            hess = (jac.T @ jac).tocsc()
            damp = np.maximum(hess.diagonal(), _DIAG_FLOOR)

            accepted = False
            while lam <= st.lambda_max:
                try:
                    lu = splu((hess + diags(lam * damp)).tocsc(), permc_spec="MMD_AT_PLUS_A")
                    delta = lu.solve(-grad)
                except RuntimeError:
                    lam *= 10.0
                    continue
                if not np.all(np.isfinite(delta)):
                    lam *= 10.0
                    continue
                x_try = x + delta
                r_try = ev.residuals(x_try)
                cost_try = float(r_try @ r_try)
                if cost_try <= cost:
                    accepted = True
                    break
                lam *= 10.0
            if not accepted:
                break

            rel = (cost - cost_try) / max(cost, 1e-300)
            step = float(np.max(np.abs(delta))) if len(delta) else 0.0
            x, r, cost = x_try, r_try, cost_try
            history.append(cost)
            lam = max(lam * 0.3, 1e-12)
            if rel < st.cost_tol or step < st.step_tol:
                converged = True
                break

        ev.unpack(x)
        return OptimizationReport(
            iterations=len(history) - 1,
            initial_cost=history[0],
            final_cost=cost,
            converged=converged,
            residual_norms=ev.residual_norms(x),
            cost_history=history,
        )

    def linearize(self, free_poses: Iterable[int] | None = None):
        """Whitened Jacobian and residual vector at the current values.

        No gauge check is applied, so this also works on fragments that
        could not be optimized on their own.
        """
        ev = _Evaluator(self, free_poses, check_gauge=False)
        x = ev.pack()
        return ev.jacobian(x), ev.residuals(x)


class _Evaluator:
    """Batched residual/Jacobian evaluation over a frozen factor set."""

    def __init__(
        self, g: FactorGraph, free_poses: Iterable[int] | None, check_gauge: bool = True
    ) -> None:
        self.g = g
        pose_ids = g.pose_ids
        slot_ids = g.slot_ids
        self.pidx = {p: k for k, p in enumerate(pose_ids)}
        self.sidx = {s: k for k, s in enumerate(slot_ids)}
        n_p, n_s = len(pose_ids), len(slot_ids)

        if free_poses is None:
            free = list(pose_ids)
        else:
            free = sorted(set(free_poses))
            missing = [p for p in free if p not in self.pidx]
            if missing:
                raise ValueError(f"free_poses refers to unknown pose nodes {missing}")

        anchored = (
            g._prior is not None
            or bool(g._icp_pose)
            or len(free) < n_p
        )
        if check_gauge and n_p and not anchored:
            raise ValueError(
                "gauge is unconstrained: add a prior or unary factor, or hold a pose fixed"
            )

        self.pose_col = np.full(n_p, -1, dtype=int)
        for k, p in enumerate(free):
            self.pose_col[self.pidx[p]] = 3 * k
        n_pose_state = 3 * len(free)
        self.free_dense = np.array([self.pidx[p] for p in free], dtype=int)
        self.slot_col = n_pose_state + 2 * np.arange(n_s)
        self.n_state = n_pose_state + 2 * n_s

        self.px = np.array([g._poses[p][0] for p in pose_ids])
        self.py = np.array([g._poses[p][1] for p in pose_ids])
        self.pth = np.array([g._poses[p][2] for p in pose_ids])
        self.sxy = np.array([g._slots[s] for s in slot_ids]).reshape(n_s, 2)

        # factor columns as arrays
        def parr(ids):
            return np.array([self.pidx[i] for i in ids], dtype=int)

        def sarr(ids):
            return np.array([self.sidx[i] for i in ids], dtype=int)

        if g._prior is not None:
            pp, z, si = g._prior
            self.pr_p = parr([pp])
            self.pr_z = np.array([z])
            self.pr_si = np.array([si])
        else:
            self.pr_p = np.empty(0, dtype=int)
            self.pr_z = np.empty((0, 3))
            self.pr_si = np.empty((0, 3))

        self.od_i = parr(g._odo_i)
        self.od_j = parr(g._odo_j)
        self.od_rel = np.array(g._odo_rel).reshape(-1, 3)
        self.od_si = np.array(g._odo_si).reshape(-1, 3)

        self.rg_p = parr(g._reg_pose)
        self.rg_s = sarr(g._reg_slot)
        self.rg_o = np.array(g._reg_obs).reshape(-1, 2)
        self.rg_si = np.array(g._reg_si).reshape(-1, 2)

        self.aj_k = sarr(g._adj_k)
        self.aj_p = sarr(g._adj_p)
        self.aj_m = np.array(g._adj_m).reshape(-1, 2)
        self.aj_si = np.array(g._adj_si).reshape(-1, 2)

        self.vr_k = sarr(g._ver_k)
        self.vr_p = sarr(g._ver_p)
        self.vr_d = np.array(g._ver_d).reshape(-1, 2)
        self.vr_si = np.array(g._ver_si)

        self.ic_p = parr(g._icp_pose)
        self.ic_z = np.array(g._icp_z).reshape(-1, 3)
        self.ic_si = np.array(g._icp_si).reshape(-1, 3)

        # residual row layout: prior, odometry, registration, adjacent, vertical, icp
        nums = [len(self.pr_p) * 3, len(self.od_i) * 3, len(self.rg_p) * 2,
                len(self.aj_k) * 2, len(self.vr_k), len(self.ic_p) * 3]
        offs = np.concatenate([[0], np.cumsum(nums)])
        self.row0 = {k: int(offs[n]) for n, k in enumerate(FACTOR_KINDS)}
        self.n_rows = int(offs[-1])

        self._structure()

    def _block(self, row0: int, h: int, w: int, stride: int, colbase: np.ndarray):
        n = len(colbase)
        rows = (row0 + stride * np.arange(n))[:, None, None] + np.arange(h)[None, :, None]
        rows = np.broadcast_to(rows, (n, h, w)).reshape(-1)
        cols = colbase[:, None, None] + np.arange(w)[None, None, :]
        cols = np.broadcast_to(cols, (n, h, w)).reshape(-1)
        keep = np.broadcast_to((colbase >= 0)[:, None, None], (n, h, w)).reshape(-1)
        return rows[keep], np.maximum(cols, 0)[keep], keep

    def _structure(self) -> None:
        blocks = []
        blocks.append(self._block(self.row0["prior"], 3, 3, 3, self.pose_col[self.pr_p]))
        blocks.append(self._block(self.row0["odometry"], 3, 3, 3, self.pose_col[self.od_i]))
        blocks.append(self._block(self.row0["odometry"], 3, 3, 3, self.pose_col[self.od_j]))
        blocks.append(self._block(self.row0["registration"], 2, 3, 2, self.pose_col[self.rg_p]))
        blocks.append(self._block(self.row0["registration"], 2, 2, 2, self.slot_col[self.rg_s]))
        blocks.append(self._block(self.row0["adjacent"], 2, 2, 2, self.slot_col[self.aj_k]))
        blocks.append(self._block(self.row0["adjacent"], 2, 2, 2, self.slot_col[self.aj_p]))
        blocks.append(self._block(self.row0["vertical"], 1, 2, 1, self.slot_col[self.vr_k]))
        blocks.append(self._block(self.row0["vertical"], 1, 2, 1, self.slot_col[self.vr_p]))
        blocks.append(self._block(self.row0["icp"], 3, 3, 3, self.pose_col[self.ic_p]))
        self._rows = np.concatenate([b[0] for b in blocks])
        self._cols = np.concatenate([b[1] for b in blocks])
        self._keeps = [b[2] for b in blocks]

    # -- state <-> values -----------------------------------------------------

    def pack(self) -> np.ndarray:
        x = np.empty(self.n_state)
        fd = self.free_dense
        x[0 : 3 * len(fd) : 3] = self.px[fd]
        x[1 : 3 * len(fd) : 3] = self.py[fd]
        x[2 : 3 * len(fd) : 3] = self.pth[fd]
        x[3 * len(fd):] = self.sxy.reshape(-1)
        return x

    def _values(self, x: np.ndarray):
        px, py, pth = self.px.copy(), self.py.copy(), self.pth.copy()
        fd = self.free_dense
        px[fd] = x[0 : 3 * len(fd) : 3]
        py[fd] = x[1 : 3 * len(fd) : 3]
        pth[fd] = x[2 : 3 * len(fd) : 3]
        sxy = x[3 * len(fd):].reshape(-1, 2)
        return px, py, pth, sxy

    def unpack(self, x: np.ndarray) -> None:
        px, py, pth, sxy = self._values(x)
        for pid, k in self.pidx.items():
            self.g._poses[pid] = (float(px[k]), float(py[k]), normalize_angle(float(pth[k])))
        for sid, k in self.sidx.items():
            self.g._slots[sid] = (float(sxy[k, 0]), float(sxy[k, 1]))

    # -- residuals -------------------------------------------------------------

    def residuals(self, x: np.ndarray) -> np.ndarray:
        px, py, pth, sxy = self._values(x)
        r = np.empty(self.n_rows)

        if len(self.pr_p):
            r[self.row0["prior"] : self.row0["prior"] + 3] = self._unary_r(
                px, py, pth, self.pr_p, self.pr_z, self.pr_si
            ).reshape(-1)

        if len(self.od_i):
            a = pth[self.od_i]
            b = pth[self.od_j]
            dix = px[self.od_j] - px[self.od_i]
            diy = py[self.od_j] - py[self.od_i]
            cb, sb = np.cos(b), np.sin(b)
            phi = a - b
            cphi, sphi = np.cos(phi), np.sin(phi)
            rx, ry, rth = self.od_rel[:, 0], self.od_rel[:, 1], self.od_rel[:, 2]
            out = np.empty((len(a), 3))
            out[:, 0] = -(cb * dix + sb * diy) + cphi * rx - sphi * ry
            out[:, 1] = -(-sb * dix + cb * diy) + sphi * rx + cphi * ry
            out[:, 2] = normalize_angles(phi + rth)
            out *= self.od_si
            r[self.row0["odometry"] : self.row0["odometry"] + out.size] = out.reshape(-1)

        if len(self.rg_p):
            th = pth[self.rg_p]
            c, s = np.cos(th), np.sin(th)
            ox, oy = self.rg_o[:, 0], self.rg_o[:, 1]
            out = np.empty((len(th), 2))
            out[:, 0] = c * ox - s * oy + px[self.rg_p] - sxy[self.rg_s, 0]
            out[:, 1] = s * ox + c * oy + py[self.rg_p] - sxy[self.rg_s, 1]
            out *= self.rg_si
            r[self.row0["registration"] : self.row0["registration"] + out.size] = out.reshape(-1)

        if len(self.aj_k):
            out = self.aj_m - (sxy[self.aj_k] - sxy[self.aj_p])
            out = out * self.aj_si
            r[self.row0["adjacent"] : self.row0["adjacent"] + out.size] = out.reshape(-1)

        if len(self.vr_k):
            delta = sxy[self.vr_k] - sxy[self.vr_p]
            along = delta[:, 0] * self.vr_d[:, 0] + delta[:, 1] * self.vr_d[:, 1]
            across = -delta[:, 0] * self.vr_d[:, 1] + delta[:, 1] * self.vr_d[:, 0]
            use_along = np.abs(along) <= np.abs(across)
            out = np.where(use_along, np.abs(along), np.abs(across)) * self.vr_si
            r[self.row0["vertical"] : self.row0["vertical"] + out.size] = out

        if len(self.ic_p):
            out = self._unary_r(px, py, pth, self.ic_p, self.ic_z, self.ic_si)
            r[self.row0["icp"] : self.row0["icp"] + out.size] = out.reshape(-1)

        return r

    @staticmethod
    def _unary_r(px, py, pth, idx, z, si) -> np.ndarray:
        cz, sz = np.cos(z[:, 2]), np.sin(z[:, 2])
        ex = px[idx] - z[:, 0]
        ey = py[idx] - z[:, 1]
        out = np.empty((len(idx), 3))
        out[:, 0] = cz * ex + sz * ey
        out[:, 1] = -sz * ex + cz * ey
        out[:, 2] = normalize_angles(pth[idx] - z[:, 2])
        return out * si

    # -- Jacobian ---------------------------------------------------------------

    def jacobian(self, x: np.ndarray):
        px, py, pth, sxy = self._values(x)
        vals = []

        # prior block
        v = np.zeros((len(self.pr_p), 3, 3))
        if len(self.pr_p):
            cz, sz = np.cos(self.pr_z[:, 2]), np.sin(self.pr_z[:, 2])
            v[:, 0, 0] = cz
            v[:, 0, 1] = sz
            v[:, 1, 0] = -sz
            v[:, 1, 1] = cz
            v[:, 2, 2] = 1.0
            v *= self.pr_si[:, :, None]
        vals.append(v)

        # odometry blocks
        n = len(self.od_i)
        vi = np.zeros((n, 3, 3))
        vj = np.zeros((n, 3, 3))
        if n:
            a = pth[self.od_i]
            b = pth[self.od_j]
            dix = px[self.od_j] - px[self.od_i]
            diy = py[self.od_j] - py[self.od_i]
            cb, sb = np.cos(b), np.sin(b)
            phi = a - b
            cphi, sphi = np.cos(phi), np.sin(phi)
            rx, ry = self.od_rel[:, 0], self.od_rel[:, 1]
            dxa = -sphi * rx - cphi * ry
            dya = cphi * rx - sphi * ry
            vi[:, 0, 0] = cb
            vi[:, 0, 1] = sb
            vi[:, 0, 2] = dxa
            vi[:, 1, 0] = -sb
            vi[:, 1, 1] = cb
            vi[:, 1, 2] = dya
            vi[:, 2, 2] = 1.0
            vj[:, 0, 0] = -cb
            vj[:, 0, 1] = -sb
            vj[:, 0, 2] = -dxa + (sb * dix - cb * diy)
            vj[:, 1, 0] = sb
            vj[:, 1, 1] = -cb
            vj[:, 1, 2] = -dya + (cb * dix + sb * diy)
            vj[:, 2, 2] = -1.0
            vi *= self.od_si[:, :, None]
            vj *= self.od_si[:, :, None]
        vals.append(vi)
        vals.append(vj)

        # registration blocks
        n = len(self.rg_p)
        vp = np.zeros((n, 2, 3))
        vs = np.zeros((n, 2, 2))
        if n:
            th = pth[self.rg_p]
            c, s = np.cos(th), np.sin(th)
            ox, oy = self.rg_o[:, 0], self.rg_o[:, 1]
            vp[:, 0, 0] = 1.0
            vp[:, 0, 2] = -s * ox - c * oy
            vp[:, 1, 1] = 1.0
            vp[:, 1, 2] = c * ox - s * oy
            vs[:, 0, 0] = -1.0
            vs[:, 1, 1] = -1.0
            vp *= self.rg_si[:, :, None]
            vs *= self.rg_si[:, :, None]
        vals.append(vp)
        vals.append(vs)

        # adjacent blocks
        n = len(self.aj_k)
        vk = np.zeros((n, 2, 2))
        vq = np.zeros((n, 2, 2))
        if n:
            vk[:, 0, 0] = -1.0
            vk[:, 1, 1] = -1.0
            vq[:, 0, 0] = 1.0
            vq[:, 1, 1] = 1.0
            vk *= self.aj_si[:, :, None]
            vq *= self.aj_si[:, :, None]
        vals.append(vk)
        vals.append(vq)

        # vertical blocks
        n = len(self.vr_k)
        wk = np.zeros((n, 1, 2))
        wq = np.zeros((n, 1, 2))
        if n:
            delta = sxy[self.vr_k] - sxy[self.vr_p]
            dx_, dy_ = self.vr_d[:, 0], self.vr_d[:, 1]
            along = delta[:, 0] * dx_ + delta[:, 1] * dy_
            across = -delta[:, 0] * dy_ + delta[:, 1] * dx_
            use_along = np.abs(along) <= np.abs(across)
            gx = np.where(use_along, np.sign(along) * dx_, np.sign(across) * -dy_)
            gy = np.where(use_along, np.sign(along) * dy_, np.sign(across) * dx_)
            wk[:, 0, 0] = gx
            wk[:, 0, 1] = gy
            wq[:, 0, 0] = -gx
            wq[:, 0, 1] = -gy
            wk *= self.vr_si[:, None, None]
            wq *= self.vr_si[:, None, None]
        vals.append(wk)
        vals.append(wq)

        # unary pose measurement block
        n = len(self.ic_p)
        vu = np.zeros((n, 3, 3))
        if n:
            cz, sz = np.cos(self.ic_z[:, 2]), np.sin(self.ic_z[:, 2])
            vu[:, 0, 0] = cz
            vu[:, 0, 1] = sz
            vu[:, 1, 0] = -sz
            vu[:, 1, 1] = cz
            vu[:, 2, 2] = 1.0
            vu *= self.ic_si[:, :, None]
        vals.append(vu)

        data = np.concatenate(
            [v.reshape(-1)[k] for v, k in zip(vals, self._keeps)]
        )
        return coo_matrix(
            (data, (self._rows, self._cols)), shape=(self.n_rows, self.n_state)
        ).tocsr()

    def residual_norms(self, x: np.ndarray) -> dict[str, float]:
        r = self.residuals(x)
        out = {}
        spans = {
            "prior": 3 * len(self.pr_p),
            "odometry": 3 * len(self.od_i),
            "registration": 2 * len(self.rg_p),
            "adjacent": 2 * len(self.aj_k),
            "vertical": len(self.vr_k),
            "icp": 3 * len(self.ic_p),
        }
        for kind in FACTOR_KINDS:
            n = spans[kind]
            if n:
                seg = r[self.row0[kind] : self.row0[kind] + n]
                out[kind] = float(np.linalg.norm(seg))
        return out
