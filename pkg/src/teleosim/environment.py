"""Peg-in-hole task world.

Ships the six benchmark task presets (three cylinder clearance variants, a
cuboid, a hexagonal prism, and a tight cylinder), a point-sampled penalty
contact model that produces the external wrench on the follower EE, the
two-stage progress machine (position guiding -> guided insertion -> done),
and trial adjudication.

Conventions: the hole frame z-axis points *into* the hole (insertion
direction), origin at the mouth center on the plate surface. Task dimensions
are stored in millimetres exactly as configured; ``geometry_scale`` scales
every length when converting to SI, preserving clearance-to-diameter ratios.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .kinodynamics import Pose, Wrench
from .rotations import mat_from_axis_angle

# Home EE height of the shipped 7-DoF arm; presets place the hole mouth so a
# trial starts with the peg tip a short descent away at any geometry scale.
DEFAULT_HOME_EE_HEIGHT = 0.5903
DEFAULT_TIP_DROP = 0.03

_SQRT2 = math.sqrt(2.0)


class PegShape(str, enum.Enum):
    CYLINDER = "cylinder"
    CUBOID = "cuboid"
    HEX_PRISM = "hex_prism"


_SHAPE_CODE = {PegShape.CYLINDER: 0, PegShape.CUBOID: 1, PegShape.HEX_PRISM: 2}


class Stage(enum.IntEnum):
    POSITION_GUIDING = 0
    GUIDED_INSERTION = 1
    DONE = 2


class FailureReason(str, enum.Enum):
    NONE = "none"
    TIMEOUT = "timeout"
    SAFETY_MARGIN = "safety_margin"
    ABORTED = "aborted"


@dataclass(frozen=True)
class TaskConfig:
    """One peg-in-hole task: peg geometry, clearance, and hole placement.

    ``peg_dims_mm`` is shape specific: (diameter,) for cylinders,
    (cross-section length, cross-section width) for cuboids and
    (side length,) for hexagonal prisms. ``clearance_mm`` is the radial
    (per-face) gap between peg and hole when coaxial.
    """

    id: str
    peg_shape: PegShape
    peg_length_mm: float
    peg_dims_mm: tuple
    clearance_mm: float
    hole_pose: Pose
    hole_depth_mm: float = 25.0
    geometry_scale: float = 1.0
    chamfer_mm: float = 0.2
    approach_margin_mm: float = 5.0
    success_fraction: float = 0.9
    peg_material: str = ""
    peg_process: str = ""
    hole_material: str = ""
    hole_process: str = ""

    def __post_init__(self):
        if self.clearance_mm <= 0.0:
            raise ValueError("clearance must be positive")
        if self.peg_length_mm <= 0.0 or any(d <= 0.0 for d in self.peg_dims_mm):
            raise ValueError("peg dimensions must be positive")
        if self.hole_depth_mm <= 0.0 or self.geometry_scale <= 0.0:
            raise ValueError("hole depth and geometry scale must be positive")
        if not 0.0 < self.success_fraction <= 1.0:
            raise ValueError("success_fraction must be in (0, 1]")
        expected = {PegShape.CYLINDER: 1, PegShape.CUBOID: 2, PegShape.HEX_PRISM: 1}
        if len(self.peg_dims_mm) != expected[self.peg_shape]:
            raise ValueError(f"{self.peg_shape.value} expects "
                             f"{expected[self.peg_shape]} cross-section dims")


@dataclass(frozen=True)
class ContactParams:
    """Penalty contact parameters.

    ``sample_count`` is the number of sample points per peg cross-section
    ring; the peg is sampled on several rings over its insertion span plus
    the bottom rim. ``v_eps`` regularizes Coulomb friction near zero slip.
    """

    k_n: float = 2.0e5
    d_n: float = 200.0
    mu: float = 0.3
    sample_count: int = 16
    v_eps: float = 1e-4

    def __post_init__(self):
        if self.k_n <= 0.0 or self.d_n < 0.0 or self.mu < 0.0:
            raise ValueError("require k_n > 0, d_n >= 0, mu >= 0")
        if self.sample_count < 16:
            raise ValueError("sample_count must be at least 16")
        if self.v_eps <= 0.0:
            raise ValueError("v_eps must be positive")


@dataclass
class StageState:
    """Progress through the two task stages, with entry times latched."""

    stage: Stage = Stage.POSITION_GUIDING
    t_stage_entry: float = 0.0
    insertion_depth: float = 0.0     # m, along the hole axis
    t_stage1: float = float("nan")   # duration of stage 1 once it ends


@dataclass(frozen=True)
class TrialOutcome:
    success: bool
    t_total: float
    t_stage1: float
    t_stage2: float
    failure_reason: FailureReason = FailureReason.NONE


# ---------------------------------------------------------------------------
# geometry derivation
# ---------------------------------------------------------------------------

@dataclass
class TaskGeometry:
    """SI-unit geometry derived from a TaskConfig + ContactParams."""

    shape_code: int
    half1: float          # circle: radius; rect: half length; hex: apothem (hole side)
    half2: float          # rect: half width; otherwise 0
    chamfer: float
    depth: float
    peg_length: float
    approach_margin: float
    success_fraction: float
    trigger_radius: float
    R_hole: np.ndarray
    p_hole: np.ndarray
    points: np.ndarray    # peg-frame sample points (m, 3)


def _perimeter_points(shape: PegShape, dims_m, count: int) -> np.ndarray:
    """2-D cross-section boundary samples; polygon vertices always included."""
    if shape is PegShape.CYLINDER:
        r = 0.5 * dims_m[0]
        ang = 2.0 * np.pi * np.arange(count) / count
        return np.column_stack([r * np.cos(ang), r * np.sin(ang)])
    if shape is PegShape.CUBOID:
        hx, hy = 0.5 * dims_m[0], 0.5 * dims_m[1]
        corners = np.array([[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]])
    else:
        s = dims_m[0]
        ang = np.deg2rad(30.0 + 60.0 * np.arange(6))
        corners = s * np.column_stack([np.cos(ang), np.sin(ang)])
    edges = len(corners)
    per_edge = max(1, -(-count // edges))
    pts = []
    for k in range(edges):
        a, b = corners[k], corners[(k + 1) % edges]
        for t in np.arange(per_edge) / per_edge:
            pts.append(a + t * (b - a))
    return np.asarray(pts)


_RING_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)


def task_geometry(task: TaskConfig, params: ContactParams) -> TaskGeometry:
    """Resolve scaled SI geometry and peg sample points for the kernels."""
    f = task.geometry_scale * 1e-3
    clearance = task.clearance_mm * f
    peg_len = task.peg_length_mm * f
    depth = task.hole_depth_mm * f
    chamfer = task.chamfer_mm * f
    approach = task.approach_margin_mm * f

    dims_m = tuple(d * f for d in task.peg_dims_mm)
    if task.peg_shape is PegShape.CYLINDER:
        half1, half2 = 0.5 * dims_m[0] + clearance, 0.0
        circum = half1
    elif task.peg_shape is PegShape.CUBOID:
        half1, half2 = 0.5 * dims_m[0] + clearance, 0.5 * dims_m[1] + clearance
        circum = math.hypot(half1, half2)
    else:
        apothem = dims_m[0] * math.sqrt(3.0) / 2.0
        half1, half2 = apothem + clearance, 0.0
        circum = half1 * 2.0 / math.sqrt(3.0)

    ring = _perimeter_points(task.peg_shape, dims_m, params.sample_count)
    span = min(peg_len, 1.3 * depth + chamfer)
    pts = []
    for frac in _RING_FRACTIONS:
        z = peg_len - frac * span
        pts.append(np.column_stack([ring, np.full(len(ring), z)]))
    points = np.ascontiguousarray(np.vstack(pts))

    return TaskGeometry(
        shape_code=_SHAPE_CODE[task.peg_shape],
        half1=half1, half2=half2, chamfer=chamfer, depth=depth,
        peg_length=peg_len, approach_margin=approach,
        success_fraction=task.success_fraction,
        trigger_radius=circum + approach,
        R_hole=np.ascontiguousarray(task.hole_pose.rotation()),
        p_hole=task.hole_pose.position.copy(),
        points=points,
    )


# ---------------------------------------------------------------------------
# contact kernel
# ---------------------------------------------------------------------------

@njit(cache=True)
def _sd2(shape_code, half1, half2, x, y):
    """Signed distance (negative inside) and outward gradient of the hole
    cross-section boundary at 2-D point (x, y) in the hole frame."""
    if shape_code == 0:
        d = math.sqrt(x * x + y * y)
        if d < 1e-12:
            return -half1, 1.0, 0.0
        return d - half1, x / d, y / d
    if shape_code == 1:
        dx = abs(x) - half1
        dy = abs(y) - half2
        sx = 1.0 if x >= 0.0 else -1.0
        sy = 1.0 if y >= 0.0 else -1.0
        if dx > 0.0 or dy > 0.0:
            ox = dx if dx > 0.0 else 0.0
            oy = dy if dy > 0.0 else 0.0
            d = math.sqrt(ox * ox + oy * oy)
            return d, sx * ox / d, sy * oy / d
        if dx > dy:
            return dx, sx, 0.0
        return dy, 0.0, sy
    # regular hexagon as three slabs of half-width = apothem, exact on faces
    best = -1e30
    gx = 1.0
    gy = 0.0
    for k in range(3):
        a = 1.0471975511965976 * k       # pi/3
        nx = math.cos(a)
        ny = math.sin(a)
        v = nx * x + ny * y
        s = abs(v) - half1
        if s > best:
            best = s
            if v >= 0.0:
                gx, gy = nx, ny
            else:
                gx, gy = -nx, -ny
    return best, gx, gy


@njit(cache=True)
def contact_wrench_kernel(shape_code, half1, half2, chamfer, depth,
                          R_h, p_h, points, R_ee, p_ee, v_ee, w_ee,
                          k_n, d_n, mu, v_eps):
    """Sum of penalty contact forces over the peg sample points.

    Returns (force, moment-about-EE) expressed in the EE frame. Solid
    features tested per point: plate top surface, bore wall, 45-degree
    chamfer band, bore bottom; the shallowest positive penetration wins.
    """
    f_w = np.zeros(3)
    m_w = np.zeros(3)
    inv_s2 = 1.0 / _SQRT2
    for k in range(points.shape[0]):
        px = points[k, 0]
        py = points[k, 1]
        pz = points[k, 2]
        rx = R_ee[0, 0] * px + R_ee[0, 1] * py + R_ee[0, 2] * pz
        ry = R_ee[1, 0] * px + R_ee[1, 1] * py + R_ee[1, 2] * pz
        rz = R_ee[2, 0] * px + R_ee[2, 1] * py + R_ee[2, 2] * pz
        # world position and velocity of the sample point
        wx = p_ee[0] + rx
        wy = p_ee[1] + ry
        wz = p_ee[2] + rz
        vx = v_ee[0] + w_ee[1] * rz - w_ee[2] * ry
        vy = v_ee[1] + w_ee[2] * rx - w_ee[0] * rz
        vz = v_ee[2] + w_ee[0] * ry - w_ee[1] * rx
        # hole-frame coordinates
        dx = wx - p_h[0]
        dy = wy - p_h[1]
        dz = wz - p_h[2]
        hx = R_h[0, 0] * dx + R_h[1, 0] * dy + R_h[2, 0] * dz
        hy = R_h[0, 1] * dx + R_h[1, 1] * dy + R_h[2, 1] * dz
        hz = R_h[0, 2] * dx + R_h[1, 2] * dy + R_h[2, 2] * dz
        if hz <= 0.0:
            continue
        sd, gx, gy = _sd2(shape_code, half1, half2, hx, hy)
        pen = -1.0
        nx = 0.0
        ny = 0.0
        nz = 0.0
        if sd <= 0.0:
            if hz > depth:
                pen = hz - depth
                nz = -1.0
        else:
            pen = hz                     # plate top surface
            nz = -1.0
            if hz <= depth and sd < pen:
                pen = sd                 # bore wall
                nx, ny, nz = -gx, -gy, 0.0
            if chamfer > 0.0:
                pc = (sd + hz - chamfer) * inv_s2
                if 0.0 < pc < pen and hz - pc * inv_s2 <= chamfer:
                    pen = pc
                    nx = -gx * inv_s2
                    ny = -gy * inv_s2
                    nz = -inv_s2
        if pen <= 0.0:
            continue
        # hole-frame velocity of the point
        ux = R_h[0, 0] * vx + R_h[1, 0] * vy + R_h[2, 0] * vz
        uy = R_h[0, 1] * vx + R_h[1, 1] * vy + R_h[2, 1] * vz
        uz = R_h[0, 2] * vx + R_h[1, 2] * vy + R_h[2, 2] * vz
        vn = ux * nx + uy * ny + uz * nz
        fn = k_n * pen - d_n * vn
        if fn <= 0.0:
            continue
        fx = fn * nx
        fy = fn * ny
        fz = fn * nz
        if mu > 0.0:
            tx = ux - vn * nx
            ty = uy - vn * ny
            tz = uz - vn * nz
            tn = math.sqrt(tx * tx + ty * ty + tz * tz)
            if tn > 0.0:
                s = mu * fn / (tn + v_eps)
                fx -= s * tx
                fy -= s * ty
                fz -= s * tz
        # back to world frame, accumulate force and moment about the EE
        fwx = R_h[0, 0] * fx + R_h[0, 1] * fy + R_h[0, 2] * fz
        fwy = R_h[1, 0] * fx + R_h[1, 1] * fy + R_h[1, 2] * fz
        fwz = R_h[2, 0] * fx + R_h[2, 1] * fy + R_h[2, 2] * fz
        f_w[0] += fwx
        f_w[1] += fwy
        f_w[2] += fwz
        m_w[0] += ry * fwz - rz * fwy
        m_w[1] += rz * fwx - rx * fwz
        m_w[2] += rx * fwy - ry * fwx
    f_ee = R_ee.T @ f_w
    m_ee = R_ee.T @ m_w
    return f_ee, m_ee


def contact_wrench(task: TaskConfig, peg_pose: Pose, peg_twist,
                   params: ContactParams,
                   geometry: TaskGeometry | None = None) -> Wrench:
    """External wrench on the follower EE from peg/hole contact (EE frame).

    ``peg_twist`` is the 6-vector EE twist (v, omega) in the world frame.
    Pass a precomputed ``geometry`` in hot loops to skip re-derivation.
    """
    twist = np.asarray(peg_twist, dtype=np.float64).reshape(6)
    if not (np.all(np.isfinite(peg_pose.position))
            and np.all(np.isfinite(twist))):
        raise ValueError("peg pose and twist must be finite")
    geo = geometry if geometry is not None else task_geometry(task, params)
    f_ee, m_ee = contact_wrench_kernel(
        geo.shape_code, geo.half1, geo.half2, geo.chamfer, geo.depth,
        geo.R_hole, geo.p_hole, geo.points,
        np.ascontiguousarray(peg_pose.rotation()), peg_pose.position,
        twist[:3].copy(), twist[3:].copy(),
        params.k_n, params.d_n, params.mu, params.v_eps)
    return Wrench(force=f_ee, moment=m_ee, frame="ee")


# ---------------------------------------------------------------------------
# stages and adjudication
# ---------------------------------------------------------------------------

def peg_tip(peg_pose: Pose, peg_length: float) -> np.ndarray:
    """Bottom-face center of the peg (peg extends along the EE z-axis)."""
    return peg_pose.position + peg_length * peg_pose.z_axis()


def stage_update(state: StageState, peg_pose: Pose, task: TaskConfig,
                 now: float, geometry: TaskGeometry | None = None,
                 params: ContactParams | None = None) -> StageState:
    """Advance the latching two-stage machine from the current peg pose."""
    geo = geometry if geometry is not None else task_geometry(
        task, params if params is not None else ContactParams())
    tip = peg_tip(peg_pose, geo.peg_length)
    d = tip - geo.p_hole
    local = geo.R_hole.T @ d
    lateral = math.hypot(local[0], local[1])
    axial = local[2]
    depth_now = min(max(axial, 0.0), geo.depth)

    stage = state.stage
    entry = state.t_stage_entry
    t_stage1 = state.t_stage1
    if stage == Stage.POSITION_GUIDING:
        if lateral <= geo.trigger_radius and axial >= -geo.approach_margin:
            stage = Stage.GUIDED_INSERTION
            entry = now
            t_stage1 = now
    if stage == Stage.GUIDED_INSERTION:
        if depth_now >= geo.success_fraction * geo.depth:
            stage = Stage.DONE
            entry = now
    depth_out = depth_now if stage != Stage.POSITION_GUIDING else 0.0
    return StageState(stage=stage, t_stage_entry=entry,
                      insertion_depth=depth_out, t_stage1=t_stage1)


# time constant of the first-order low-pass applied to the contact-force
# norm before the safety comparison; sub-tick impact transients (stiff
# contact releasing stored spring lead) are not sustained overloads
SAFETY_FILTER_TAU = 0.02  # s


def monitored_force(previous: float, force_norm: float, dt: float,
                    tau: float = SAFETY_FILTER_TAU) -> float:
    """One low-pass step of the safety-monitor force signal."""
    if tau <= 0.0:
        return force_norm
    beta = math.exp(-dt / tau)
    return beta * previous + (1.0 - beta) * force_norm


def adjudicate(state: StageState, contact_force_norm: float, now: float,
               stage_limit: float = 30.0, total_limit: float = 60.0,
               safety_force_limit: float = 60.0) -> TrialOutcome | None:
    """Trial outcome, or None while still pending.

    ``contact_force_norm`` is compared against the safety limit as given;
    feed the ``monitored_force`` low-pass when adjudicating stiff-contact
    simulations so one-sample impact spikes do not read as overloads.
    Timeout and safety-margin failures are both recorded at the full trial
    cap. Stage times of failed trials cover the portion actually spent.
    """
    if state.stage == Stage.DONE:
        t1 = state.t_stage1
        return TrialOutcome(success=True, t_total=now, t_stage1=t1,
                            t_stage2=now - t1 if np.isfinite(t1) else 0.0,
                            failure_reason=FailureReason.NONE)
    in_stage2 = state.stage == Stage.GUIDED_INSERTION
    t1 = state.t_stage1 if in_stage2 else now
    t2 = now - state.t_stage1 if in_stage2 else 0.0
    if contact_force_norm > safety_force_limit:
        return TrialOutcome(success=False, t_total=total_limit, t_stage1=t1,
                            t_stage2=t2, failure_reason=FailureReason.SAFETY_MARGIN)
    if now - state.t_stage_entry > stage_limit or now >= total_limit:
        return TrialOutcome(success=False, t_total=total_limit, t_stage1=t1,
                            t_stage2=t2, failure_reason=FailureReason.TIMEOUT)
    return None


def surface_normal_estimate(task: TaskConfig, noise_rad: float, seed) -> np.ndarray:
    """Estimated hole axis (insertion direction): truth tilted by a rotation
    of angle uniform in [0, noise_rad] about a random perpendicular axis."""
    if noise_rad < 0.0:
        raise ValueError("noise_rad must be non-negative")
    R = task.hole_pose.rotation()
    z_true = R[:, 2].copy()
    if noise_rad == 0.0:
        return z_true
    rng = np.random.default_rng(seed)
    tilt = rng.uniform(0.0, noise_rad)
    azim = rng.uniform(0.0, 2.0 * np.pi)
    axis = math.cos(azim) * R[:, 0] + math.sin(azim) * R[:, 1]
    return mat_from_axis_angle(np.ascontiguousarray(axis), tilt) @ z_true


# ---------------------------------------------------------------------------
# shipped task presets
# ---------------------------------------------------------------------------

_TASK_TABLE = {
    "A": (PegShape.CYLINDER, 50.0, (40.0,), 0.25, "PAM", "CNC", "PLA", "3D printing"),
    "B": (PegShape.CYLINDER, 50.0, (40.0,), 0.13, "PAM", "CNC", "PLA", "3D printing"),
    "C": (PegShape.CYLINDER, 50.0, (40.0,), 0.07, "PAM", "CNC", "PLA", "3D printing"),
    "D": (PegShape.CUBOID, 60.0, (35.0, 25.0), 0.10, "PLA", "3D printing", "PLA", "3D printing"),
    "E": (PegShape.HEX_PRISM, 50.0, (11.0,), 0.10, "PLA", "3D printing", "PLA", "3D printing"),
    "F": (PegShape.CYLINDER, 50.0, (20.0,), 0.02, "PAM", "CNC", "Aluminum", "CNC"),
}

TASK_IDS = tuple(sorted(_TASK_TABLE))

# xyzw quaternion for a half-turn about world x: hole z-axis points down
_HOLE_ORIENTATION = np.array([1.0, 0.0, 0.0, 0.0])
# far enough from the home tip position that the free-space approach stage
# is a genuine traverse (the insertion stage triggers on proximity)
DEFAULT_HOLE_XY = (0.50, 0.28)


def default_hole_pose(peg_length_mm: float, geometry_scale: float) -> Pose:
    """Mouth placed so the home-pose peg tip starts a short descent above it."""
    peg_len = peg_length_mm * geometry_scale * 1e-3
    z = DEFAULT_HOME_EE_HEIGHT - peg_len - DEFAULT_TIP_DROP
    return Pose(position=np.array([DEFAULT_HOLE_XY[0], DEFAULT_HOLE_XY[1], z]),
                orientation=_HOLE_ORIENTATION.copy())


def task_preset(task_id: str, geometry_scale: float = 10.0, **overrides) -> TaskConfig:
    """One of the shipped tasks A-F at the requested geometry scale."""
    key = task_id.upper()
    if key not in _TASK_TABLE:
        raise KeyError(f"unknown task {task_id!r}; expected one of {TASK_IDS}")
    shape, length, dims, clearance, pm, pp, hm, hp = _TASK_TABLE[key]
    cfg = TaskConfig(
        id=key, peg_shape=shape, peg_length_mm=length, peg_dims_mm=dims,
        clearance_mm=clearance,
        hole_pose=default_hole_pose(length, geometry_scale),
        geometry_scale=geometry_scale,
        peg_material=pm, peg_process=pp, hole_material=hm, hole_process=hp,
    )
    return replace(cfg, **overrides) if overrides else cfg
