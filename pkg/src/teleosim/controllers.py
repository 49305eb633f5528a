"""Leader and follower control laws for bilateral teleoperation.

Baseline: the leader runs gravity/Coriolis compensation plus transmitted
feedback torque; the follower runs joint impedance control on the received
joint targets. Shared assembly adds two assists: a Cartesian alignment
spring on the leader's EE orientation toward the estimated hole axis, and a
gated sinusoidal feedforward wiggle on the follower that rocks the peg while
lateral constraint forces indicate jamming.

Selection matrices are stored as diagonal 6-vectors. Wrench/twist vectors
order translation before rotation: (x, y, z, rx, ry, rz).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .environment import Stage
from .kinodynamics import (JointState, ManipulatorModel, Pose, Wrench,
                           bias_forces, forward_kinematics,
                           geometric_jacobian, gravity_torques)
from .rotations import mat_from_axis_angle, rotvec_from_mat

log = logging.getLogger(__name__)

_CART_STIFF = 35.0
_CART_DAMP = 2.0 * math.sqrt(_CART_STIFF)
_JOINT_STIFF = (450.0, 450.0, 450.0, 300.0, 150.0, 75.0, 45.0)


def _rotation_selector() -> np.ndarray:
    return np.array([0.0, 0.0, 0.0, 1.0, 1.0, 0.0])


def _translation_selector() -> np.ndarray:
    return np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])


def _lateral_selector() -> np.ndarray:
    return np.array([1.0, 1.0, 0.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class LeaderGains:
    """Cartesian alignment-assist gains (diagonals of 6x6 matrices)."""

    k_c: np.ndarray = field(default_factory=lambda: _CART_STIFF * _rotation_selector())
    d_c: np.ndarray = field(default_factory=lambda: _CART_DAMP * _rotation_selector())
    lambda1: np.ndarray = field(default_factory=_rotation_selector)

    def __post_init__(self):
        for name in ("k_c", "d_c", "lambda1"):
            v = np.ascontiguousarray(getattr(self, name), dtype=np.float64).reshape(6)
            if np.any(v < 0.0):
                raise ValueError(f"{name} diagonal entries must be >= 0")
            v.setflags(write=False)
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class FollowerGains:
    """Joint impedance gains plus wiggle/feedback selection diagonals."""

    k_q: np.ndarray = field(default_factory=lambda: np.array(_JOINT_STIFF))
    d_q: np.ndarray | None = None     # default: 2*0.7*sqrt(k_q)
    lambda2: np.ndarray = field(default_factory=_lateral_selector)
    lambda3: np.ndarray = field(default_factory=_translation_selector)

    def __post_init__(self):
        k_q = np.ascontiguousarray(self.k_q, dtype=np.float64).reshape(-1)
        if np.any(k_q <= 0.0):
            raise ValueError("k_q diagonal must be positive")
        d_q = self.d_q
        if d_q is None:
            d_q = 2.0 * 0.7 * np.sqrt(k_q)
        d_q = np.ascontiguousarray(d_q, dtype=np.float64).reshape(k_q.shape)
        if np.any(d_q < 0.0):
            raise ValueError("d_q diagonal must be >= 0")
        lam2 = np.ascontiguousarray(self.lambda2, dtype=np.float64).reshape(6)
        lam3 = np.ascontiguousarray(self.lambda3, dtype=np.float64).reshape(6)
        for v in (k_q, d_q, lam2, lam3):
            v.setflags(write=False)
        object.__setattr__(self, "k_q", k_q)
        object.__setattr__(self, "d_q", d_q)
        object.__setattr__(self, "lambda2", lam2)
        object.__setattr__(self, "lambda3", lam3)


@dataclass(frozen=True)
class WiggleParams:
    """Per-axis sinusoid a_j*sin(2*pi*f_j*t + phi_j) on (x,y,z,rx,ry,rz).

    Defaults dither the two lateral translation axes at incommensurate
    frequencies so the tip sweeps a slow Lissajous sweep across the
    clearance instead of retracing one line."""

    amplitude: np.ndarray = field(default_factory=lambda: np.array(
        [0.766, 0.906, 0.0, 0.0, 0.0, 0.0]))
    frequency: np.ndarray = field(default_factory=lambda: np.array(
        [2.150, 2.160, 0.0, 0.0, 0.0, 0.0]))
    phase: np.ndarray = field(default_factory=lambda: np.array(
        [-1.562, 0.610, 0.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        for name in ("amplitude", "frequency", "phase"):
            v = np.ascontiguousarray(getattr(self, name), dtype=np.float64).reshape(6)
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if np.any(self.frequency < 0.0):
            raise ValueError("frequencies must be >= 0")


# Time constant (s) of the first-order low-pass the measurement chain applies
# to the lateral force magnitude before the gate compare.  A jammed peg
# presses on the bore continuously, so its smoothed lateral force settles near
# the raw median; free sliding produces only brief friction spikes that the
# filter averages away.  The gap between those two levels is where f_t sits.
GATE_FILTER_TAU = 0.3


@dataclass(frozen=True)
class AutonomyConfig:
    """Gate for the follower's wiggle assist.

    The threshold is meant to fire on sustained jamming contact, not on
    incidental sliding friction, so callers feed the gate a low-pass
    filtered lateral force (see GATE_FILTER_TAU) rather than the raw
    per-tick measurement."""

    f_t: float = 0.8                # lateral force threshold, N
    debounce_window: float = 0.0    # s; 0 = instantaneous threshold test
    stage_gated: bool = True        # assist only during guided insertion

    def __post_init__(self):
        if self.f_t <= 0.0:
            raise ValueError("f_t must be positive")
        if self.debounce_window < 0.0:
            raise ValueError("debounce_window must be >= 0")


@dataclass
class AutonomyState:
    """Debounce bookkeeping: when the threshold condition started holding."""

    above_since: float = float("nan")


@dataclass
class FeedbackTorque:
    """Follower external torque transmitted back to the leader."""

    tau_d_f: np.ndarray

    def __post_init__(self):
        self.tau_d_f = np.asarray(self.tau_d_f, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.tau_d_f)):
            raise ValueError("feedback torque must be finite")

    @classmethod
    def zero(cls, n: int) -> "FeedbackTorque":
        return cls(tau_d_f=np.zeros(n))


# ---------------------------------------------------------------------------
# kernels shared with the batch harness
# ---------------------------------------------------------------------------

@njit(cache=True)
def pose_error_kernel(R_cur, p_cur, R_des, p_des):
    """6-vector pose error: translation difference and the axis-angle vector
    of the relative rotation R_des @ R_cur.T (base frame)."""
    e = np.empty(6)
    e[0] = p_des[0] - p_cur[0]
    e[1] = p_des[1] - p_cur[1]
    e[2] = p_des[2] - p_cur[2]
    rv = rotvec_from_mat(R_des @ R_cur.T)
    e[3] = rv[0]
    e[4] = rv[1]
    e[5] = rv[2]
    return e


@njit(cache=True)
def cartesian_assist_kernel(J, e6, twist, k_c, d_c, lam1):
    """tau = J^T * Lambda1 * (K_c e - D_c xdot) with diagonal matrices."""
    w = np.empty(6)
    for i in range(6):
        w[i] = lam1[i] * (k_c[i] * e6[i] - d_c[i] * twist[i])
    return J.T @ w


@njit(cache=True)
def joint_impedance_kernel(k_q, d_q, q_d, q, dq_d, dq):
    n = q.shape[0]
    tau = np.empty(n)
    for i in range(n):
        tau[i] = k_q[i] * (q_d[i] - q[i]) + d_q[i] * (dq_d[i] - dq[i])
    return tau


@njit(cache=True)
def wiggle_kernel(amplitude, frequency, phase, t):
    f = np.empty(6)
    for j in range(6):
        if amplitude[j] == 0.0:
            f[j] = 0.0
        else:
            f[j] = amplitude[j] * math.sin(2.0 * math.pi * frequency[j] * t + phase[j])
    return f


@njit(cache=True)
def masked_jt_kernel(J, mask, wrench6):
    w = np.empty(6)
    for i in range(6):
        w[i] = mask[i] * wrench6[i]
    return J.T @ w


@njit(cache=True)
def alignment_kernel(z_l, z_target):
    """Axis-angle misalignment: axis = z_l x z_target (unnormalized), clamped
    arccos angle, plus a deterministic fallback axis when antiparallel."""
    dot = z_l[0] * z_target[0] + z_l[1] * z_target[1] + z_l[2] * z_target[2]
    if dot > 1.0:
        dot = 1.0
    elif dot < -1.0:
        dot = -1.0
    theta = math.acos(dot)
    ax = z_l[1] * z_target[2] - z_l[2] * z_target[1]
    ay = z_l[2] * z_target[0] - z_l[0] * z_target[2]
    az = z_l[0] * z_target[1] - z_l[1] * z_target[0]
    degenerate = False
    if math.sqrt(ax * ax + ay * ay + az * az) < 1e-12 and dot < 0.0:
        degenerate = True
        # any unit vector orthogonal to z_l: prefer z_l x e1, else z_l x e2
        ax = 0.0
        ay = z_l[2]
        az = -z_l[1]
        nrm = math.sqrt(ay * ay + az * az)
        if nrm < 1e-9:
            ax = -z_l[2]
            ay = 0.0
            az = z_l[0]
            nrm = math.sqrt(ax * ax + az * az)
        ax /= nrm
        ay /= nrm
        az /= nrm
    axis = np.empty(3)
    axis[0] = ax
    axis[1] = ay
    axis[2] = az
    return axis, theta, degenerate


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def leader_baseline_torque(model: ManipulatorModel, state: JointState,
                           tau_d_f) -> np.ndarray:
    """Gravity/Coriolis compensation plus transmitted feedback torque."""
    tau_d_f = model.check_q(tau_d_f)
    return (gravity_torques(model, state.q)
            + bias_forces(model, state.q, state.dq) + tau_d_f)


def alignment_axis_angle(z_l, z_target):
    """Rotation axis (unnormalized cross product) and angle taking z_l onto
    z_target; returns (axis, theta, degenerate)."""
    z_l = np.ascontiguousarray(z_l, dtype=np.float64).reshape(3)
    z_target = np.ascontiguousarray(z_target, dtype=np.float64).reshape(3)
    for v, name in ((z_l, "z_l"), (z_target, "z_target")):
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValueError(f"{name} must be unit norm")
    return alignment_kernel(z_l, z_target)


def leader_assist_goal(ee_pose: Pose, z_target) -> Pose:
    """Goal pose: current EE orientation swung so its z-axis hits z_target;
    position untouched. Antiparallel inputs use the deterministic fallback
    axis from alignment_axis_angle."""
    axis, theta, _ = alignment_axis_angle(ee_pose.z_axis(), z_target)
    if theta == 0.0:
        return Pose(position=ee_pose.position, orientation=ee_pose.orientation)
    nrm = np.linalg.norm(axis)
    if nrm > 0.0:
        axis = axis / nrm
    R_goal = mat_from_axis_angle(np.ascontiguousarray(axis), theta) @ ee_pose.rotation()
    return Pose.from_matrix(R_goal, ee_pose.position)


def leader_shared_torque(model: ManipulatorModel, state: JointState,
                         p_d: Pose, gains: LeaderGains, tau_d_f) -> np.ndarray:
    """Baseline law plus the masked Cartesian alignment spring toward p_d."""
    base = leader_baseline_torque(model, state, tau_d_f)
    if not np.any(gains.lambda1 != 0.0):
        return base
    J = geometric_jacobian(model, state.q)
    cur = forward_kinematics(model, state.q)
    e6 = pose_error_kernel(np.ascontiguousarray(cur.rotation()), cur.position,
                           np.ascontiguousarray(p_d.rotation()), p_d.position)
    twist = J @ state.dq
    return base + cartesian_assist_kernel(J, e6, twist,
                                          gains.k_c, gains.d_c, gains.lambda1)


def follower_baseline_torque(model: ManipulatorModel, state_f: JointState,
                             q_d_f, dq_d_f, gains: FollowerGains) -> np.ndarray:
    """Joint impedance on the received targets plus dynamics compensation."""
    q_d_f = model.check_q(q_d_f)
    dq_d_f = model.check_q(dq_d_f)
    imp = joint_impedance_kernel(gains.k_q, gains.d_q,
                                 q_d_f, state_f.q, dq_d_f, state_f.dq)
    return (imp + bias_forces(model, state_f.q, state_f.dq)
            + gravity_torques(model, state_f.q))


def autonomy_level(f_ext_f: Wrench, cfg: AutonomyConfig, stage: Stage,
                   now: float, state: AutonomyState | None = None) -> int:
    """Binary assist gate: 1 iff the EE-frame lateral force exceeds f_t
    (held for debounce_window when nonzero, in stage 2 when stage_gated).

    With debounce_window > 0 the caller owns ``state``; it is updated in
    place. The default configuration is stateless."""
    if f_ext_f.frame != "ee":
        raise ValueError("autonomy gate expects the wrench in the EE frame")
    lateral = math.hypot(f_ext_f.force[0], f_ext_f.force[1])
    raised = lateral > cfg.f_t
    if cfg.stage_gated and stage != Stage.GUIDED_INSERTION:
        raised = False
    if cfg.debounce_window == 0.0:
        return 1 if raised else 0
    if state is None:
        raise ValueError("debounce_window > 0 requires an AutonomyState")
    if not raised:
        state.above_since = float("nan")
        return 0
    if not np.isfinite(state.above_since):
        state.above_since = now
    return 1 if now - state.above_since >= cfg.debounce_window else 0


def wiggle_force(params: WiggleParams, t: float) -> np.ndarray:
    """Feedforward Lissajous wrench at time t since insertion-stage entry."""
    if t < 0.0:
        raise ValueError("t must be >= 0")
    return wiggle_kernel(params.amplitude, params.frequency, params.phase, t)


def follower_shared_torque(model: ManipulatorModel, state_f: JointState,
                           q_d_f, dq_d_f, gains: FollowerGains,
                           eta: int, f_ff) -> np.ndarray:
    """Impedance law plus the eta-gated masked wiggle feedforward."""
    base = follower_baseline_torque(model, state_f, q_d_f, dq_d_f, gains)
    if eta == 0:
        return base
    f_ff = np.ascontiguousarray(f_ff, dtype=np.float64).reshape(6)
    J = geometric_jacobian(model, state_f.q)
    return base + masked_jt_kernel(J, gains.lambda2, f_ff)


def feedback_torque(J_f: np.ndarray, f_ext_f: Wrench, lambda3) -> np.ndarray:
    """Torque echoed to the leader: J^T Lambda3 f_ext (moments masked off
    in the default configuration). Jacobian and wrench share the base frame."""
    J_f = np.ascontiguousarray(J_f, dtype=np.float64)
    if J_f.ndim != 2 or J_f.shape[0] != 6:
        raise ValueError(f"expected a 6xn Jacobian, got {J_f.shape}")
    if f_ext_f.frame != "base":
        raise ValueError("feedback torque expects the wrench in the base frame")
    lam3 = np.ascontiguousarray(lambda3, dtype=np.float64).reshape(6)
    return masked_jt_kernel(J_f, lam3, f_ext_f.as_vector())


def clip_torque(model: ManipulatorModel, tau: np.ndarray,
                label: str = "") -> np.ndarray:
    """Clip a command to the model's torque limits, logging any clipping."""
    clipped = np.clip(tau, -model.tau_limit, model.tau_limit)
    if np.any(clipped != tau):
        log.debug("torque command clipped%s on axes %s",
                  f" ({label})" if label else "",
                  np.nonzero(clipped != tau)[0].tolist())
    return clipped
