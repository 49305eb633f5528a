"""Serial-chain kinematics and rigid-body dynamics for an n-DoF torque-controlled arm.

Frames follow the classic Denavit-Hartenberg convention: joint i rotates about
z of frame i-1 and the link transform is Rz(theta)*Tz(d)*Tx(a)*Rx(alpha).
Mass matrix comes from the composite-rigid-body algorithm, bias and gravity
terms from recursive Newton-Euler, both written against link-local frames so
they compile to tight numba kernels.

Two instances of :class:`ManipulatorModel` (leader and follower) are used per
teleoperation session.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from numba import njit

from .rotations import quat_from_mat, mat_from_quat

log = logging.getLogger(__name__)

MAX_STEP_DT = 2e-3


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManipulatorModel:
    """Kinematic and inertial description of a fixed-base serial arm.

    dh rows are (a [m], d [m], alpha [rad], theta_offset [rad]) per joint.
    com is expressed in the link frame, inertia is about the com in the link
    frame. armature is the reflected rotor inertia per joint (gear ratio
    squared times motor inertia), added to the mass-matrix diagonal; on
    gear-driven arms it dominates the link inertia at the wrist and keeps
    explicit-rate torque control well conditioned. All arrays are copied and
    made read-only on construction.
    """

    dh: np.ndarray              # (n, 4)
    mass: np.ndarray            # (n,)
    com: np.ndarray             # (n, 3)
    inertia: np.ndarray         # (n, 3, 3)
    q_lower: np.ndarray         # (n,)
    q_upper: np.ndarray         # (n,)
    tau_limit: np.ndarray       # (n,)
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    armature: np.ndarray | None = None
    q_home: np.ndarray | None = None
    name: str = "arm"

    def __post_init__(self):
        dh = np.ascontiguousarray(np.atleast_2d(self.dh), dtype=np.float64)
        n = dh.shape[0]
        if n < 1 or dh.shape[1] != 4:
            raise ValueError(f"dh must be (n>=1, 4), got {dh.shape}")
        mass = np.ascontiguousarray(self.mass, dtype=np.float64).reshape(n)
        com = np.ascontiguousarray(self.com, dtype=np.float64).reshape(n, 3)
        inertia = np.ascontiguousarray(self.inertia, dtype=np.float64).reshape(n, 3, 3)
        q_lower = np.ascontiguousarray(self.q_lower, dtype=np.float64).reshape(n)
        q_upper = np.ascontiguousarray(self.q_upper, dtype=np.float64).reshape(n)
        tau_limit = np.ascontiguousarray(self.tau_limit, dtype=np.float64).reshape(n)
        gravity = np.ascontiguousarray(self.gravity, dtype=np.float64).reshape(3)
        armature = self.armature
        if armature is None:
            armature = np.zeros(n)
        armature = np.ascontiguousarray(armature, dtype=np.float64).reshape(n)
        if np.any(mass <= 0.0):
            raise ValueError("link masses must be positive")
        if np.any(armature < 0.0):
            raise ValueError("armature inertias must be non-negative")
        if np.any(q_lower >= q_upper):
            raise ValueError("joint limits must satisfy lower < upper")
        for i in range(n):
            I = inertia[i]
            if not np.allclose(I, I.T, atol=1e-12):
                raise ValueError(f"inertia tensor of link {i} not symmetric")
            if np.any(np.linalg.eigvalsh(I) <= 0.0):
                raise ValueError(f"inertia tensor of link {i} not positive definite")
        q_home = self.q_home
        if q_home is not None:
            q_home = np.ascontiguousarray(q_home, dtype=np.float64).reshape(n)
        for key, val in (("dh", dh), ("mass", mass), ("com", com), ("inertia", inertia),
                         ("q_lower", q_lower), ("q_upper", q_upper),
                         ("tau_limit", tau_limit), ("gravity", gravity),
                         ("armature", armature), ("q_home", q_home)):
            if val is not None:
                val.setflags(write=False)
            object.__setattr__(self, key, val)

    @property
    def n(self) -> int:
        return self.dh.shape[0]

    def check_q(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.n:
            raise ValueError(f"expected {self.n} joint values, got {q.shape[0]}")
        return q

    def home(self) -> np.ndarray:
        if self.q_home is not None:
            return self.q_home.copy()
        return 0.5 * (self.q_lower + self.q_upper)


@dataclass
class JointState:
    """Instantaneous joint-space state."""

    q: np.ndarray
    dq: np.ndarray
    ddq: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64).reshape(-1)
        n = self.q.shape[0]
        self.dq = np.asarray(self.dq, dtype=np.float64).reshape(n)
        self.ddq = np.asarray(self.ddq, dtype=np.float64).reshape(n)
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.dq))
                and np.all(np.isfinite(self.ddq)) and np.isfinite(self.t)):
            raise ValueError("JointState entries must be finite")

    @classmethod
    def resting(cls, q, t: float = 0.0) -> "JointState":
        q = np.asarray(q, dtype=np.float64)
        return cls(q=q.copy(), dq=np.zeros_like(q), ddq=np.zeros_like(q), t=t)


@dataclass
class Pose:
    """Position plus unit quaternion (x, y, z, w)."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.orientation = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        nrm = np.linalg.norm(self.orientation)
        if abs(nrm - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {nrm} deviates from 1 by more than 1e-9")

    @classmethod
    def from_matrix(cls, R: np.ndarray, p: np.ndarray) -> "Pose":
        return cls(position=np.asarray(p, dtype=np.float64).copy(),
                   orientation=quat_from_mat(np.ascontiguousarray(R, dtype=np.float64)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(position=np.zeros(3), orientation=np.array([0.0, 0.0, 0.0, 1.0]))

    def rotation(self) -> np.ndarray:
        return mat_from_quat(self.orientation)

    def z_axis(self) -> np.ndarray:
        return self.rotation()[:, 2].copy()


@dataclass
class Wrench:
    """Force/moment pair with the frame it is expressed in."""

    force: np.ndarray
    moment: np.ndarray
    frame: str = "base"

    def __post_init__(self):
        self.force = np.asarray(self.force, dtype=np.float64).reshape(3)
        self.moment = np.asarray(self.moment, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(self.force)) and np.all(np.isfinite(self.moment))):
            raise ValueError("wrench entries must be finite")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.moment])

    @classmethod
    def zero(cls, frame: str = "base") -> "Wrench":
        return cls(np.zeros(3), np.zeros(3), frame)


# ---------------------------------------------------------------------------
# numba kernels (link-local DH recursions)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _link_rot_p(a, d, alpha, theta, R, p):
    """Rotation (frame i -> frame i-1 coords) and origin offset for one DH row.

    Writes into caller-owned buffers: every dynamics kernel evaluates this
    once per joint per control tick, so the transform must not allocate.
    """
    ct = np.cos(theta)
    st = np.sin(theta)
    ca = np.cos(alpha)
    sa = np.sin(alpha)
    R[0, 0] = ct
    R[0, 1] = -st * ca
    R[0, 2] = st * sa
    R[1, 0] = st
    R[1, 1] = ct * ca
    R[1, 2] = -ct * sa
    R[2, 0] = 0.0
    R[2, 1] = sa
    R[2, 2] = ca
    p[0] = a * ct
    p[1] = a * st
    p[2] = d


@njit(cache=True)
def fk_frames(dh, q):
    """World rotation and origin of every frame 0..n (frame 0 = base)."""
    n = dh.shape[0]
    Rw = np.empty((n + 1, 3, 3))
    pw = np.empty((n + 1, 3))
    for a in range(3):
        for b in range(3):
            Rw[0, a, b] = 1.0 if a == b else 0.0
        pw[0, a] = 0.0
    R = np.empty((3, 3))
    p = np.empty(3)
    for i in range(n):
        _link_rot_p(dh[i, 0], dh[i, 1], dh[i, 2], q[i] + dh[i, 3], R, p)
        for a in range(3):
            pw[i + 1, a] = (pw[i, a] + Rw[i, a, 0] * p[0]
                            + Rw[i, a, 1] * p[1] + Rw[i, a, 2] * p[2])
            for b in range(3):
                Rw[i + 1, a, b] = (Rw[i, a, 0] * R[0, b]
                                   + Rw[i, a, 1] * R[1, b]
                                   + Rw[i, a, 2] * R[2, b])
    return Rw, pw


@njit(cache=True)
def fk_ee(dh, q):
    Rw, pw = fk_frames(dh, q)
    n = dh.shape[0]
    return Rw[n].copy(), pw[n].copy()


@njit(cache=True)
def jacobian_kernel(dh, q):
    """Geometric Jacobian in the base frame, linear rows 0-2, angular rows 3-5."""
    n = dh.shape[0]
    Rw, pw = fk_frames(dh, q)
    J = np.empty((6, n))
    p_ee = pw[n]
    for k in range(n):
        z0 = Rw[k, 0, 2]
        z1 = Rw[k, 1, 2]
        z2 = Rw[k, 2, 2]
        r0 = p_ee[0] - pw[k, 0]
        r1 = p_ee[1] - pw[k, 1]
        r2 = p_ee[2] - pw[k, 2]
        J[0, k] = z1 * r2 - z2 * r1
        J[1, k] = z2 * r0 - z0 * r2
        J[2, k] = z0 * r1 - z1 * r0
        J[3, k] = z0
        J[4, k] = z1
        J[5, k] = z2
    return J


@njit(cache=True)
def rnea_kernel(dh, mass, com, inertia, armature, q, dq, ddq, gravity):
    """Inverse dynamics tau = M(q)ddq + c(q,dq) + g(q) by recursive Newton-Euler.

    Gravity enters as a fictitious base acceleration, so passing a zero
    gravity vector yields the pure inertial/velocity terms. Rotor inertia
    contributes armature[i] * ddq[i] on its own joint only.

    Runs twice per control tick per arm, so the three-vector algebra is
    written out as scalars: no temporaries, no library dispatch. The joint
    axis in frame i is (0, sin alpha, cos alpha), and the zero x component
    is folded out of the expressions.
    """
    n = dh.shape[0]
    Rs = np.empty((n, 3, 3))   # rotation frame i -> frame i-1
    ps = np.empty((n, 3))      # origin of frame i in frame i-1
    zs = np.empty((n, 2))      # joint axis (y, z) components in frame i
    rs = np.empty((n, 3))      # origin offset in frame i (fixed in link i)
    for i in range(n):
        _link_rot_p(dh[i, 0], dh[i, 1], dh[i, 2], q[i] + dh[i, 3],
                    Rs[i], ps[i])
        zs[i, 0] = np.sin(dh[i, 2])
        zs[i, 1] = np.cos(dh[i, 2])
        for a in range(3):
            rs[i, a] = (Rs[i, 0, a] * ps[i, 0] + Rs[i, 1, a] * ps[i, 1]
                        + Rs[i, 2, a] * ps[i, 2])

    Fs = np.empty((n, 3))
    Ns = np.empty((n, 3))
    w0 = 0.0
    w1 = 0.0
    w2 = 0.0
    d0 = 0.0
    d1 = 0.0
    d2 = 0.0
    a0 = -gravity[0]
    a1 = -gravity[1]
    a2 = -gravity[2]
    for i in range(n):
        R = Rs[i]
        zy = zs[i, 0]
        zz = zs[i, 1]
        qd = dq[i]
        # velocities and accelerations rotated into frame i
        wp0 = R[0, 0] * w0 + R[1, 0] * w1 + R[2, 0] * w2
        wp1 = R[0, 1] * w0 + R[1, 1] * w1 + R[2, 1] * w2
        wp2 = R[0, 2] * w0 + R[1, 2] * w1 + R[2, 2] * w2
        nw0 = wp0
        nw1 = wp1 + qd * zy
        nw2 = wp2 + qd * zz
        # dw = R^T dw_par + ddq z + w_par x (dq z)
        nd0 = (R[0, 0] * d0 + R[1, 0] * d1 + R[2, 0] * d2
               + qd * (wp1 * zz - wp2 * zy))
        nd1 = (R[0, 1] * d0 + R[1, 1] * d1 + R[2, 1] * d2 + ddq[i] * zy
               - qd * (wp0 * zz))
        nd2 = (R[0, 2] * d0 + R[1, 2] * d1 + R[2, 2] * d2 + ddq[i] * zz
               + qd * (wp0 * zy))
        # linear acceleration of origin i. The origin offset r is fixed in
        # link i (the DH translation rotates with the joint), so the shift
        # terms use the updated angular rates.
        r0 = rs[i, 0]
        r1 = rs[i, 1]
        r2 = rs[i, 2]
        t20 = nw1 * r2 - nw2 * r1
        t21 = nw2 * r0 - nw0 * r2
        t22 = nw0 * r1 - nw1 * r0
        na0 = (R[0, 0] * a0 + R[1, 0] * a1 + R[2, 0] * a2
               + (nd1 * r2 - nd2 * r1) + (nw1 * t22 - nw2 * t21))
        na1 = (R[0, 1] * a0 + R[1, 1] * a1 + R[2, 1] * a2
               + (nd2 * r0 - nd0 * r2) + (nw2 * t20 - nw0 * t22))
        na2 = (R[0, 2] * a0 + R[1, 2] * a1 + R[2, 2] * a2
               + (nd0 * r1 - nd1 * r0) + (nw0 * t21 - nw1 * t20))
        # com acceleration and the force/moment each link must see
        c = com[i]
        u20 = nw1 * c[2] - nw2 * c[1]
        u21 = nw2 * c[0] - nw0 * c[2]
        u22 = nw0 * c[1] - nw1 * c[0]
        Fs[i, 0] = mass[i] * (na0 + (nd1 * c[2] - nd2 * c[1])
                              + (nw1 * u22 - nw2 * u21))
        Fs[i, 1] = mass[i] * (na1 + (nd2 * c[0] - nd0 * c[2])
                              + (nw2 * u20 - nw0 * u22))
        Fs[i, 2] = mass[i] * (na2 + (nd0 * c[1] - nd1 * c[0])
                              + (nw0 * u21 - nw1 * u20))
        I = inertia[i]
        iw0 = I[0, 0] * nw0 + I[0, 1] * nw1 + I[0, 2] * nw2
        iw1 = I[1, 0] * nw0 + I[1, 1] * nw1 + I[1, 2] * nw2
        iw2 = I[2, 0] * nw0 + I[2, 1] * nw1 + I[2, 2] * nw2
        Ns[i, 0] = (I[0, 0] * nd0 + I[0, 1] * nd1 + I[0, 2] * nd2
                    + nw1 * iw2 - nw2 * iw1)
        Ns[i, 1] = (I[1, 0] * nd0 + I[1, 1] * nd1 + I[1, 2] * nd2
                    + nw2 * iw0 - nw0 * iw2)
        Ns[i, 2] = (I[2, 0] * nd0 + I[2, 1] * nd1 + I[2, 2] * nd2
                    + nw0 * iw1 - nw1 * iw0)
        w0 = nw0
        w1 = nw1
        w2 = nw2
        d0 = nd0
        d1 = nd1
        d2 = nd2
        a0 = na0
        a1 = na1
        a2 = na2

    tau = np.empty(n)
    f0 = 0.0
    f1 = 0.0
    f2 = 0.0
    n0 = 0.0
    n1 = 0.0
    n2 = 0.0
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            Rc = Rs[i + 1]
            pc = ps[i + 1]
            fc0 = Rc[0, 0] * f0 + Rc[0, 1] * f1 + Rc[0, 2] * f2
            fc1 = Rc[1, 0] * f0 + Rc[1, 1] * f1 + Rc[1, 2] * f2
            fc2 = Rc[2, 0] * f0 + Rc[2, 1] * f1 + Rc[2, 2] * f2
            nc0 = (Rc[0, 0] * n0 + Rc[0, 1] * n1 + Rc[0, 2] * n2
                   + pc[1] * fc2 - pc[2] * fc1)
            nc1 = (Rc[1, 0] * n0 + Rc[1, 1] * n1 + Rc[1, 2] * n2
                   + pc[2] * fc0 - pc[0] * fc2)
            nc2 = (Rc[2, 0] * n0 + Rc[2, 1] * n1 + Rc[2, 2] * n2
                   + pc[0] * fc1 - pc[1] * fc0)
        else:
            fc0 = 0.0
            fc1 = 0.0
            fc2 = 0.0
            nc0 = 0.0
            nc1 = 0.0
            nc2 = 0.0
        c = com[i]
        F0 = Fs[i, 0]
        F1 = Fs[i, 1]
        F2 = Fs[i, 2]
        f0 = fc0 + F0
        f1 = fc1 + F1
        f2 = fc2 + F2
        n0 = nc0 + (Ns[i, 0] + c[1] * F2 - c[2] * F1)
        n1 = nc1 + (Ns[i, 1] + c[2] * F0 - c[0] * F2)
        n2 = nc2 + (Ns[i, 2] + c[0] * F1 - c[1] * F0)
        # joint axis passes through origin i-1, offset r from origin i, so
        # the screw has linear component z x r alongside the angular z
        zy = zs[i, 0]
        zz = zs[i, 1]
        tau[i] = (n1 * zy + n2 * zz
                  + f0 * (zy * rs[i, 2] - zz * rs[i, 1])
                  + f1 * (zz * rs[i, 0])
                  - f2 * (zy * rs[i, 0])
                  + armature[i] * ddq[i])
    return tau


@njit(cache=True)
def crba_kernel(dh, mass, com, inertia, armature, q):
    """Joint-space mass matrix by the composite-rigid-body algorithm.

    Spatial vectors are ordered (angular, linear) and expressed in each
    link's own frame; composite inertias are folded toward the base. Like
    the Newton-Euler kernel this runs every control tick for both arms, so
    the spatial transforms are expanded into explicit loops over reused
    scratch buffers instead of matrix expressions.
    """
    n = dh.shape[0]
    Rs = np.empty((n, 3, 3))
    ps = np.empty((n, 3))
    Ss = np.empty((n, 6))      # joint screw (angular; linear) in frame i
    for i in range(n):
        _link_rot_p(dh[i, 0], dh[i, 1], dh[i, 2], q[i] + dh[i, 3],
                    Rs[i], ps[i])
        z1 = np.sin(dh[i, 2])
        z2 = np.cos(dh[i, 2])
        r0 = (Rs[i, 0, 0] * ps[i, 0] + Rs[i, 1, 0] * ps[i, 1]
              + Rs[i, 2, 0] * ps[i, 2])
        r1 = (Rs[i, 0, 1] * ps[i, 0] + Rs[i, 1, 1] * ps[i, 1]
              + Rs[i, 2, 1] * ps[i, 2])
        r2 = (Rs[i, 0, 2] * ps[i, 0] + Rs[i, 1, 2] * ps[i, 1]
              + Rs[i, 2, 2] * ps[i, 2])
        Ss[i, 0] = 0.0
        Ss[i, 1] = z1
        Ss[i, 2] = z2
        # axis through origin i-1: linear velocity at origin i is z x r
        Ss[i, 3] = z1 * r2 - z2 * r1
        Ss[i, 4] = z2 * r0
        Ss[i, 5] = -(z1 * r0)

    # spatial inertia of each link about its frame origin: upper-left the
    # rotational inertia shifted off the com, corners m*skew(c), lower-right
    # m*identity
    Ic = np.zeros((n, 6, 6))
    for i in range(n):
        c = com[i]
        m = mass[i]
        mc0 = m * c[0]
        mc1 = m * c[1]
        mc2 = m * c[2]
        Ic[i, 0, 0] = inertia[i, 0, 0] + m * (c[2] * c[2] + c[1] * c[1])
        Ic[i, 0, 1] = inertia[i, 0, 1] - m * (c[1] * c[0])
        Ic[i, 0, 2] = inertia[i, 0, 2] - m * (c[2] * c[0])
        Ic[i, 1, 0] = inertia[i, 1, 0] - m * (c[1] * c[0])
        Ic[i, 1, 1] = inertia[i, 1, 1] + m * (c[2] * c[2] + c[0] * c[0])
        Ic[i, 1, 2] = inertia[i, 1, 2] - m * (c[2] * c[1])
        Ic[i, 2, 0] = inertia[i, 2, 0] - m * (c[2] * c[0])
        Ic[i, 2, 1] = inertia[i, 2, 1] - m * (c[2] * c[1])
        Ic[i, 2, 2] = inertia[i, 2, 2] + m * (c[1] * c[1] + c[0] * c[0])
        Ic[i, 0, 4] = -mc2
        Ic[i, 0, 5] = mc1
        Ic[i, 1, 3] = mc2
        Ic[i, 1, 5] = -mc0
        Ic[i, 2, 3] = -mc1
        Ic[i, 2, 4] = mc0
        Ic[i, 3, 1] = mc2
        Ic[i, 3, 2] = -mc1
        Ic[i, 4, 0] = -mc2
        Ic[i, 4, 2] = mc0
        Ic[i, 5, 0] = mc1
        Ic[i, 5, 1] = -mc0
        Ic[i, 3, 3] = m
        Ic[i, 4, 4] = m
        Ic[i, 5, 5] = m

    # fold subtree inertias toward the base: Ic[i-1] += Xf Ic[i] Xm
    Xf = np.zeros((6, 6))          # force transform frame i -> frame i-1
    Xm = np.zeros((6, 6))          # motion transform frame i-1 -> frame i
    T = np.empty((6, 6))
    for i in range(n - 1, 0, -1):
        R = Rs[i]
        p = ps[i]
        for a in range(3):
            for b in range(3):
                Xf[a, b] = R[a, b]
                Xf[3 + a, 3 + b] = R[a, b]
                Xm[a, b] = R[b, a]
                Xm[3 + a, 3 + b] = R[b, a]
        for b in range(3):
            # upper-right of Xf is skew(p) @ R
            Xf[0, 3 + b] = p[1] * R[2, b] - p[2] * R[1, b]
            Xf[1, 3 + b] = p[2] * R[0, b] - p[0] * R[2, b]
            Xf[2, 3 + b] = p[0] * R[1, b] - p[1] * R[0, b]
        for a in range(3):
            # lower-left of Xm is -R^T @ skew(p)
            Xm[3 + a, 0] = p[1] * R[2, a] - p[2] * R[1, a]
            Xm[3 + a, 1] = p[2] * R[0, a] - p[0] * R[2, a]
            Xm[3 + a, 2] = p[0] * R[1, a] - p[1] * R[0, a]
        for a in range(6):
            for b in range(6):
                s = 0.0
                for k in range(6):
                    s += Ic[i, a, k] * Xm[k, b]
                T[a, b] = s
        for a in range(6):
            for b in range(6):
                s = 0.0
                for k in range(6):
                    s += Xf[a, k] * T[k, b]
                Ic[i - 1, a, b] += s

    M = np.zeros((n, n))
    F = np.empty(6)
    for i in range(n):
        for a in range(6):
            s = 0.0
            for k in range(6):
                s += Ic[i, a, k] * Ss[i, k]
            F[a] = s
        d = 0.0
        for k in range(6):
            d += Ss[i, k] * F[k]
        M[i, i] = d + armature[i]
        j = i
        while j > 0:
            R = Rs[j]
            p = ps[j]
            g0 = R[0, 0] * F[3] + R[0, 1] * F[4] + R[0, 2] * F[5]
            g1 = R[1, 0] * F[3] + R[1, 1] * F[4] + R[1, 2] * F[5]
            g2 = R[2, 0] * F[3] + R[2, 1] * F[4] + R[2, 2] * F[5]
            h0 = (R[0, 0] * F[0] + R[0, 1] * F[1] + R[0, 2] * F[2]
                  + p[1] * g2 - p[2] * g1)
            h1 = (R[1, 0] * F[0] + R[1, 1] * F[1] + R[1, 2] * F[2]
                  + p[2] * g0 - p[0] * g2)
            h2 = (R[2, 0] * F[0] + R[2, 1] * F[1] + R[2, 2] * F[2]
                  + p[0] * g1 - p[1] * g0)
            F[0] = h0
            F[1] = h1
            F[2] = h2
            F[3] = g0
            F[4] = g1
            F[5] = g2
            j -= 1
            d = 0.0
            for k in range(6):
                d += F[k] * Ss[j, k]
            M[i, j] = d
            M[j, i] = d
    return M


@njit(cache=True)
def chol_factor_kernel(A):
    """Lower-triangular Cholesky factor of a symmetric positive-definite matrix.

    The matrices this sees are tiny (joint-space mass matrices, squared
    Jacobians), so explicit loops beat a LAPACK round trip: the factor is
    computed once per control tick and reused for every substep solve.
    """
    n = A.shape[0]
    L = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                L[i, j] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    return L


@njit(cache=True)
def chol_solve_kernel(L, b):
    """Solve ``L L^T x = b`` by forward and back substitution."""
    n = b.shape[0]
    y = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


@njit(cache=True)
def fwd_dyn_kernel(dh, mass, com, inertia, armature, gravity, q, dq, tau_c, tau_ext):
    M = crba_kernel(dh, mass, com, inertia, armature, q)
    zero = np.zeros_like(q)
    nog = np.zeros(3)
    c = rnea_kernel(dh, mass, com, inertia, armature, q, dq, zero, nog)
    g = rnea_kernel(dh, mass, com, inertia, armature, q, zero, zero, gravity)
    rhs = tau_c + tau_ext - c - g
    return np.linalg.solve(M, rhs)


@njit(cache=True)
def step_kernel(dh, mass, com, inertia, armature, gravity, q_lower, q_upper,
                q, dq, tau_c, tau_ext, dt):
    """Semi-implicit Euler step with joint-limit clamping.

    Returns (q', dq', ddq, clamped) where clamped flags axes that hit a limit.
    """
    ddq = fwd_dyn_kernel(dh, mass, com, inertia, armature, gravity,
                         q, dq, tau_c, tau_ext)
    n = q.shape[0]
    dq_new = dq + ddq * dt
    q_new = q + dq_new * dt
    clamped = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        if q_new[i] > q_upper[i]:
            q_new[i] = q_upper[i]
            if dq_new[i] > 0.0:
                dq_new[i] = 0.0
            clamped[i] = True
        elif q_new[i] < q_lower[i]:
            q_new[i] = q_lower[i]
            if dq_new[i] < 0.0:
                dq_new[i] = 0.0
            clamped[i] = True
    return q_new, dq_new, ddq, clamped


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def forward_kinematics(model: ManipulatorModel, q) -> Pose:
    """End-effector pose by DH chain composition."""
    q = model.check_q(q)
    R, p = fk_ee(model.dh, q)
    return Pose.from_matrix(R, p)


def geometric_jacobian(model: ManipulatorModel, q) -> np.ndarray:
    """6xn base-frame Jacobian, linear velocity rows first."""
    q = model.check_q(q)
    return jacobian_kernel(model.dh, q)


def mass_matrix(model: ManipulatorModel, q) -> np.ndarray:
    q = model.check_q(q)
    return crba_kernel(model.dh, model.mass, model.com, model.inertia,
                       model.armature, q)


def bias_forces(model: ManipulatorModel, q, dq) -> np.ndarray:
    """Coriolis/centrifugal torques c(q, dq)."""
    q = model.check_q(q)
    dq = model.check_q(dq)
    zero = np.zeros_like(q)
    return rnea_kernel(model.dh, model.mass, model.com, model.inertia,
                       model.armature, q, dq, zero, np.zeros(3))


def gravity_torques(model: ManipulatorModel, q) -> np.ndarray:
    q = model.check_q(q)
    zero = np.zeros_like(q)
    return rnea_kernel(model.dh, model.mass, model.com, model.inertia,
                       model.armature, q, zero, zero, model.gravity)


def inverse_dynamics(model: ManipulatorModel, q, dq, ddq) -> np.ndarray:
    """Full Newton-Euler inverse dynamics M ddq + c + g."""
    q = model.check_q(q)
    dq = model.check_q(dq)
    ddq = model.check_q(ddq)
    return rnea_kernel(model.dh, model.mass, model.com, model.inertia,
                       model.armature, q, dq, ddq, model.gravity)


def forward_dynamics(model: ManipulatorModel, q, dq, tau_c, tau_ext) -> np.ndarray:
    """Joint accelerations from commanded plus external torque."""
    q = model.check_q(q)
    dq = model.check_q(dq)
    tau_c = model.check_q(tau_c)
    tau_ext = model.check_q(tau_ext)
    return fwd_dyn_kernel(model.dh, model.mass, model.com, model.inertia,
                          model.armature, model.gravity, q, dq, tau_c, tau_ext)


def step(model: ManipulatorModel, state: JointState, tau_c, tau_ext, dt: float) -> JointState:
    """Advance one semi-implicit Euler step; joint limits clamp with dq zeroed."""
    if not (dt > 0.0 and dt <= MAX_STEP_DT):
        raise ValueError(f"dt must be in (0, {MAX_STEP_DT}], got {dt}")
    tau_c = model.check_q(tau_c)
    tau_ext = model.check_q(tau_ext)
    if not (np.all(np.isfinite(tau_c)) and np.all(np.isfinite(tau_ext))):
        raise ValueError("torque inputs must be finite")
    q_new, dq_new, ddq, clamped = step_kernel(
        model.dh, model.mass, model.com, model.inertia, model.armature,
        model.gravity, model.q_lower, model.q_upper,
        state.q, state.dq, tau_c, tau_ext, dt)
    if np.any(clamped):
        log.debug("joint limit clamp on axes %s at t=%.4f",
                  np.nonzero(clamped)[0].tolist(), state.t + dt)
    return JointState(q=q_new, dq=dq_new, ddq=ddq, t=state.t + dt)


# ---------------------------------------------------------------------------
# model loading
# ---------------------------------------------------------------------------

def model_from_dict(data: dict) -> ManipulatorModel:
    links = data["links"]
    n = len(links)
    dh = np.zeros((n, 4))
    mass = np.zeros(n)
    com = np.zeros((n, 3))
    inertia = np.zeros((n, 3, 3))
    q_lower = np.zeros(n)
    q_upper = np.zeros(n)
    tau_limit = np.zeros(n)
    armature = np.zeros(n)
    for i, lk in enumerate(links):
        dh[i] = [lk["a"], lk["d"], lk["alpha"], lk.get("theta_offset", 0.0)]
        mass[i] = lk["mass"]
        com[i] = lk["com"]
        inr = np.asarray(lk["inertia"], dtype=np.float64)
        inertia[i] = np.diag(inr) if inr.ndim == 1 else inr
        q_lower[i] = lk["q_lower"]
        q_upper[i] = lk["q_upper"]
        tau_limit[i] = lk["tau_limit"]
        armature[i] = lk.get("armature", 0.0)
    q_home = data.get("q_home")
    return ManipulatorModel(
        dh=dh, mass=mass, com=com, inertia=inertia,
        q_lower=q_lower, q_upper=q_upper, tau_limit=tau_limit,
        gravity=np.asarray(data.get("gravity", [0.0, 0.0, -9.81]), dtype=np.float64),
        armature=armature,
        q_home=None if q_home is None else np.asarray(q_home, dtype=np.float64),
        name=data.get("name", "arm"),
    )


def load_model(path) -> ManipulatorModel:
    """Load a manipulator description from a YAML file."""
    with open(path) as f:
        data = yaml.safe_load(f)
    return model_from_dict(data)


def default_model() -> ManipulatorModel:
    """The 7-DoF arm shipped with the package (nominal inertial values)."""
    return load_model(Path(__file__).parent / "data" / "arm7_nominal.yaml")
