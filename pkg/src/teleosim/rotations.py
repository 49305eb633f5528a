"""Minimal rotation helpers shared by the kinematics, controllers and contact code.

Quaternions use scalar-last (x, y, z, w) ordering, matching scipy's
``Rotation.as_quat``. Everything here is numba-compiled so the same
arithmetic can run inside the hot simulation loop.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def cross3(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def skew(v):
    out = np.zeros((3, 3))
    out[0, 1] = -v[2]
    out[0, 2] = v[1]
    out[1, 0] = v[2]
    out[1, 2] = -v[0]
    out[2, 0] = -v[1]
    out[2, 1] = v[0]
    return out


@njit(cache=True)
def quat_from_mat(R):
    """Rotation matrix to unit quaternion (x, y, z, w), Shepperd's method."""
    q = np.empty(4)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q[3] = 0.25 * s
        q[0] = (R[2, 1] - R[1, 2]) / s
        q[1] = (R[0, 2] - R[2, 0]) / s
        q[2] = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q[3] = (R[2, 1] - R[1, 2]) / s
        q[0] = 0.25 * s
        q[1] = (R[0, 1] + R[1, 0]) / s
        q[2] = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q[3] = (R[0, 2] - R[2, 0]) / s
        q[0] = (R[0, 1] + R[1, 0]) / s
        q[1] = 0.25 * s
        q[2] = (R[1, 2] + R[2, 1]) / s
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q[3] = (R[1, 0] - R[0, 1]) / s
        q[0] = (R[0, 2] + R[2, 0]) / s
        q[1] = (R[1, 2] + R[2, 1]) / s
        q[2] = 0.25 * s
    # normalize; keep w >= 0 so equal rotations encode identically
    n = np.sqrt(q[0] ** 2 + q[1] ** 2 + q[2] ** 2 + q[3] ** 2)
    q /= n
    if q[3] < 0.0:
        q = -q
    return q


@njit(cache=True)
def mat_from_quat(q):
    """Unit quaternion (x, y, z, w) to rotation matrix."""
    x, y, z, w = q[0], q[1], q[2], q[3]
    R = np.empty((3, 3))
    R[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[0, 1] = 2.0 * (x * y - z * w)
    R[0, 2] = 2.0 * (x * z + y * w)
    R[1, 0] = 2.0 * (x * y + z * w)
    R[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[1, 2] = 2.0 * (y * z - x * w)
    R[2, 0] = 2.0 * (x * z - y * w)
    R[2, 1] = 2.0 * (y * z + x * w)
    R[2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


@njit(cache=True)
def quat_mul(a, b):
    """Hamilton product a*b for (x, y, z, w) quaternions."""
    ax, ay, az, aw = a[0], a[1], a[2], a[3]
    bx, by, bz, bw = b[0], b[1], b[2], b[3]
    out = np.empty(4)
    out[0] = aw * bx + ax * bw + ay * bz - az * by
    out[1] = aw * by - ax * bz + ay * bw + az * bx
    out[2] = aw * bz + ax * by - ay * bx + az * bw
    out[3] = aw * bw - ax * bx - ay * by - az * bz
    return out


@njit(cache=True)
def mat_from_axis_angle(axis, angle):
    """Rodrigues rotation about a unit axis."""
    c = np.cos(angle)
    s = np.sin(angle)
    t = 1.0 - c
    x, y, z = axis[0], axis[1], axis[2]
    R = np.empty((3, 3))
    R[0, 0] = t * x * x + c
    R[0, 1] = t * x * y - s * z
    R[0, 2] = t * x * z + s * y
    R[1, 0] = t * x * y + s * z
    R[1, 1] = t * y * y + c
    R[1, 2] = t * y * z - s * x
    R[2, 0] = t * x * z - s * y
    R[2, 1] = t * y * z + s * x
    R[2, 2] = t * z * z + c
    return R


@njit(cache=True)
def rotvec_from_mat(R):
    """Axis-angle vector (rotation log) of a rotation matrix, angle in [0, pi]."""
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    cos_th = 0.5 * (tr - 1.0)
    if cos_th > 1.0:
        cos_th = 1.0
    elif cos_th < -1.0:
        cos_th = -1.0
    theta = np.arccos(cos_th)
    out = np.empty(3)
    if theta < 1e-10:
        # first-order: skew part already is the rotation vector
        out[0] = 0.5 * (R[2, 1] - R[1, 2])
        out[1] = 0.5 * (R[0, 2] - R[2, 0])
        out[2] = 0.5 * (R[1, 0] - R[0, 1])
        return out
    if theta > np.pi - 1e-6:
        # near pi the skew part vanishes; take axis from the symmetric part
        xx = np.sqrt(max(0.0, (R[0, 0] + 1.0) * 0.5))
        yy = np.sqrt(max(0.0, (R[1, 1] + 1.0) * 0.5))
        zz = np.sqrt(max(0.0, (R[2, 2] + 1.0) * 0.5))
        if xx >= yy and xx >= zz:
            if xx < 1e-12:
                xx = 1e-12
            out[0] = xx
            out[1] = R[0, 1] / (2.0 * xx)
            out[2] = R[0, 2] / (2.0 * xx)
        elif yy >= zz:
            out[1] = yy
            out[0] = R[0, 1] / (2.0 * yy)
            out[2] = R[1, 2] / (2.0 * yy)
        else:
            out[2] = zz
            out[0] = R[0, 2] / (2.0 * zz)
            out[1] = R[1, 2] / (2.0 * zz)
        n = np.sqrt(out[0] ** 2 + out[1] ** 2 + out[2] ** 2)
        return out / n * theta
    s = 2.0 * np.sin(theta)
    out[0] = (R[2, 1] - R[1, 2]) / s * theta
    out[1] = (R[0, 2] - R[2, 0]) / s * theta
    out[2] = (R[1, 0] - R[0, 1]) / s * theta
    return out


@njit(cache=True)
def normalize(v):
    n = np.sqrt(np.sum(v * v))
    return v / n
