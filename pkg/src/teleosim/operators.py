"""Operator intent sources: scripted virtual operators and a live-input adapter.

Both act as an external wrench applied by a virtual hand at the leader
end-effector. The scripted operator is an impedance policy toward task
waypoints with seeded perception noise, physiological tremor and delayed
compliance to felt forces — the mechanism by which force feedback changes
outcomes in batch experiments. The adapter converts streamed velocity
commands from a UI into the same impedance mapping with a dead-man timeout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .environment import ContactParams, TaskConfig, TaskGeometry, task_geometry
from .kinodynamics import Pose, chol_factor_kernel, chol_solve_kernel

FORCE_CLAMP = 40.0        # N
MOMENT_CLAMP = 8.0        # N*m

HAND_STIFFNESS = 600.0    # N/m
HAND_DAMPING = 80.0       # N*s/m
HAND_ROT_STIFFNESS = 10.0  # N*m/rad
HAND_ROT_DAMPING = 1.0     # N*m*s/rad

COMPLIANCE_GAIN = 0.5e-3  # m per N of felt lateral force
# corrective compliance follows sustained pressure only: the felt lateral
# force is low-passed with this time constant, so scrub/assist vibration
# does not pump the reference around
COMPLIANCE_TAU = 2.0      # s

APPROACH_SPEED = 0.15     # m/s toward the hole mouth
PUSH_SPEED = 0.05         # m/s descent once the approach has settled
SETTLE_DWELL = 1.5        # s hold at the mouth before pushing down
PUSH_RAMP = 1.0           # s to reach full descent speed (soft touchdown)
# during descent the reference never leads the hand by more than this along
# the push axis, capping the sustained insertion force at
# HAND_STIFFNESS * PUSH_LEAD; a blocked peg is pressed, not rammed
PUSH_LEAD = 0.02          # m
# until the hand has visibly advanced past the perceived mouth the press is
# kept light (search touch); firm pressure waits for the peg to be captured
PUSH_LEAD_SEARCH = PUSH_LEAD / 6.0
ENTRY_PROGRESS = 0.01     # m of post-touchdown advance that signals capture
# the approach waypoint leaves the tip this far above the perceived mouth so
# the fly-in never scuffs the surface; the descent phase covers the gap
HOVER_CLEARANCE = 0.01    # m
# while the peg presses without advancing, the hand spirals around the
# perceived target so the tip sweeps the surrounding surface for the mouth;
# the radius grows from zero to SEARCH_RADIUS over SEARCH_TURNS orbits and
# restarts, so every ring of the error disc is revisited regardless of how
# much surface friction shrinks the realized path
SEARCH_RADIUS = 0.005     # m
SEARCH_HZ = 0.4           # orbits per second
SEARCH_TURNS = 3          # orbits per outward sweep
# each sweep ends with a short lift that glides back over the perceived
# center: a wedged or rim-caught tip is pulled free and the press re-lands
# on the center with the accumulated elastic sag released
RETRY_LIFT = 0.006        # m
RETRY_FRACTION = 0.25     # trailing share of a sweep spent lifted

_MODE_CODES = {"unilateral": 0, "bilateral": 1, "shared": 2}


@dataclass(frozen=True)
class OperatorWrench:
    """Hand wrench at the leader EE, clamped to safe actuation limits."""

    wrench: np.ndarray
    clamped: bool = False
    force_limit: float = FORCE_CLAMP
    moment_limit: float = MOMENT_CLAMP

    def __post_init__(self):
        w = np.asarray(self.wrench, dtype=np.float64).reshape(6)
        if not np.all(np.isfinite(w)):
            raise ValueError("operator wrench must be finite")
        if np.linalg.norm(w[:3]) > self.force_limit * (1 + 1e-9):
            raise ValueError("operator force exceeds clamp")
        if np.linalg.norm(w[3:]) > self.moment_limit * (1 + 1e-9):
            raise ValueError("operator moment exceeds clamp")
        w.setflags(write=False)
        object.__setattr__(self, "wrench", w)

    @classmethod
    def zero(cls) -> "OperatorWrench":
        return cls(np.zeros(6))


@dataclass(frozen=True)
class NoiseModel:
    """Synthetic perception and motor noise of one operator.

    perception_offset_mm bounds a per-trial systematic misjudgment of the
    hole position (componentwise uniform draw); angular_misalignment bounds
    a per-trial tilt of the pushed insertion axis; tremor is band-limited
    force noise at the hand.
    """

    perception_offset_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)
    tremor_amp: float = 0.0
    tremor_band_hz: float = 9.0
    angular_misalignment: float = 0.0
    seed: int = 0

    def __post_init__(self):
        off = tuple(float(v) for v in self.perception_offset_mm)
        if len(off) != 3 or any(v < 0 for v in off):
            raise ValueError("perception_offset_mm must be 3 non-negative values")
        object.__setattr__(self, "perception_offset_mm", off)
        for name in ("tremor_amp", "tremor_band_hz", "angular_misalignment"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if int(self.seed) < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class OperatorProfile:
    """Skill preset: noise magnitudes plus reaction latency to felt forces."""

    name: str
    noise: NoiseModel
    reaction_latency: float

    def __post_init__(self):
        if self.reaction_latency < 0:
            raise ValueError("reaction_latency must be non-negative")


def operator_profile(skill: str, seed: int = 0) -> OperatorProfile:
    """Shipped presets; noise shrinks monotonically with skill."""
    presets = {
        "novice": (dict(perception_offset_mm=(3.5, 3.5, 1.5), tremor_amp=0.8,
                        tremor_band_hz=10.0, angular_misalignment=0.020), 0.40),
        "intermediate": (dict(perception_offset_mm=(2.0, 2.0, 1.0), tremor_amp=0.5,
                              tremor_band_hz=9.0, angular_misalignment=0.012), 0.25),
        "expert": (dict(perception_offset_mm=(1.0, 1.0, 0.5), tremor_amp=0.3,
                        tremor_band_hz=8.0, angular_misalignment=0.006), 0.15),
    }
    if skill not in presets:
        raise KeyError(f"unknown skill {skill!r}; expected one of {sorted(presets)}")
    noise_kwargs, latency = presets[skill]
    return OperatorProfile(name=skill, noise=NoiseModel(seed=seed, **noise_kwargs),
                           reaction_latency=latency)


@njit(cache=True)
def _tremor_eval(amp, freqs, phases, t):
    out = np.zeros(3)
    if amp == 0.0:
        return out
    for axis in range(3):
        s = 0.0
        for k in range(freqs.shape[1]):
            s += np.sin(2.0 * np.pi * freqs[axis, k] * t + phases[axis, k])
        out[axis] = 0.5 * amp * s
    return out


@njit(cache=True)
def felt_wrench_kernel(J, tau):
    """Wrench at the hand that reproduces joint torques tau: pinv(J^T) tau.

    Solved as (J J^T + eps I) w = J tau; the regularization keeps the map
    defined at kinematic singularities.
    """
    A = J @ J.T
    for i in range(6):
        A[i, i] += 1e-9
    return chol_solve_kernel(chol_factor_kernel(A), J @ tau)


@njit(cache=True)
def scripted_tick_kernel(
        t, mode_code,
        tip, z_ee, v_lin, w_ang, J, felt_tau,
        p_start, hover, push_dir, t_descend,
        approach_speed, push_speed, push_ramp,
        push_lead, push_lead_search, entry_progress,
        search_e1, search_e2, search_radius, search_hz, search_turns,
        retry_lift, retry_fraction,
        k_h, d_h, k_rot, d_rot,
        tremor_amp, tremor_freqs, tremor_phases,
        comp_gain, comp_lp, comp_beta, latency,
        ring_t, ring_f, ring_idx,
        clamp_f, clamp_m):
    """One scripted-operator control tick; mutates the felt-force delay line.

    The motion plan is a pure function of time in TOOL-TIP coordinates:
    straight line from p_start to the hover point, a settle dwell, then
    steady descent along push_dir. ``tip`` is the tool point the operator
    watches (the remote peg tip), so the hand spring closes a visual servo
    loop: it pulls the seen tip toward the planned tip no matter how
    guidance torques or contact deflections re-orient the peg. During
    descent the press leans in only while the seen tip has stalled; a
    gliding peg is guided, not shoved. ring_t/ring_f/ring_idx implement the
    reaction-latency delay on felt lateral forces (idx holds write position,
    fill count, read position); comp_lp holds the low-passed delayed force
    the compliance tracks. Returns (wrench6, clamped_flag).
    """
    comp_x = 0.0
    comp_y = 0.0
    if mode_code != 0:
        w_felt = felt_wrench_kernel(J, felt_tau)
        cap = ring_t.shape[0]
        wpos = ring_idx[0]
        ring_t[wpos] = t
        ring_f[wpos, 0] = w_felt[0]
        ring_f[wpos, 1] = w_felt[1]
        ring_idx[0] = (wpos + 1) % cap
        if ring_idx[1] < cap:
            ring_idx[1] += 1
        # newest sample at least `latency` old; read pointer only advances
        rpos = ring_idx[2]
        filled = ring_idx[1]
        oldest = (ring_idx[0] - filled) % cap
        if rpos < 0:
            rpos = oldest
        found = -1
        steps = 0
        pos = rpos
        while steps < filled:
            if ring_t[pos] <= t - latency:
                found = pos
                pos = (pos + 1) % cap
                steps += 1
            else:
                break
        if found >= 0:
            ring_idx[2] = found
            comp_lp[0] = comp_beta * comp_lp[0] \
                + (1.0 - comp_beta) * ring_f[found, 0]
            comp_lp[1] = comp_beta * comp_lp[1] \
                + (1.0 - comp_beta) * ring_f[found, 1]
            comp_x = comp_gain * comp_lp[0]
            comp_y = comp_gain * comp_lp[1]

    # waypoint reference for the tool tip
    p_ref = np.empty(3)
    if t >= t_descend:
        # descent speed ramps in over push_ramp seconds (soft touchdown)
        tau = t - t_descend
        if push_ramp > 0.0 and tau < push_ramp:
            tau_d = push_speed * tau * tau / (2.0 * push_ramp)
        else:
            tau_d = push_speed * (tau - 0.5 * push_ramp)
        p_ref[0] = hover[0] + tau_d * push_dir[0]
        p_ref[1] = hover[1] + tau_d * push_dir[1]
        p_ref[2] = hover[2] + tau_d * push_dir[2]
        # light search touch until the tip has visibly advanced past the
        # mouth, and during insertion whenever the tip is moving; the full
        # press is reserved for a captured peg that has stopped descending
        progress = ((tip[0] - hover[0]) * push_dir[0]
                    + (tip[1] - hover[1]) * push_dir[1]
                    + (tip[2] - hover[2]) * push_dir[2])
        entered = progress > entry_progress
        lead = push_lead_search
        if entered:
            v_along = (v_lin[0] * push_dir[0] + v_lin[1] * push_dir[1]
                       + v_lin[2] * push_dir[2])
            stall = 1.0 - v_along / (0.5 * push_speed)
            if stall < 0.0:
                stall = 0.0
            elif stall > 1.0:
                stall = 1.0
            lead += (push_lead - push_lead_search) * stall
        along = ((p_ref[0] - tip[0]) * push_dir[0]
                 + (p_ref[1] - tip[1]) * push_dir[1]
                 + (p_ref[2] - tip[2]) * push_dir[2])
        if along > lead:
            excess = along - lead
            p_ref[0] -= excess * push_dir[0]
            p_ref[1] -= excess * push_dir[1]
            p_ref[2] -= excess * push_dir[2]
        if not entered and tau > push_ramp and search_radius > 0.0:
            # pressing without progress: spiral about the perceived target,
            # sweeping radius 0..search_radius, then lift and glide back so
            # a caught tip is freed and the press re-lands on the center
            phi = 2.0 * np.pi * search_hz * (tau - push_ramp)
            sweep = phi / (2.0 * np.pi * search_turns)
            s = sweep - np.floor(sweep)
            f_press = 1.0 - retry_fraction
            if s < f_press:
                r_s = search_radius * (s / f_press)
            else:
                u = (s - f_press) / retry_fraction
                r_s = search_radius * (1.0 - u)
                bump = retry_lift * np.sin(np.pi * u)
                p_ref[0] -= bump * push_dir[0]
                p_ref[1] -= bump * push_dir[1]
                p_ref[2] -= bump * push_dir[2]
            sx = r_s * np.cos(phi)
            sy = r_s * np.sin(phi)
            p_ref[0] += sx * search_e1[0] + sy * search_e2[0]
            p_ref[1] += sx * search_e1[1] + sy * search_e2[1]
            p_ref[2] += sx * search_e1[2] + sy * search_e2[2]
    else:
        d0 = hover[0] - p_start[0]
        d1 = hover[1] - p_start[1]
        d2 = hover[2] - p_start[2]
        dist = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        frac = 1.0
        if dist > 1e-12:
            frac = min(1.0, approach_speed * t / dist)
        p_ref[0] = p_start[0] + frac * d0
        p_ref[1] = p_start[1] + frac * d1
        p_ref[2] = p_start[2] + frac * d2
    p_ref[0] += comp_x
    p_ref[1] += comp_y

    tremor = _tremor_eval(tremor_amp, tremor_freqs, tremor_phases, t)
    wrench = np.zeros(6)
    for i in range(3):
        wrench[i] = k_h * (p_ref[i] - tip[i]) - d_h * v_lin[i] + tremor[i]

    # hold the peg axis along the (misperceived) insertion direction
    cx = z_ee[1] * push_dir[2] - z_ee[2] * push_dir[1]
    cy = z_ee[2] * push_dir[0] - z_ee[0] * push_dir[2]
    cz = z_ee[0] * push_dir[1] - z_ee[1] * push_dir[0]
    wrench[3] = k_rot * cx - d_rot * w_ang[0]
    wrench[4] = k_rot * cy - d_rot * w_ang[1]
    wrench[5] = k_rot * cz - d_rot * w_ang[2]

    clamped = 0
    fn = np.sqrt(wrench[0] ** 2 + wrench[1] ** 2 + wrench[2] ** 2)
    if fn > clamp_f:
        s = clamp_f / fn
        wrench[0] *= s
        wrench[1] *= s
        wrench[2] *= s
        clamped = 1
    mn = np.sqrt(wrench[3] ** 2 + wrench[4] ** 2 + wrench[5] ** 2)
    if mn > clamp_m:
        s = clamp_m / mn
        wrench[3] *= s
        wrench[4] *= s
        wrench[5] *= s
        clamped = 1
    return wrench, clamped


class ScriptedOperator:
    """Deterministic virtual operator for one trial.

    Per-seed draws fix the perceived hole offset, the pushed-axis tilt and
    the tremor spectrum up front; the per-tick policy is then a pure function
    of time, leader state and (in modes with feedback) the felt torque.
    """

    def __init__(self, profile: OperatorProfile, mode: str, task: TaskConfig,
                 p_start, seed: int | None = None, dt: float = 1e-3,
                 geometry: TaskGeometry | None = None, z_start=(0.0, 0.0, 1.0)):
        if mode not in _MODE_CODES:
            raise ValueError(f"mode must be one of {sorted(_MODE_CODES)}, got {mode!r}")
        self.profile = profile
        self.mode = mode
        self.mode_code = _MODE_CODES[mode]
        self.task = task
        noise = profile.noise
        rng = np.random.default_rng(noise.seed if seed is None else seed)

        off_mm = np.asarray(noise.perception_offset_mm)
        self.perception_offset = rng.uniform(-off_mm, off_mm) * 1e-3 \
            if off_mm.any() else np.zeros(3)
        tilt = rng.uniform(0.0, noise.angular_misalignment)
        azimuth = rng.uniform(0.0, 2.0 * np.pi)
        self.tremor_freqs = noise.tremor_band_hz * rng.uniform(0.7, 1.3, (3, 2))
        self.tremor_phases = rng.uniform(0.0, 2.0 * np.pi, (3, 2))

        geo = geometry if geometry is not None else task_geometry(task, ContactParams())
        insertion = geo.R_hole @ np.array([0.0, 0.0, 1.0])
        axis = np.cos(azimuth) * geo.R_hole[:, 0] + np.sin(azimuth) * geo.R_hole[:, 1]
        self.push_dir = _rotate_about(insertion, axis, tilt)
        self.peg_length = geo.peg_length
        # the plan lives in tool-tip coordinates: tip waypoint just above the
        # perceived mouth, and the start converted from the flange pose
        self.hover = (geo.p_hole + self.perception_offset
                      - HOVER_CLEARANCE * insertion)
        self.entry_progress = HOVER_CLEARANCE + ENTRY_PROGRESS
        # orbit plane for the pressing search, perpendicular to the push
        helper = np.zeros(3)
        helper[int(np.argmin(np.abs(self.push_dir)))] = 1.0
        e1 = np.cross(self.push_dir, helper)
        self.search_e1 = e1 / np.linalg.norm(e1)
        self.search_e2 = np.cross(self.push_dir, self.search_e1)
        flange = np.asarray(p_start, dtype=np.float64).reshape(3)
        z0 = np.asarray(z_start, dtype=np.float64).reshape(3)
        self.p_start = flange + self.peg_length * z0
        dist = float(np.linalg.norm(self.hover - self.p_start))
        self.t_descend = dist / APPROACH_SPEED + SETTLE_DWELL

        cap = max(int(np.ceil(profile.reaction_latency / dt)) + 8, 16)
        self._ring_t = np.full(cap, -np.inf)
        self._ring_f = np.zeros((cap, 2))
        self._ring_idx = np.array([0, 0, -1], dtype=np.int64)
        self._comp_lp = np.zeros(2)
        self._comp_beta = float(np.exp(-dt / COMPLIANCE_TAU))

    def step(self, pose: Pose, twist, J, felt_tau, now: float,
             tip_seen=None) -> OperatorWrench:
        """Hand wrench for this tick; twist is the 6-vector EE velocity.

        tip_seen is the watched tool point (the remote peg tip); when absent
        it falls back to the tip implied by the local pose."""
        twist = np.asarray(twist, dtype=np.float64).reshape(6)
        felt = np.zeros(J.shape[1]) if self.mode_code == 0 \
            else np.asarray(felt_tau, dtype=np.float64).reshape(J.shape[1])
        if tip_seen is None:
            tip_seen = pose.position + self.peg_length * pose.z_axis()
        tip_seen = np.ascontiguousarray(tip_seen, dtype=np.float64).reshape(3)
        wrench, clamped = scripted_tick_kernel(
            now, self.mode_code,
            tip_seen, pose.z_axis(), twist[:3], twist[3:],
            np.ascontiguousarray(J), felt,
            self.p_start, self.hover, self.push_dir, self.t_descend,
            APPROACH_SPEED, PUSH_SPEED, PUSH_RAMP,
            PUSH_LEAD, PUSH_LEAD_SEARCH, self.entry_progress,
            self.search_e1, self.search_e2, SEARCH_RADIUS, SEARCH_HZ,
            SEARCH_TURNS, RETRY_LIFT, RETRY_FRACTION,
            HAND_STIFFNESS, HAND_DAMPING, HAND_ROT_STIFFNESS, HAND_ROT_DAMPING,
            self.profile.noise.tremor_amp, self.tremor_freqs, self.tremor_phases,
            COMPLIANCE_GAIN, self._comp_lp, self._comp_beta,
            self.profile.reaction_latency,
            self._ring_t, self._ring_f, self._ring_idx,
            FORCE_CLAMP, MOMENT_CLAMP)
        return OperatorWrench(wrench=wrench, clamped=bool(clamped))


def _rotate_about(v, axis, angle):
    """Rodrigues rotation of v about a unit axis."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < 1e-12 or angle == 0.0:
        return np.asarray(v, dtype=np.float64).copy()
    axis = axis / n
    v = np.asarray(v, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    return c * v + s * np.cross(axis, v) + (1 - c) * (axis @ v) * axis


class HumanAdapter:
    """Turns streamed EE-velocity commands into hand wrenches.

    Integrates commanded velocity into a moving position reference and runs
    the same impedance mapping as the scripted operator. A silence longer
    than the dead-man timeout zeroes the wrench and re-anchors the reference
    so motion resumes without a jump.
    """

    DEAD_MAN_TIMEOUT = 0.2   # s

    def __init__(self, k_h: float = HAND_STIFFNESS, d_h: float = HAND_DAMPING):
        self.k_h = k_h
        self.d_h = d_h
        self._v_cmd = np.zeros(6)
        self._p_ref: np.ndarray | None = None
        self._last_cmd_time: float | None = None

    def push_command(self, velocity, now: float) -> None:
        """Accept a 6-vector EE velocity command; malformed input raises."""
        v = np.asarray(velocity, dtype=np.float64)
        if v.shape != (6,):
            raise ValueError(f"velocity command must have 6 entries, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("velocity command must be finite")
        self._v_cmd = v.copy()
        self._last_cmd_time = now

    def wrench(self, pose: Pose, twist, now: float, dt: float) -> OperatorWrench:
        twist = np.asarray(twist, dtype=np.float64).reshape(6)
        silent = (self._last_cmd_time is None
                  or now - self._last_cmd_time > self.DEAD_MAN_TIMEOUT)
        if silent:
            self._p_ref = pose.position.copy()
            return OperatorWrench.zero()
        if self._p_ref is None:
            self._p_ref = pose.position.copy()
        self._p_ref = self._p_ref + self._v_cmd[:3] * dt
        force = self.k_h * (self._p_ref - pose.position) - self.d_h * twist[:3]
        moment = HAND_ROT_DAMPING * 4.0 * (self._v_cmd[3:] - twist[3:])
        wrench = np.concatenate([force, moment])
        clamped = False
        fn = np.linalg.norm(wrench[:3])
        if fn > FORCE_CLAMP:
            wrench[:3] *= FORCE_CLAMP / fn
            clamped = True
        mn = np.linalg.norm(wrench[3:])
        if mn > MOMENT_CLAMP:
            wrench[3:] *= MOMENT_CLAMP / mn
            clamped = True
        return OperatorWrench(wrench=wrench, clamped=clamped)
