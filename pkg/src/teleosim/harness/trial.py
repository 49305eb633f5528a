"""Single-trial execution: a compiled lockstep teleoperation loop.

One control tick wires operator -> leader dynamics -> channel -> follower
controller -> follower dynamics -> contact -> force echo -> channel ->
leader, with per-direction energy ledgers guarding passivity. The whole
loop runs inside one numba kernel for speed; packet delivery schedules are
precomputed from the channel config so the in-loop channel is an exact
replay of the byte-level queue model.

Within a tick the leader half runs first and sends its command; the
follower polls at the same tick time, so an ideal channel delivers commands
in-tick and feedback on the next tick. Both ledgers then observe identical
conjugate (velocity, torque) products one tick apart, releases are always
covered by the peer's report, and the dampers provably stay at zero — an
ideal channel is bit-transparent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..channel.tdpa import damp_effort_kernel, damp_flow_kernel, observe_kernel
from ..channel.transport import STALE_TIMEOUT_S
from ..controllers import (GATE_FILTER_TAU, alignment_kernel,
                           cartesian_assist_kernel, joint_impedance_kernel,
                           masked_jt_kernel, pose_error_kernel, wiggle_kernel)
from ..environment import (SAFETY_FILTER_TAU, FailureReason, TrialOutcome,
                           contact_wrench_kernel, surface_normal_estimate,
                           task_geometry)
from ..kinodynamics import (ManipulatorModel, chol_factor_kernel,
                            chol_solve_kernel, crba_kernel, default_model,
                            fk_ee, forward_kinematics, jacobian_kernel,
                            rnea_kernel)
from ..operators import (APPROACH_SPEED, COMPLIANCE_GAIN, FORCE_CLAMP,
                         RETRY_FRACTION, RETRY_LIFT,
                         HAND_DAMPING, HAND_ROT_DAMPING, HAND_ROT_STIFFNESS,
                         HAND_STIFFNESS, MOMENT_CLAMP, PUSH_LEAD,
                         PUSH_LEAD_SEARCH, PUSH_RAMP, PUSH_SPEED,
                         SEARCH_HZ, SEARCH_RADIUS, SEARCH_TURNS, ScriptedOperator,
                         operator_profile, scripted_tick_kernel)
from ..rotations import mat_from_axis_angle, quat_from_mat
from .config import SessionConfig, config_hash

# viscous friction of each physical device (plant-side, not a control term):
# haptic leaders and gear-driven followers both have real joint friction,
# and it keeps the undamped leader null-space motions bounded
DEVICE_VISCOUS = 0.8   # N*m*s/rad

_MODE_CODES = {"unilateral": 0, "bilateral": 1, "shared": 2}

# golden-ratio offsets decorrelate the derived RNG streams of one trial
_FB_SEED_OFFSET = 0x9E3779B9
_SEED_MIX = 2654435761
_NORMAL_SEED_OFFSET = 1013904223


class TrialError(RuntimeError):
    """Numerical blow-up inside a trial; carries the failing tick index."""

    def __init__(self, message: str, tick: int):
        super().__init__(message)
        self.tick = tick


def record_columns(n: int) -> tuple[str, ...]:
    """Per-tick log column names for an n-joint arm pair."""
    cols = ["t"]
    cols += [f"q_l_{i}" for i in range(n)]
    cols += [f"dq_l_{i}" for i in range(n)]
    cols += [f"q_f_{i}" for i in range(n)]
    cols += [f"dq_f_{i}" for i in range(n)]
    cols += ["ee_f_px", "ee_f_py", "ee_f_pz",
             "ee_f_qx", "ee_f_qy", "ee_f_qz", "ee_f_qw"]
    cols += ["f_ext_fx", "f_ext_fy", "f_ext_fz",
             "f_ext_mx", "f_ext_my", "f_ext_mz"]
    cols += [f"tau_c_l_{i}" for i in range(n)]
    cols += [f"tau_c_f_{i}" for i in range(n)]
    cols += [f"tau_d_f_{i}" for i in range(n)]
    cols += ["eta", "stage"]
    return tuple(cols)


@dataclass
class TrialRecord:
    """Everything one trial produced: config identity, tick log, outcome."""

    config_hash: str
    seed: int
    task_id: str
    mode: str
    dt: float
    columns: tuple[str, ...]
    rows: np.ndarray
    outcome: TrialOutcome
    energy: dict = field(default_factory=dict)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != len(self.columns):
            raise ValueError("row width does not match the column list")
        t = rows[:, 0]
        if len(t) > 1:
            dts = np.diff(t)
            if np.any(dts <= 0.0):
                raise ValueError("tick times must be strictly increasing")
            if np.max(np.abs(dts - self.dt)) > 1e-9:
                raise ValueError("tick spacing must equal dt")
        final_stage = int(rows[-1, -1]) if len(rows) else -1
        if self.outcome.success != (final_stage == 2):
            raise ValueError("outcome success flag contradicts the final stage")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]


# ---------------------------------------------------------------------------
# channel delivery precomputation
# ---------------------------------------------------------------------------

def delivery_schedule(n_ticks: int, dt: float, delay_ms: float, jitter_ms: float,
                      loss_prob: float, reorder_prob: float, seed: int,
                      polls_after_send: bool) -> np.ndarray:
    """Newest deliverable sequence number per receiver tick (-1 = none yet).

    Replays the packet queue's RNG schedule (loss, jitter, reorder draws per
    send, in that order) against the lockstep poll cadence: one send per
    tick; the receiver polls at the same tick time, either after the send
    (command direction) or before it (feedback direction). Reordering swaps
    delivery times with the most recently enqueued still-pending packet.
    """
    rng = np.random.default_rng(seed)
    t_us = np.rint(np.arange(n_ticks, dtype=np.float64) * dt * 1e6).astype(np.int64)
    t_deliver = np.zeros(n_ticks, dtype=np.int64)
    alive = np.zeros(n_ticks, dtype=bool)
    pending: list[int] = []
    for s in range(n_ticks):
        u_loss = rng.random()
        u_jitter = rng.random()
        u_reorder = rng.random()
        if polls_after_send:
            boundary = t_us[s - 1] if s > 0 else -1
        else:
            boundary = t_us[s]
        pending = [j for j in pending if t_deliver[j] > boundary]
        if u_loss < loss_prob:
            continue
        td = int(t_us[s]) + int(round(delay_ms * 1e3 + u_jitter * jitter_ms * 1e3))
        if u_reorder < reorder_prob and pending:
            j = pending[-1]
            td, t_deliver[j] = int(t_deliver[j]), td
        t_deliver[s] = td
        alive[s] = True
        pending.append(s)

    newest = np.full(n_ticks, -1, dtype=np.int64)
    for s in range(n_ticks):
        if not alive[s]:
            continue
        a = int(np.searchsorted(t_us, t_deliver[s], side="left"))
        a = max(a, s if polls_after_send else s + 1)
        if a < n_ticks and s > newest[a]:
            newest[a] = s
    return np.maximum.accumulate(newest)


def channel_schedules(cfg: SessionConfig, n_ticks: int):
    """Command and feedback delivery schedules for one trial.

    The channel seed is folded with the trial seed so batch trials see
    independent impairment realizations; the feedback direction gets the
    same offset the loopback transport uses.
    """
    ch = cfg.channel
    base = (int(ch.seed) + (int(cfg.seed) + 1) * _SEED_MIX) % (2 ** 63)
    cmd = delivery_schedule(n_ticks, cfg.dt, ch.delay_ms, ch.jitter_ms,
                            ch.loss_prob, ch.reorder_prob, base,
                            polls_after_send=True)
    fb = delivery_schedule(n_ticks, cfg.dt, ch.delay_ms, ch.jitter_ms,
                           ch.loss_prob, ch.reorder_prob,
                           base + _FB_SEED_OFFSET, polls_after_send=False)
    return cmd, fb


# ---------------------------------------------------------------------------
# the fused trial loop
# ---------------------------------------------------------------------------

@njit(cache=True)
def _trial_loop(dh, mass, com, inertia, armature, gravity, q_lo, q_hi, tau_lim,
                q0, dt, n_ticks, substeps, stale_s,
                cmd_newest, fb_newest, tdpa_on,
                feedback_on, assist_on, autonomy_on,
                k_c, d_c, lam1, k_q, d_q, lam2, lam3,
                wig_amp, wig_freq, wig_phase, f_t, gate_tau, debounce,
                stage_gated, z_target,
                shape_code, half1, half2, chamfer, depth, R_h, p_h, pts,
                k_n, d_n, mu, v_eps,
                peg_len, approach_margin, trigger_radius, success_fraction,
                circum, stage_limit, total_limit, safety_limit, safety_tau,
                op_mode, op_p_start, op_hover, op_push_dir, op_t_descend,
                op_approach_speed, op_push_speed, op_push_ramp,
                op_push_lead, op_push_lead_search, op_entry_progress,
                op_search_e1, op_search_e2, op_search_radius, op_search_hz,
                op_search_turns, op_retry_lift, op_retry_frac,
                op_kh, op_dh, op_krot, op_drot, op_tremor_amp, op_freqs,
                op_phases, op_comp_gain, op_comp_lp, op_comp_beta, op_latency,
                op_ring_t, op_ring_f, op_ring_idx, op_clamp_f, op_clamp_m,
                visc, log, stats):
    n = q0.shape[0]
    q_l = q0.copy()
    dq_l = np.zeros(n)
    q_f = q0.copy()
    dq_f = np.zeros(n)

    # sent-payload stores, indexed by sequence number (= send tick)
    q_store = np.zeros((n_ticks, n))
    dq_store = np.zeros((n_ticks, n))
    einl_store = np.zeros(n_ticks)
    tau_store = np.zeros((n_ticks, n))
    einf_store = np.zeros(n_ticks)

    last_cmd = -1
    last_cmd_tick = -1
    last_fb = -1
    last_fb_tick = -1
    q_d = q0.copy()
    dq_d_raw = np.zeros(n)
    tau_fb_raw = np.zeros(n)

    e_in_l = 0.0
    e_out_l = 0.0
    e_rec_l = 0.0
    diss_l = 0.0
    damped_l = 0.0
    e_in_f = 0.0
    e_out_f = 0.0
    e_rec_f = 0.0
    diss_f = 0.0
    damped_f = 0.0
    max_def_l = 0.0
    max_def_f = 0.0

    dq_sent_prev = np.zeros(n)
    tau_gen_prev = np.zeros(n)
    f_ext_ee = np.zeros(3)      # previous tick, EE frame (autonomy gate input)
    f_base6 = np.zeros(6)
    R_f_next, p_f_next = fk_ee(dh, q_f)
    J_f_next = jacobian_kernel(dh, q_f)

    stage = 0
    t_entry = 0.0
    t_s1 = np.nan
    above_since = np.nan
    f_mon = 0.0
    mon_beta = math.exp(-dt / safety_tau) if safety_tau > 0.0 else 0.0
    f_gate = 0.0
    gate_beta = math.exp(-dt / gate_tau) if gate_tau > 0.0 else 0.0

    status = 0.0
    reason = 0.0
    success = 0.0
    t_total = total_limit
    t_out1 = 0.0
    t_out2 = 0.0
    err_tick = -1.0
    rows = 0

    ncol = 16 + 7 * n

    for k in range(n_ticks):
        t = k * dt

        # ---------------- leader half ----------------
        fseq = fb_newest[k]
        if fseq > last_fb:
            last_fb = fseq
            last_fb_tick = k
            for i in range(n):
                tau_fb_raw[i] = tau_store[fseq, i]
            if einf_store[fseq] > e_rec_l:
                e_rec_l = einf_store[fseq]
        fb_stale = last_fb < 0 or (k - last_fb_tick) * dt > stale_s
        tau_fb = np.zeros(n)
        if feedback_on and not fb_stale:
            for i in range(n):
                tau_fb[i] = tau_fb_raw[i]

        if tdpa_on:
            s_l = 0.0
            fsq = 0.0
            for i in range(n):
                s_l += dq_sent_prev[i] * tau_fb[i]
                fsq += dq_sent_prev[i] * dq_sent_prev[i]
            alpha_l = damp_effort_kernel(s_l, fsq, dt, e_out_l, e_rec_l)
            if alpha_l > 0.0:
                for i in range(n):
                    tau_fb[i] += alpha_l * dq_sent_prev[i]
                diss_l += alpha_l * fsq * dt
                damped_l += 1.0
        s_obs = 0.0
        for i in range(n):
            s_obs += dq_sent_prev[i] * tau_fb[i]
        _, e_in_l, e_out_l = observe_kernel(0, s_obs, dt, e_in_l, e_out_l)
        d_l = e_out_l - e_rec_l
        if d_l > max_def_l:
            max_def_l = d_l

        R_l, p_l = fk_ee(dh, q_l)
        J_l = jacobian_kernel(dh, q_l)
        tw_l = J_l @ dq_l
        z_l = np.empty(3)
        z_l[0] = R_l[0, 2]
        z_l[1] = R_l[1, 2]
        z_l[2] = R_l[2, 2]

        # the tool point the operator watches: the remote peg tip
        tip_seen = np.empty(3)
        tip_seen[0] = p_f_next[0] + peg_len * R_f_next[0, 2]
        tip_seen[1] = p_f_next[1] + peg_len * R_f_next[1, 2]
        tip_seen[2] = p_f_next[2] + peg_len * R_f_next[2, 2]

        w_op, _ = scripted_tick_kernel(
            t, op_mode, tip_seen, z_l, tw_l[:3], tw_l[3:],
            J_l, tau_fb,
            op_p_start, op_hover, op_push_dir, op_t_descend,
            op_approach_speed, op_push_speed, op_push_ramp,
            op_push_lead, op_push_lead_search, op_entry_progress,
            op_search_e1, op_search_e2, op_search_radius, op_search_hz,
            op_search_turns, op_retry_lift, op_retry_frac,
            op_kh, op_dh, op_krot, op_drot,
            op_tremor_amp, op_freqs, op_phases,
            op_comp_gain, op_comp_lp, op_comp_beta, op_latency,
            op_ring_t, op_ring_f, op_ring_idx,
            op_clamp_f, op_clamp_m)

        zdd = np.zeros(n)
        cg_l = rnea_kernel(dh, mass, com, inertia, armature,
                           q_l, dq_l, zdd, gravity)
        tau_cmd_l = cg_l.copy()
        for i in range(n):
            tau_cmd_l[i] += tau_fb[i]
        if assist_on:
            axis, theta, _deg = alignment_kernel(z_l, z_target)
            if theta != 0.0:
                nrm = math.sqrt(axis[0] ** 2 + axis[1] ** 2 + axis[2] ** 2)
                if nrm > 0.0:
                    axis = axis / nrm
                R_des = mat_from_axis_angle(axis, theta) @ R_l
                e6 = pose_error_kernel(R_l, p_l, R_des, p_l)
                tau_cmd_l += cartesian_assist_kernel(J_l, e6, tw_l,
                                                     k_c, d_c, lam1)
        for i in range(n):
            if tau_cmd_l[i] > tau_lim[i]:
                tau_cmd_l[i] = tau_lim[i]
            elif tau_cmd_l[i] < -tau_lim[i]:
                tau_cmd_l[i] = -tau_lim[i]
        tau_ext_l = J_l.T @ w_op
        M_l = crba_kernel(dh, mass, com, inertia, armature, q_l)
        rhs_l = np.empty(n)
        for i in range(n):
            rhs_l[i] = tau_cmd_l[i] + tau_ext_l[i] - visc * dq_l[i] - cg_l[i]
        ddq_l = chol_solve_kernel(chol_factor_kernel(M_l), rhs_l)
        for i in range(n):
            dq_l[i] += ddq_l[i] * dt
            q_l[i] += dq_l[i] * dt
            if q_l[i] > q_hi[i]:
                q_l[i] = q_hi[i]
                if dq_l[i] > 0.0:
                    dq_l[i] = 0.0
            elif q_l[i] < q_lo[i]:
                q_l[i] = q_lo[i]
                if dq_l[i] < 0.0:
                    dq_l[i] = 0.0

        for i in range(n):
            q_store[k, i] = q_l[i]
            dq_store[k, i] = dq_l[i]
        einl_store[k] = e_in_l
        dq_sent_prev = dq_l.copy()

        # ---------------- follower half ----------------
        cseq = cmd_newest[k]
        if cseq > last_cmd:
            last_cmd = cseq
            last_cmd_tick = k
            for i in range(n):
                q_d[i] = q_store[cseq, i]
                dq_d_raw[i] = dq_store[cseq, i]
            if einl_store[cseq] > e_rec_f:
                e_rec_f = einl_store[cseq]
        cmd_stale = last_cmd < 0 or (k - last_cmd_tick) * dt > stale_s
        dq_d = np.zeros(n)
        if not cmd_stale:
            for i in range(n):
                dq_d[i] = dq_d_raw[i]

        standing = e_out_f - e_rec_f
        if standing > max_def_f:
            max_def_f = standing
        if tdpa_on:
            esq = 0.0
            for i in range(n):
                esq += tau_gen_prev[i] * tau_gen_prev[i]
            alpha_f = damp_flow_kernel(esq, dt, e_out_f, e_rec_f)
            if alpha_f > 0.0:
                for i in range(n):
                    dq_d[i] -= alpha_f * tau_gen_prev[i]
                diss_f += alpha_f * esq * dt
                damped_f += 1.0

        cg_f = rnea_kernel(dh, mass, com, inertia, armature,
                           q_f, dq_f, zdd, gravity)
        tau_cmd_f = joint_impedance_kernel(k_q, d_q, q_d, q_f, dq_d, dq_f)
        for i in range(n):
            tau_cmd_f[i] += cg_f[i]
        # post-step kinematics of the previous tick describe the current state
        R_f = R_f_next
        p_f = p_f_next
        J_f = J_f_next
        tw_f = J_f @ dq_f

        eta = 0
        if autonomy_on:
            lateral_f = math.hypot(f_ext_ee[0], f_ext_ee[1])
            f_gate = gate_beta * f_gate + (1.0 - gate_beta) * lateral_f
            raised = f_gate > f_t
            if stage_gated and stage != 1:
                raised = False
            if debounce == 0.0:
                eta = 1 if raised else 0
            elif not raised:
                above_since = np.nan
            else:
                if not np.isfinite(above_since):
                    above_since = t
                if t - above_since >= debounce:
                    eta = 1
        if eta == 1:
            wt = t - t_s1 if np.isfinite(t_s1) else t
            f_ff = wiggle_kernel(wig_amp, wig_freq, wig_phase, wt)
            tau_cmd_f += masked_jt_kernel(J_f, lam2, f_ff)
        for i in range(n):
            if tau_cmd_f[i] > tau_lim[i]:
                tau_cmd_f[i] = tau_lim[i]
            elif tau_cmd_f[i] < -tau_lim[i]:
                tau_cmd_f[i] = -tau_lim[i]

        # contact proximity: worst-case dip of the peg bottom below its tip
        z_f = np.empty(3)
        z_f[0] = R_f[0, 2]
        z_f[1] = R_f[1, 2]
        z_f[2] = R_f[2, 2]
        dotzi = (z_f[0] * R_h[0, 2] + z_f[1] * R_h[1, 2] + z_f[2] * R_h[2, 2])
        s2 = 1.0 - dotzi * dotzi
        droop = circum * math.sqrt(s2) if s2 > 0.0 else 0.0
        axial = 0.0
        for i in range(3):
            axial += R_h[i, 2] * (p_f[i] + peg_len * z_f[i] - p_h[i])
        vmag = math.sqrt(tw_f[0] ** 2 + tw_f[1] ** 2 + tw_f[2] ** 2)
        near_contact = axial >= -(droop + 2.0 * vmag * dt + 1e-3)

        # substep count follows the contact force: stiff friction needs fine
        # steps only when the normal load is high
        fprev = math.sqrt(f_ext_ee[0] ** 2 + f_ext_ee[1] ** 2
                          + f_ext_ee[2] ** 2)
        if not near_contact:
            nsub = 1
        elif fprev > 25.0:
            nsub = substeps
        elif fprev > 6.0:
            nsub = max(substeps // 2, 1)
        else:
            nsub = min(2, substeps)
        h = dt / nsub
        M_f = crba_kernel(dh, mass, com, inertia, armature, q_f)
        L_f = chol_factor_kernel(M_f)
        f_ee = np.zeros(3)
        m_ee = np.zeros(3)
        for i in range(6):
            f_base6[i] = 0.0
        rhs_f = np.empty(n)
        for _s in range(nsub):
            if near_contact:
                if _s > 0:
                    R_f, p_f = fk_ee(dh, q_f)
                tw_f = J_f @ dq_f
                f_ee, m_ee = contact_wrench_kernel(
                    shape_code, half1, half2, chamfer, depth,
                    R_h, p_h, pts, R_f, p_f, tw_f[:3], tw_f[3:],
                    k_n, d_n, mu, v_eps)
                for i in range(3):
                    f_base6[i] = (R_f[i, 0] * f_ee[0] + R_f[i, 1] * f_ee[1]
                                  + R_f[i, 2] * f_ee[2])
                    f_base6[3 + i] = (R_f[i, 0] * m_ee[0]
                                      + R_f[i, 1] * m_ee[1]
                                      + R_f[i, 2] * m_ee[2])
                tau_ext_f = J_f.T @ f_base6
                for i in range(n):
                    rhs_f[i] = (tau_cmd_f[i] + tau_ext_f[i]
                                - visc * dq_f[i] - cg_f[i])
            else:
                for i in range(n):
                    rhs_f[i] = tau_cmd_f[i] - visc * dq_f[i] - cg_f[i]
            ddq_f = chol_solve_kernel(L_f, rhs_f)
            for i in range(n):
                dq_f[i] += ddq_f[i] * h
                q_f[i] += dq_f[i] * h
                if q_f[i] > q_hi[i]:
                    q_f[i] = q_hi[i]
                    if dq_f[i] > 0.0:
                        dq_f[i] = 0.0
                elif q_f[i] < q_lo[i]:
                    q_f[i] = q_lo[i]
                    if dq_f[i] < 0.0:
                        dq_f[i] = 0.0
        f_ext_ee[0] = f_ee[0]
        f_ext_ee[1] = f_ee[1]
        f_ext_ee[2] = f_ee[2]

        # stage machine on the post-step pose
        R_f_next, p_f_next = fk_ee(dh, q_f)
        R_f = R_f_next
        p_f = p_f_next
        z_f[0] = R_f[0, 2]
        z_f[1] = R_f[1, 2]
        z_f[2] = R_f[2, 2]
        tipx = p_f[0] + peg_len * z_f[0]
        tipy = p_f[1] + peg_len * z_f[1]
        tipz = p_f[2] + peg_len * z_f[2]
        l0 = (R_h[0, 0] * (tipx - p_h[0]) + R_h[1, 0] * (tipy - p_h[1])
              + R_h[2, 0] * (tipz - p_h[2]))
        l1 = (R_h[0, 1] * (tipx - p_h[0]) + R_h[1, 1] * (tipy - p_h[1])
              + R_h[2, 1] * (tipz - p_h[2]))
        l2 = (R_h[0, 2] * (tipx - p_h[0]) + R_h[1, 2] * (tipy - p_h[1])
              + R_h[2, 2] * (tipz - p_h[2]))
        lateral = math.hypot(l0, l1)
        if stage == 0:
            if lateral <= trigger_radius and l2 >= -approach_margin:
                stage = 1
                t_entry = t
                t_s1 = t
        depth_now = min(max(l2, 0.0), depth)
        if stage == 1 and depth_now >= success_fraction * depth:
            stage = 2
            t_entry = t

        J_f_next = jacobian_kernel(dh, q_f)
        if feedback_on:
            tau_gen = masked_jt_kernel(J_f_next, lam3, f_base6)
        else:
            tau_gen = np.zeros(n)
        s_f = 0.0
        for i in range(n):
            s_f += dq_d[i] * tau_gen[i]
        _, e_in_f, e_out_f = observe_kernel(1, s_f, dt, e_in_f, e_out_f)

        for i in range(n):
            tau_store[k, i] = tau_gen[i]
        einf_store[k] = e_in_f
        tau_gen_prev = tau_gen

        # ---------------- log row ----------------
        quat = quat_from_mat(R_f)
        log[k, 0] = t
        for i in range(n):
            log[k, 1 + i] = q_l[i]
            log[k, 1 + n + i] = dq_l[i]
            log[k, 1 + 2 * n + i] = q_f[i]
            log[k, 1 + 3 * n + i] = dq_f[i]
        base = 1 + 4 * n
        log[k, base + 0] = p_f[0]
        log[k, base + 1] = p_f[1]
        log[k, base + 2] = p_f[2]
        log[k, base + 3] = quat[0]
        log[k, base + 4] = quat[1]
        log[k, base + 5] = quat[2]
        log[k, base + 6] = quat[3]
        for i in range(6):
            log[k, base + 7 + i] = f_base6[i]
        base2 = base + 13
        for i in range(n):
            log[k, base2 + i] = tau_cmd_l[i]
            log[k, base2 + n + i] = tau_cmd_f[i]
            log[k, base2 + 2 * n + i] = tau_gen[i]
        log[k, ncol - 2] = eta
        log[k, ncol - 1] = stage
        rows = k + 1

        # ---------------- guards and adjudication ----------------
        bad = False
        for i in range(n):
            if (not np.isfinite(q_l[i]) or not np.isfinite(q_f[i])
                    or abs(dq_l[i]) > 1e3 or abs(dq_f[i]) > 1e3):
                bad = True
        if bad:
            status = 1.0
            err_tick = k
            break

        if stage == 2:
            success = 1.0
            reason = 0.0
            t_total = t
            t_out1 = t_s1
            t_out2 = t - t_s1
            break
        fnorm = math.sqrt(f_base6[0] ** 2 + f_base6[1] ** 2 + f_base6[2] ** 2)
        f_mon = mon_beta * f_mon + (1.0 - mon_beta) * fnorm
        in2 = stage == 1
        t1c = t_s1 if in2 else t
        t2c = t - t_s1 if in2 else 0.0
        if f_mon > safety_limit:
            reason = 2.0
            t_total = total_limit
            t_out1 = t1c
            t_out2 = t2c
            break
        if t - t_entry > stage_limit or t >= total_limit:
            reason = 1.0
            t_total = total_limit
            t_out1 = t1c
            t_out2 = t2c
            break

    stats[0] = rows
    stats[1] = status
    stats[2] = success
    stats[3] = reason
    stats[4] = t_total
    stats[5] = t_out1
    stats[6] = t_out2
    stats[7] = err_tick
    stats[8] = e_in_l
    stats[9] = e_out_l
    stats[10] = e_rec_l
    stats[11] = diss_l
    stats[12] = damped_l
    stats[13] = e_in_f
    stats[14] = e_out_f
    stats[15] = e_rec_f
    stats[16] = diss_f
    stats[17] = damped_f
    stats[18] = max_def_l
    stats[19] = max_def_f
    return rows


# ---------------------------------------------------------------------------
# public entry point
# ---------------------------------------------------------------------------

def run_trial(cfg: SessionConfig, model: ManipulatorModel | None = None) -> TrialRecord:
    """Execute one trial; a pure function of (config, seed).

    Raises TrialError (with the tick index) on numerical blow-up and
    ValueError for configs that cannot run in batch (a human operator).
    """
    if cfg.operator == "human":
        raise ValueError("batch trials need a scripted operator profile; "
                         "'human' input arrives through the live service")
    model = model if model is not None else default_model()
    geo = task_geometry(cfg.task, cfg.contact)
    n = model.n
    n_ticks = int(round(cfg.total_limit / cfg.dt)) + 1

    cmd_newest, fb_newest = channel_schedules(cfg, n_ticks)

    profile = operator_profile(cfg.operator)
    start_pose = forward_kinematics(model, model.q_home)
    op = ScriptedOperator(profile, cfg.mode, cfg.task, start_pose.position,
                          seed=cfg.seed, dt=cfg.dt, geometry=geo,
                          z_start=start_pose.z_axis())
    z_target = surface_normal_estimate(cfg.task, cfg.normal_noise_rad,
                                       seed=cfg.seed + _NORMAL_SEED_OFFSET)

    log = np.zeros((n_ticks, 16 + 7 * n))
    stats = np.zeros(24)
    lg, fg, wg, au = (cfg.leader_gains, cfg.follower_gains, cfg.wiggle,
                      cfg.autonomy)
    _trial_loop(model.dh, model.mass, model.com, model.inertia, model.armature,
                model.gravity, model.q_lower, model.q_upper, model.tau_limit,
                model.q_home, cfg.dt, n_ticks, cfg.substeps, STALE_TIMEOUT_S,
                cmd_newest, fb_newest, cfg.tdpa_enabled,
                cfg.feedback_enabled, cfg.assist_enabled, cfg.autonomy_enabled,
                lg.k_c, lg.d_c, lg.lambda1, fg.k_q, fg.d_q, fg.lambda2,
                fg.lambda3, wg.amplitude, wg.frequency, wg.phase,
                au.f_t, GATE_FILTER_TAU, au.debounce_window, au.stage_gated,
                np.ascontiguousarray(z_target),
                geo.shape_code, geo.half1, geo.half2, geo.chamfer, geo.depth,
                geo.R_hole, geo.p_hole, geo.points,
                cfg.contact.k_n, cfg.contact.d_n, cfg.contact.mu,
                cfg.contact.v_eps,
                geo.peg_length, geo.approach_margin, geo.trigger_radius,
                geo.success_fraction,
                geo.trigger_radius - geo.approach_margin,
                cfg.stage_limit, cfg.total_limit, cfg.safety_force_limit,
                SAFETY_FILTER_TAU,
                op.mode_code, op.p_start, op.hover, op.push_dir, op.t_descend,
                APPROACH_SPEED, PUSH_SPEED, PUSH_RAMP,
                PUSH_LEAD, PUSH_LEAD_SEARCH, op.entry_progress,
                op.search_e1, op.search_e2, SEARCH_RADIUS, SEARCH_HZ,
                SEARCH_TURNS, RETRY_LIFT, RETRY_FRACTION,
                HAND_STIFFNESS, HAND_DAMPING, HAND_ROT_STIFFNESS,
                HAND_ROT_DAMPING,
                profile.noise.tremor_amp, op.tremor_freqs, op.tremor_phases,
                COMPLIANCE_GAIN, op._comp_lp, op._comp_beta,
                profile.reaction_latency,
                op._ring_t, op._ring_f, op._ring_idx,
                FORCE_CLAMP, MOMENT_CLAMP,
                DEVICE_VISCOUS, log, stats)

    rows = int(stats[0])
    if stats[1] != 0.0:
        raise TrialError(f"numerical blow-up at tick {int(stats[7])} "
                         f"(t={int(stats[7]) * cfg.dt:.3f} s)", int(stats[7]))

    reason = {0.0: FailureReason.NONE, 1.0: FailureReason.TIMEOUT,
              2.0: FailureReason.SAFETY_MARGIN}[stats[3]]
    outcome = TrialOutcome(success=bool(stats[2]), t_total=float(stats[4]),
                           t_stage1=float(stats[5]), t_stage2=float(stats[6]),
                           failure_reason=reason)
    energy = {
        "leader": {"e_in": stats[8], "e_out": stats[9], "e_received": stats[10],
                   "dissipated": stats[11], "damped_steps": int(stats[12]),
                   "max_deficit": stats[18]},
        "follower": {"e_in": stats[13], "e_out": stats[14],
                     "e_received": stats[15], "dissipated": stats[16],
                     "damped_steps": int(stats[17]),
                     "max_standing_deficit": stats[19]},
    }
    return TrialRecord(config_hash=config_hash(cfg), seed=cfg.seed,
                       task_id=cfg.task.id, mode=cfg.mode, dt=cfg.dt,
                       columns=record_columns(n), rows=log[:rows].copy(),
                       outcome=outcome, energy=energy)
