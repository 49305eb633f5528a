"""Control-law algebra, gain defaults, and closed-loop behavior oracles."""

import math

import numpy as np
import pytest

from teleosim import controllers as ctl
from teleosim import kinodynamics as kd
from teleosim.environment import Stage
from teleosim.kinodynamics import JointState, Pose, Wrench


@pytest.fixture(scope="module")
def arm():
    return kd.default_model()


def resting(arm):
    return JointState.resting(arm.home())


# -- gain defaults -----------------------------------------------------------

def test_leader_gain_defaults():
    g = ctl.LeaderGains()
    np.testing.assert_array_equal(g.k_c, [0, 0, 0, 35.0, 35.0, 0])
    d = 2.0 * math.sqrt(35.0)
    np.testing.assert_allclose(g.d_c, [0, 0, 0, d, d, 0], atol=1e-12)
    np.testing.assert_array_equal(g.lambda1, [0, 0, 0, 1, 1, 0])


def test_follower_gain_defaults():
    g = ctl.FollowerGains()
    np.testing.assert_array_equal(g.k_q, [450, 450, 450, 300, 150, 75, 45])
    np.testing.assert_allclose(g.d_q, 1.4 * np.sqrt(g.k_q), atol=1e-12)
    np.testing.assert_array_equal(g.lambda2, [1, 1, 0, 0, 0, 0])
    np.testing.assert_array_equal(g.lambda3, [1, 1, 1, 0, 0, 0])


def test_wiggle_defaults():
    w = ctl.WiggleParams()
    np.testing.assert_array_equal(w.amplitude, [0.766, 0.906, 0, 0, 0, 0])
    np.testing.assert_array_equal(w.frequency, [2.150, 2.160, 0, 0, 0, 0])
    np.testing.assert_array_equal(w.phase, [-1.562, 0.610, 0, 0, 0, 0])


def test_gain_validation():
    with pytest.raises(ValueError):
        ctl.LeaderGains(k_c=[0, 0, 0, -1, 0, 0])
    with pytest.raises(ValueError):
        ctl.FollowerGains(k_q=np.zeros(7))
    with pytest.raises(ValueError):
        ctl.AutonomyConfig(f_t=0.0)
    with pytest.raises(ValueError):
        ctl.AutonomyConfig(debounce_window=-1.0)


# -- leader baseline ---------------------------------------------------------

def test_leader_baseline_is_gravity_at_rest(arm):
    state = resting(arm)
    tau = ctl.leader_baseline_torque(arm, state, np.zeros(arm.n))
    np.testing.assert_array_equal(tau, kd.gravity_torques(arm, state.q))


def test_leader_baseline_additivity(arm):
    state = JointState(q=arm.home(), dq=np.full(arm.n, 0.3), ddq=np.zeros(arm.n))
    shift = np.zeros(arm.n)
    shift[0] = 1.0
    base = ctl.leader_baseline_torque(arm, state, np.zeros(arm.n))
    shifted = ctl.leader_baseline_torque(arm, state, shift)
    np.testing.assert_allclose(shifted - base, shift, atol=1e-12)


def test_leader_baseline_holds_still_for_one_second(arm):
    state = resting(arm)
    zeros = np.zeros(arm.n)
    for _ in range(1000):
        tau = ctl.leader_baseline_torque(arm, state, zeros)
        state = kd.step(arm, state, tau, zeros, 1e-3)
    assert np.linalg.norm(state.dq) < 1e-6


# -- alignment ---------------------------------------------------------------

def test_alignment_identity():
    axis, theta, degen = ctl.alignment_axis_angle([0, 0, 1], [0, 0, 1])
    np.testing.assert_array_equal(axis, np.zeros(3))
    assert theta == 0.0
    assert not degen


def test_alignment_orthogonal():
    axis, theta, degen = ctl.alignment_axis_angle([1, 0, 0], [0, 0, 1])
    np.testing.assert_allclose(axis, [0, -1, 0], atol=1e-15)
    assert theta == pytest.approx(math.pi / 2)
    assert not degen


def test_alignment_antiparallel_fallback():
    axis, theta, degen = ctl.alignment_axis_angle([0, 0, 1], [0, 0, -1])
    assert degen
    assert theta == pytest.approx(math.pi)
    np.testing.assert_allclose(axis, [0, 1, 0], atol=1e-12)   # z x e1 normalized

    axis2, _, degen2 = ctl.alignment_axis_angle([1, 0, 0], [-1, 0, 0])
    assert degen2
    np.testing.assert_allclose(axis2, [0, 0, 1], atol=1e-12)  # falls back to z x e2
    assert abs(axis2 @ np.array([1.0, 0, 0])) < 1e-12


def test_alignment_rejects_non_unit():
    with pytest.raises(ValueError):
        ctl.alignment_axis_angle([0, 0, 2.0], [0, 0, 1])


# -- assist goal -------------------------------------------------------------

def quat_rotation(axis, angle):
    axis = np.asarray(axis, float)
    R = np.eye(3)
    from teleosim.rotations import mat_from_axis_angle
    return mat_from_axis_angle(np.ascontiguousarray(axis), angle)


def test_assist_goal_identity_short_circuits():
    pose = Pose.identity()
    goal = ctl.leader_assist_goal(pose, [0, 0, 1])
    np.testing.assert_array_equal(goal.orientation, pose.orientation)
    np.testing.assert_array_equal(goal.position, pose.position)


def test_assist_goal_reaches_target_axis():
    rng = np.random.default_rng(31)
    for _ in range(25):
        rv = rng.normal(size=3)
        R = quat_rotation(rv / np.linalg.norm(rv), rng.uniform(0.1, 2.8))
        pose = Pose.from_matrix(R, rng.normal(size=3))
        z_t = rng.normal(size=3)
        z_t /= np.linalg.norm(z_t)
        if pose.z_axis() @ z_t < -0.999:
            continue
        goal = ctl.leader_assist_goal(pose, z_t)
        assert np.linalg.norm(goal.z_axis() - z_t) < 1e-9
        np.testing.assert_array_equal(goal.position, pose.position)


def test_assist_goal_preserves_yaw_about_target():
    psi, tilt = 0.8, 0.1
    R_l = quat_rotation([0, 0, 1], psi) @ quat_rotation([1, 0, 0], tilt)
    pose = Pose.from_matrix(R_l, np.zeros(3))
    goal = ctl.leader_assist_goal(pose, [0, 0, 1])
    R_d = goal.rotation()
    np.testing.assert_allclose(R_d[:, 2], [0, 0, 1], atol=1e-9)
    yaw = math.atan2(R_d[1, 0], R_d[0, 0])
    assert yaw == pytest.approx(psi, abs=1e-9)


# -- leader shared law -------------------------------------------------------

def test_shared_reduces_to_baseline_at_zero_error(arm):
    state = resting(arm)
    pose = kd.forward_kinematics(arm, state.q)
    tau_fb = np.zeros(arm.n)
    shared = ctl.leader_shared_torque(arm, state, pose, ctl.LeaderGains(), tau_fb)
    base = ctl.leader_baseline_torque(arm, state, tau_fb)
    np.testing.assert_array_equal(shared, base)


def test_shared_masks_translation_errors(arm):
    state = resting(arm)
    pose = kd.forward_kinematics(arm, state.q)
    shifted = Pose(position=pose.position + [0.05, -0.02, 0.01],
                   orientation=pose.orientation)
    shared = ctl.leader_shared_torque(arm, state, shifted, ctl.LeaderGains(),
                                      np.zeros(arm.n))
    base = ctl.leader_baseline_torque(arm, state, np.zeros(arm.n))
    np.testing.assert_array_equal(shared, base)


def test_shared_with_zero_lambda_is_bitwise_baseline(arm):
    state = JointState(q=arm.home(), dq=np.full(arm.n, 0.2), ddq=np.zeros(arm.n))
    gains = ctl.LeaderGains(lambda1=np.zeros(6))
    fb = np.full(arm.n, 0.1)
    shared = ctl.leader_shared_torque(arm, state, Pose.identity(), gains, fb)
    base = ctl.leader_baseline_torque(arm, state, fb)
    np.testing.assert_array_equal(shared, base)


def test_shared_assist_acts_only_on_rotation_axes(arm):
    rng = np.random.default_rng(37)
    state = JointState(q=arm.home() + rng.uniform(-0.2, 0.2, arm.n),
                       dq=rng.uniform(-0.3, 0.3, arm.n), ddq=np.zeros(arm.n))
    pose = kd.forward_kinematics(arm, state.q)
    z_t = np.array([0.1, 0.1, -0.99])
    z_t /= np.linalg.norm(z_t)
    goal = ctl.leader_assist_goal(pose, z_t)
    assist = (ctl.leader_shared_torque(arm, state, goal, ctl.LeaderGains(), np.zeros(arm.n))
              - ctl.leader_baseline_torque(arm, state, np.zeros(arm.n)))
    J = kd.geometric_jacobian(arm, state.q)
    w = np.linalg.pinv(J.T) @ assist
    np.testing.assert_allclose(w[[0, 1, 2, 5]], np.zeros(4), atol=1e-9)
    assert np.linalg.norm(w[3:5]) > 0.0


def test_shared_tilt_converges_to_target_axis(arm):
    z_t = quat_rotation([1, 0, 0], 0.2) @ np.array([0.0, 0.0, -1.0])
    state = resting(arm)
    zeros = np.zeros(arm.n)
    gains = ctl.LeaderGains()
    for _ in range(3000):
        pose = kd.forward_kinematics(arm, state.q)
        goal = ctl.leader_assist_goal(pose, z_t)
        tau = ctl.leader_shared_torque(arm, state, goal, gains, zeros)
        state = kd.step(arm, state, tau, zeros, 1e-3)
    z_final = kd.forward_kinematics(arm, state.q).z_axis()
    angle = math.acos(np.clip(z_final @ z_t, -1, 1))
    assert angle < 0.01


# -- follower law ------------------------------------------------------------

def test_follower_zero_error_is_dynamics_compensation(arm):
    state = resting(arm)
    tau = ctl.follower_baseline_torque(arm, state, state.q, np.zeros(arm.n),
                                       ctl.FollowerGains())
    expected = kd.bias_forces(arm, state.q, state.dq) + kd.gravity_torques(arm, state.q)
    np.testing.assert_array_equal(tau, expected)


def test_follower_single_axis_stiffness(arm):
    state = resting(arm)
    q_d = state.q.copy()
    q_d[0] += 0.01
    tau = ctl.follower_baseline_torque(arm, state, q_d, np.zeros(arm.n),
                                       ctl.FollowerGains())
    base = ctl.follower_baseline_torque(arm, state, state.q, np.zeros(arm.n),
                                        ctl.FollowerGains())
    contribution = tau - base
    np.testing.assert_allclose(contribution[0], 4.5, atol=1e-12)
    np.testing.assert_allclose(contribution[1:], np.zeros(arm.n - 1), atol=1e-12)


def test_follower_tracks_step_command(arm):
    gains = ctl.FollowerGains()
    state = resting(arm)
    q_d = arm.home()
    q_d[3] += 0.1
    dq_d = np.zeros(arm.n)
    zeros = np.zeros(arm.n)
    for _ in range(1000):
        tau = ctl.follower_baseline_torque(arm, state, q_d, dq_d, gains)
        state = kd.step(arm, state, tau, zeros, 1e-3)
    assert abs(state.q[3] - q_d[3]) < 0.002


# -- autonomy gate -----------------------------------------------------------

def ee_wrench(fx, fy, fz=0.0):
    return Wrench(force=[fx, fy, fz], moment=np.zeros(3), frame="ee")


def test_autonomy_zero_lateral_force():
    cfg = ctl.AutonomyConfig()
    assert ctl.autonomy_level(ee_wrench(0, 0, 50.0), cfg, Stage.GUIDED_INSERTION, 0.0) == 0


def test_autonomy_threshold_and_stage_gate():
    cfg = ctl.AutonomyConfig()
    w = ee_wrench(3.0, 4.0)
    assert ctl.autonomy_level(w, cfg, Stage.GUIDED_INSERTION, 0.0) == 1
    assert ctl.autonomy_level(w, cfg, Stage.POSITION_GUIDING, 0.0) == 0
    ungated = ctl.AutonomyConfig(stage_gated=False)
    assert ctl.autonomy_level(w, ungated, Stage.POSITION_GUIDING, 0.0) == 1


def test_autonomy_requires_ee_frame():
    cfg = ctl.AutonomyConfig()
    with pytest.raises(ValueError):
        ctl.autonomy_level(Wrench(force=[3, 4, 0], moment=np.zeros(3), frame="base"),
                           cfg, Stage.GUIDED_INSERTION, 0.0)


def test_autonomy_debounce_window():
    cfg = ctl.AutonomyConfig(debounce_window=0.05)
    st = ctl.AutonomyState()
    w = ee_wrench(5.0, 0.0)
    assert ctl.autonomy_level(w, cfg, Stage.GUIDED_INSERTION, 0.000, st) == 0
    assert ctl.autonomy_level(w, cfg, Stage.GUIDED_INSERTION, 0.049, st) == 0
    assert ctl.autonomy_level(w, cfg, Stage.GUIDED_INSERTION, 0.051, st) == 1
    # dropping below resets the window
    assert ctl.autonomy_level(ee_wrench(0, 0), cfg, Stage.GUIDED_INSERTION, 0.06, st) == 0
    assert ctl.autonomy_level(w, cfg, Stage.GUIDED_INSERTION, 0.07, st) == 0


# -- wiggle ------------------------------------------------------------------

def test_wiggle_at_time_zero():
    f = ctl.wiggle_force(ctl.WiggleParams(), 0.0)
    assert f[0] == pytest.approx(0.766 * math.sin(-1.562), abs=1e-12)
    assert f[1] == pytest.approx(0.906 * math.sin(0.610), abs=1e-12)
    assert f[0] == pytest.approx(-0.76597, abs=5e-5)
    assert f[1] == pytest.approx(0.51903, abs=5e-5)
    np.testing.assert_array_equal(f[[2, 3, 4, 5]], np.zeros(4))


def test_wiggle_zero_amplitude_is_exactly_zero():
    params = ctl.WiggleParams(amplitude=np.zeros(6))
    for t in (0.0, 0.1, 3.7):
        np.testing.assert_array_equal(ctl.wiggle_force(params, t), np.zeros(6))


def test_wiggle_periodicity_and_bound():
    params = ctl.WiggleParams()
    for t in np.linspace(0.0, 5.0, 1000):
        f = ctl.wiggle_force(params, float(t))
        g = ctl.wiggle_force(params, float(t) + 1.0 / 2.150)
        assert abs(f[0] - g[0]) < 1e-12
        assert np.all(np.abs(f) <= params.amplitude + 1e-15)


def test_wiggle_matches_closed_form_on_grid():
    params = ctl.WiggleParams()
    ts = np.linspace(0.0, 10.0, 1000)
    for t in ts:
        f = ctl.wiggle_force(params, float(t))
        for j in (0, 1):
            ref = params.amplitude[j] * math.sin(
                2 * math.pi * params.frequency[j] * t + params.phase[j])
            assert abs(f[j] - ref) < 1e-12


def test_wiggle_rejects_negative_time():
    with pytest.raises(ValueError):
        ctl.wiggle_force(ctl.WiggleParams(), -0.1)


# -- follower shared law -----------------------------------------------------

def test_follower_shared_eta_zero_is_bitwise_baseline(arm):
    state = JointState(q=arm.home(), dq=np.full(arm.n, 0.1), ddq=np.zeros(arm.n))
    gains = ctl.FollowerGains()
    q_d = arm.home() + 0.05
    f_ff = ctl.wiggle_force(ctl.WiggleParams(), 0.3)
    shared = ctl.follower_shared_torque(arm, state, q_d, np.zeros(arm.n),
                                        gains, 0, f_ff)
    base = ctl.follower_baseline_torque(arm, state, q_d, np.zeros(arm.n), gains)
    np.testing.assert_array_equal(shared, base)


def test_follower_shared_adds_masked_wiggle(arm):
    state = resting(arm)
    gains = ctl.FollowerGains()
    f_ff = np.array([0.5, 0.0, 9.0, 9.0, 9.0, 9.0])  # only x/y survive lambda2
    shared = ctl.follower_shared_torque(arm, state, state.q, np.zeros(arm.n),
                                        gains, 1, f_ff)
    base = ctl.follower_baseline_torque(arm, state, state.q, np.zeros(arm.n), gains)
    J = kd.geometric_jacobian(arm, state.q)
    np.testing.assert_allclose(shared - base,
                               J.T @ np.array([0.5, 0, 0, 0, 0, 0]), atol=1e-12)


# -- feedback torque ---------------------------------------------------------

def test_feedback_masks_moments(arm):
    J = kd.geometric_jacobian(arm, arm.home())
    w = Wrench(force=np.zeros(3), moment=[1.0, 1.0, 1.0])
    tau = ctl.feedback_torque(J, w, ctl.FollowerGains().lambda3)
    np.testing.assert_array_equal(tau, np.zeros(arm.n))


def test_feedback_transmits_forces_exactly(arm):
    J = kd.geometric_jacobian(arm, arm.home())
    f = np.array([1.5, -2.0, 0.7])
    w = Wrench(force=f, moment=[3.0, -1.0, 2.0])
    tau = ctl.feedback_torque(J, w, ctl.FollowerGains().lambda3)
    np.testing.assert_allclose(tau, J[:3].T @ f, atol=1e-12)


def test_feedback_masking_idempotent(arm):
    rng = np.random.default_rng(41)
    J = kd.geometric_jacobian(arm, arm.home())
    lam3 = ctl.FollowerGains().lambda3
    vec = rng.normal(size=6)
    w = Wrench(force=vec[:3], moment=vec[3:])
    masked = Wrench(force=vec[:3] * lam3[:3], moment=vec[3:] * lam3[3:])
    np.testing.assert_array_equal(ctl.feedback_torque(J, w, lam3),
                                  ctl.feedback_torque(J, masked, lam3))


def test_feedback_requires_base_frame(arm):
    J = kd.geometric_jacobian(arm, arm.home())
    with pytest.raises(ValueError):
        ctl.feedback_torque(J, Wrench(force=[1, 0, 0], moment=np.zeros(3), frame="ee"),
                            ctl.FollowerGains().lambda3)


# -- torque clipping ---------------------------------------------------------

def test_clip_torque(arm):
    tau = np.zeros(arm.n)
    tau[0] = arm.tau_limit[0] + 10.0
    clipped = ctl.clip_torque(arm, tau)
    assert clipped[0] == arm.tau_limit[0]
    np.testing.assert_array_equal(clipped[1:], tau[1:])
