"""Task presets, penalty contact oracles, stage machine, adjudication."""

import math

import numpy as np
import pytest

from teleosim import environment as env
from teleosim.kinodynamics import Pose

DOWN = np.array([0.0, 0.0, -1.0])
EE_DOWN_QUAT = np.array([1.0, 0.0, 0.0, 0.0])   # half-turn about x: z points down


def coaxial_pose(task, geo, depth=0.0, offset=(0.0, 0.0)):
    """EE pose placing the peg tip at the given insertion depth and lateral
    offset relative to the hole mouth (hole axis points straight down)."""
    tip = geo.p_hole + np.array([offset[0], offset[1], -depth])
    ee = tip + np.array([0.0, 0.0, geo.peg_length])
    return Pose(position=ee, orientation=EE_DOWN_QUAT.copy())


# -- presets -----------------------------------------------------------------

def test_presets_match_shipped_benchmark_values():
    expected = {
        "A": (env.PegShape.CYLINDER, 50.0, (40.0,), 0.25, "PAM", "CNC", "PLA", "3D printing"),
        "B": (env.PegShape.CYLINDER, 50.0, (40.0,), 0.13, "PAM", "CNC", "PLA", "3D printing"),
        "C": (env.PegShape.CYLINDER, 50.0, (40.0,), 0.07, "PAM", "CNC", "PLA", "3D printing"),
        "D": (env.PegShape.CUBOID, 60.0, (35.0, 25.0), 0.10, "PLA", "3D printing", "PLA", "3D printing"),
        "E": (env.PegShape.HEX_PRISM, 50.0, (11.0,), 0.10, "PLA", "3D printing", "PLA", "3D printing"),
        "F": (env.PegShape.CYLINDER, 50.0, (20.0,), 0.02, "PAM", "CNC", "Aluminum", "CNC"),
    }
    for tid, row in expected.items():
        t = env.task_preset(tid)
        assert (t.peg_shape, t.peg_length_mm, t.peg_dims_mm, t.clearance_mm,
                t.peg_material, t.peg_process, t.hole_material, t.hole_process) == row
        assert t.geometry_scale == 10.0


def test_preset_unknown_task():
    with pytest.raises(KeyError):
        env.task_preset("G")


def test_task_config_validation():
    t = env.task_preset("A")
    with pytest.raises(ValueError):
        env.task_preset("A", clearance_mm=0.0)
    with pytest.raises(ValueError):
        env.TaskConfig(id="x", peg_shape=env.PegShape.CUBOID, peg_length_mm=60,
                       peg_dims_mm=(35.0,), clearance_mm=0.1, hole_pose=t.hole_pose)
    with pytest.raises(ValueError):
        env.task_preset("A", success_fraction=1.5)


def test_contact_params_validation():
    with pytest.raises(ValueError):
        env.ContactParams(sample_count=8)
    with pytest.raises(ValueError):
        env.ContactParams(k_n=0.0)
    with pytest.raises(ValueError):
        env.ContactParams(mu=-0.1)


# -- hole-normal estimate ----------------------------------------------------

def test_normal_estimate_zero_noise_is_exact():
    task = env.task_preset("A")
    z = env.surface_normal_estimate(task, 0.0, seed=0)
    np.testing.assert_allclose(z, DOWN, atol=1e-15)


def test_normal_estimate_bounded_and_deterministic():
    task = env.task_preset("B")
    for seed in range(20):
        z1 = env.surface_normal_estimate(task, 0.02, seed=seed)
        z2 = env.surface_normal_estimate(task, 0.02, seed=seed)
        np.testing.assert_array_equal(z1, z2)
        assert abs(np.linalg.norm(z1) - 1.0) < 1e-12
        ang = math.acos(np.clip(z1 @ DOWN, -1.0, 1.0))
        assert ang <= 0.02 + 1e-12


# -- contact wrench ----------------------------------------------------------

@pytest.fixture(scope="module")
def params():
    return env.ContactParams()


def wrench_at(task, geo, params, depth, offset, twist=None):
    pose = coaxial_pose(task, geo, depth=depth, offset=offset)
    tw = np.zeros(6) if twist is None else np.asarray(twist, float)
    return env.contact_wrench(task, pose, tw, params, geometry=geo)


def test_coaxial_insertion_is_contact_free(params):
    for tid in ("A", "D", "E"):
        task = env.task_preset(tid)
        geo = env.task_geometry(task, params)
        w = wrench_at(task, geo, params, depth=0.5 * geo.depth, offset=(0, 0))
        np.testing.assert_array_equal(w.force, np.zeros(3))
        np.testing.assert_array_equal(w.moment, np.zeros(3))


def test_half_clearance_offset_still_contact_free(params):
    task = env.task_preset("A")
    geo = env.task_geometry(task, params)
    c = task.clearance_mm * task.geometry_scale * 1e-3
    w = wrench_at(task, geo, params, depth=0.5 * geo.depth, offset=(0.5 * c, 0))
    np.testing.assert_array_equal(w.force, np.zeros(3))


def test_single_point_penalty_force(params):
    # scale 1, one sample ring inside the bore, offset aligned with a sample
    task = env.task_preset("A", geometry_scale=1.0)
    geo = env.task_geometry(task, params)
    c = task.clearance_mm * 1e-3
    delta = 1e-5
    w = wrench_at(task, geo, params, depth=0.005, offset=(c + delta, 0.0))
    # EE frame x equals world x here; force pushes back along -x
    assert w.force[0] == pytest.approx(-params.k_n * delta, rel=1e-6)
    assert abs(w.force[1]) < 1e-9
    np.testing.assert_allclose(np.linalg.norm(w.force), params.k_n * delta, rtol=1e-6)


def test_mirrored_offsets_give_mirrored_wrench(params):
    task = env.task_preset("B")
    geo = env.task_geometry(task, params)
    c = task.clearance_mm * task.geometry_scale * 1e-3
    off = c + 2e-4
    wp = wrench_at(task, geo, params, depth=0.5 * geo.depth, offset=(+off, 0))
    wm = wrench_at(task, geo, params, depth=0.5 * geo.depth, offset=(-off, 0))
    scale = np.linalg.norm(wp.force)
    assert scale > 0.0
    assert abs(wp.force[0] + wm.force[0]) / scale < 0.01
    assert abs(wp.force[2] - wm.force[2]) / max(scale, 1e-12) < 0.01


def test_cuboid_and_hex_face_offsets_push_back(params):
    for tid in ("D", "E"):
        task = env.task_preset(tid)
        geo = env.task_geometry(task, params)
        c = task.clearance_mm * task.geometry_scale * 1e-3
        w = wrench_at(task, geo, params, depth=0.5 * geo.depth, offset=(c + 2e-4, 0))
        assert w.force[0] < 0.0
        assert abs(w.force[1]) < 0.01 * abs(w.force[0])


def test_axial_slide_dissipates(params):
    # steady lateral penetration, sliding down: friction power must be <= 0
    task = env.task_preset("A")
    geo = env.task_geometry(task, params)
    c = task.clearance_mm * task.geometry_scale * 1e-3
    v = np.array([0.0, 0.0, -0.05, 0.0, 0.0, 0.0])
    w = wrench_at(task, geo, params, depth=0.6 * geo.depth, offset=(c + 5e-4, 0), twist=v)
    pose = coaxial_pose(task, geo, depth=0.6 * geo.depth, offset=(c + 5e-4, 0))
    f_world = pose.rotation() @ w.force
    power = f_world @ v[:3]
    assert power <= 1e-9
    assert f_world[2] > 0.0      # friction opposes the downward slide


def test_normal_approach_damping_dissipates(params):
    task = env.task_preset("A")
    geo = env.task_geometry(task, params)
    c = task.clearance_mm * task.geometry_scale * 1e-3
    v = np.array([0.05, 0.0, 0.0, 0.0, 0.0, 0.0])
    w = wrench_at(task, geo, params, depth=0.6 * geo.depth, offset=(c + 5e-4, 0), twist=v)
    pose = coaxial_pose(task, geo, depth=0.6 * geo.depth, offset=(c + 5e-4, 0))
    f_world = pose.rotation() @ w.force
    assert f_world @ v[:3] <= 1e-9


def test_fast_retreat_produces_no_adhesion(params):
    task = env.task_preset("A")
    geo = env.task_geometry(task, params)
    c = task.clearance_mm * task.geometry_scale * 1e-3
    v = np.array([-0.5, 0.0, 0.0, 0.0, 0.0, 0.0])
    w = wrench_at(task, geo, params, depth=0.6 * geo.depth, offset=(c + 1e-5, 0), twist=v)
    np.testing.assert_array_equal(w.force, np.zeros(3))


def test_contact_rejects_non_finite_pose(params):
    task = env.task_preset("A")
    geo = env.task_geometry(task, params)
    pose = coaxial_pose(task, geo)
    with pytest.raises(ValueError):
        env.contact_wrench(task, pose, [np.nan, 0, 0, 0, 0, 0], params, geometry=geo)


# -- stage machine -----------------------------------------------------------

def test_stage_progression_and_latching(params):
    task = env.task_preset("A")
    geo = env.task_geometry(task, params)
    s = env.StageState()

    high = coaxial_pose(task, geo, depth=-0.10)     # 10 cm above the mouth
    s = env.stage_update(s, high, task, now=1.0, geometry=geo)
    assert s.stage == env.Stage.POSITION_GUIDING

    near = coaxial_pose(task, geo, depth=-0.001)    # 1 mm above, on axis
    s = env.stage_update(s, near, task, now=2.0, geometry=geo)
    assert s.stage == env.Stage.GUIDED_INSERTION
    assert s.t_stage_entry == 2.0
    assert s.t_stage1 == 2.0

    # latching: pulling away does not revert
    s = env.stage_update(s, high, task, now=3.0, geometry=geo)
    assert s.stage == env.Stage.GUIDED_INSERTION

    deep = coaxial_pose(task, geo, depth=geo.depth)
    s = env.stage_update(s, deep, task, now=4.0, geometry=geo)
    assert s.stage == env.Stage.DONE
    assert s.insertion_depth == pytest.approx(geo.depth)

    s = env.stage_update(s, high, task, now=5.0, geometry=geo)
    assert s.stage == env.Stage.DONE


def test_stage_trigger_requires_lateral_capture(params):
    task = env.task_preset("A")
    geo = env.task_geometry(task, params)
    s = env.StageState()
    far = coaxial_pose(task, geo, depth=-0.001,
                       offset=(geo.trigger_radius + 0.01, 0.0))
    s = env.stage_update(s, far, task, now=1.0, geometry=geo)
    assert s.stage == env.Stage.POSITION_GUIDING


def test_done_at_success_fraction(params):
    task = env.task_preset("A")
    geo = env.task_geometry(task, params)
    s = env.StageState(stage=env.Stage.GUIDED_INSERTION, t_stage_entry=1.0, t_stage1=1.0)
    pose = coaxial_pose(task, geo, depth=geo.success_fraction * geo.depth)
    s = env.stage_update(s, pose, task, now=2.0, geometry=geo)
    assert s.stage == env.Stage.DONE


# -- adjudication ------------------------------------------------------------

def test_adjudicate_success_records_actual_time():
    s = env.StageState(stage=env.Stage.DONE, t_stage_entry=12.3,
                       insertion_depth=0.2, t_stage1=4.0)
    out = env.adjudicate(s, contact_force_norm=5.0, now=12.3)
    assert out.success
    assert out.t_total == 12.3
    assert out.t_stage1 == 4.0
    assert out.t_stage2 == pytest.approx(8.3)
    assert out.failure_reason == env.FailureReason.NONE


def test_adjudicate_stage_timeout_records_cap():
    s = env.StageState(stage=env.Stage.GUIDED_INSERTION, t_stage_entry=5.0, t_stage1=5.0)
    out = env.adjudicate(s, contact_force_norm=0.0, now=35.02)
    assert not out.success
    assert out.failure_reason == env.FailureReason.TIMEOUT
    assert out.t_total == 60.0


def test_adjudicate_total_timeout():
    s = env.StageState(stage=env.Stage.GUIDED_INSERTION, t_stage_entry=58.0, t_stage1=58.0)
    out = env.adjudicate(s, contact_force_norm=0.0, now=60.0)
    assert out is not None
    assert out.failure_reason == env.FailureReason.TIMEOUT


def test_adjudicate_safety_margin():
    s = env.StageState(stage=env.Stage.GUIDED_INSERTION, t_stage_entry=3.0, t_stage1=3.0)
    out = env.adjudicate(s, contact_force_norm=80.0, now=10.0)
    assert not out.success
    assert out.failure_reason == env.FailureReason.SAFETY_MARGIN
    assert out.t_total == 60.0


def test_adjudicate_pending():
    s = env.StageState(stage=env.Stage.GUIDED_INSERTION, t_stage_entry=3.0, t_stage1=3.0)
    assert env.adjudicate(s, contact_force_norm=5.0, now=10.0) is None
