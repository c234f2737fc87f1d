"""Kinematics, stepping, grasps, and the collision detector vs brute force."""

import math

import numpy as np
import pytest

from siteswarm.errors import ShapeError
from siteswarm.geometry import Segment, segment_segment_distance
from siteswarm.planarsim import (
    ArmSpec,
    Grasp,
    ObjectSpec,
    WorldSpec,
    WorldState,
    compose_pose,
    detect_collisions,
    forward_kinematics,
    gripper_pose,
    relative_pose,
    step,
    tip_alignment,
    try_grasp,
    _link_object_distance,
)
from siteswarm.tasks import LEFT_ARM, RIGHT_ARM, BODY_HOME, task_spec


def two_link_spec(lengths=(1.0, 1.0)):
    return ArmSpec(
        base_pos=(0.0, 0.0),
        base_heading=0.0,
        link_lengths=lengths,
        joint_limits=tuple((-math.pi, math.pi) for _ in lengths),
        home_angles=tuple(0.0 for _ in lengths),
    )


def fresh_world(spec, rng=None):
    rng = rng or np.random.default_rng(0)
    world = WorldState(
        body_pose=BODY_HOME,
        joint_angles=[
            [float(rng.uniform(lo, hi)) for lo, hi in arm.joint_limits]
            for arm in spec.wspec.arms
        ],
        object_poses={},
        picked=[False] * spec.n_arms,
        placed=[False] * spec.n_arms,
    )
    for name in spec.wspec.objects:
        world.object_poses[name] = (
            float(rng.uniform(-0.5, 0.5)),
            float(rng.uniform(0.0, 0.7)),
            float(rng.uniform(-math.pi, math.pi)),
        )
    return world


# -- forward kinematics -----------------------------------------------------------


def test_fk_straight_chain():
    _, tip = forward_kinematics(two_link_spec(), [0.0, 0.0])
    assert tip == pytest.approx((2.0, 0.0, 0.0))


def test_fk_first_joint_quarter_turn():
    _, tip = forward_kinematics(two_link_spec(), [math.pi / 2.0, 0.0])
    assert tip[0] == pytest.approx(0.0, abs=1e-12)
    assert tip[1] == pytest.approx(2.0)
    assert tip[2] == pytest.approx(math.pi / 2.0)


def test_fk_link_segments_connect():
    spec = two_link_spec((0.5, 0.7))
    links, tip = forward_kinematics(spec, [0.3, -0.8])
    assert links[0].b == links[1].a
    assert links[1].b == pytest.approx((tip[0], tip[1]))


def test_fk_respects_body_pose():
    spec = ArmSpec(
        base_pos=(0.0, 0.2),
        base_heading=0.0,
        link_lengths=(1.0,),
        joint_limits=((-3.0, 3.0),),
        home_angles=(0.0,),
    )
    _, tip = forward_kinematics(spec, [0.0], body_pose=(0.0, 0.0, math.pi / 2.0))
    # mount is 0.2 to the body's left: world (-0.2, 0), arm points +y
    assert tip == pytest.approx((-0.2, 1.0, math.pi / 2.0))


def test_fk_angle_count_mismatch():
    with pytest.raises(ShapeError):
        forward_kinematics(two_link_spec(), [0.0])


def test_fk_triangle_inequality_10k_random():
    spec = two_link_spec((0.4, 0.3))
    total = 0.7
    rng = np.random.default_rng(12)
    for _ in range(10_000):
        q = rng.uniform(-math.pi, math.pi, size=2)
        _, tip = forward_kinematics(spec, q)
        assert math.hypot(tip[0], tip[1]) <= total + 1e-12


# -- pose algebra ------------------------------------------------------------------


def test_compose_relative_roundtrip():
    rng = np.random.default_rng(3)
    for _ in range(200):
        base = tuple(rng.uniform(-1, 1, size=3))
        local = tuple(rng.uniform(-1, 1, size=3))
        world = compose_pose(base, local)
        back = relative_pose(base, world)
        assert back[0] == pytest.approx(local[0], abs=1e-12)
        assert back[1] == pytest.approx(local[1], abs=1e-12)
        assert math.cos(back[2]) == pytest.approx(math.cos(local[2]), abs=1e-12)
        assert math.sin(back[2]) == pytest.approx(math.sin(local[2]), abs=1e-12)


# -- stepping -----------------------------------------------------------------------


def world_for_task1():
    spec = task_spec("1")
    world = WorldState(
        body_pose=BODY_HOME,
        joint_angles=[list(a.home_angles) for a in spec.wspec.arms],
        object_poses={
            "bolt_0": (-0.1, 0.3, 0.0),
            "bolt_1": (0.1, 0.3, 0.0),
            "platform": (0.0, 0.62, 0.0),
        },
        picked=[False, False],
        placed=[False, False],
    )
    return spec, world


def test_zero_action_changes_only_step_counter():
    spec, world = world_for_task1()
    before = world.copy()
    step(world, spec.wspec, [np.zeros(3), np.zeros(3)])
    assert world.step_count == before.step_count + 1
    assert world.joint_angles == before.joint_angles
    assert world.object_poses == before.object_poses


def test_action_clamps_at_joint_limit():
    spec, world = world_for_task1()
    lo, hi = spec.wspec.arms[0].joint_limits[0]
    world.joint_angles[0][0] = hi - 0.01
    step(world, spec.wspec, [np.array([1.0, 0.0, 0.0]), np.zeros(3)])
    assert world.joint_angles[0][0] == hi


def test_step_reversible_when_unclamped():
    spec, world = world_for_task1()
    q0 = world.joint_angles[0][1]
    step(world, spec.wspec, [np.array([0.0, 0.5, 0.0]), np.zeros(3)])
    step(world, spec.wspec, [np.array([0.0, -0.5, 0.0]), np.zeros(3)])
    assert world.joint_angles[0][1] == pytest.approx(q0, abs=1e-15)


def test_step_deterministic_bitwise():
    spec, _ = world_for_task1()
    rng = np.random.default_rng(5)
    actions = [rng.uniform(-1, 1, size=3), rng.uniform(-1, 1, size=3)]
    w1 = fresh_world(spec, np.random.default_rng(2))
    w2 = w1.copy()
    step(w1, spec.wspec, actions)
    step(w2, spec.wspec, actions)
    assert w1.to_dict() == w2.to_dict()


def test_step_wrong_agent_count():
    spec, world = world_for_task1()
    with pytest.raises(ShapeError):
        step(world, spec.wspec, [np.zeros(3)])


def test_joint_limits_hold_after_random_steps():
    spec, world = world_for_task1()
    rng = np.random.default_rng(9)
    for _ in range(200):
        step(world, spec.wspec, [rng.uniform(-2, 2, size=3), rng.uniform(-2, 2, size=3)])
        for i, arm in enumerate(spec.wspec.arms):
            for q, (lo, hi) in zip(world.joint_angles[i], arm.joint_limits):
                assert lo <= q <= hi


def test_mobile_base_unicycle_motion():
    spec = task_spec("4")
    world = WorldState(
        body_pose=(0.0, 0.0, math.pi / 2.0),
        joint_angles=[list(a.home_angles) for a in spec.wspec.arms],
        object_poses={"box": (0.0, 2.0, 0.0)},
        picked=[False, False],
        placed=[False, False],
    )
    step(world, spec.wspec, [np.zeros(3), np.zeros(3), np.array([1.0, 0.0])])
    x, y, h = world.body_pose
    assert x == pytest.approx(0.0, abs=1e-12)
    assert y == pytest.approx(spec.wspec.base_speed_limit)
    assert h == pytest.approx(math.pi / 2.0)


def test_base_pushes_box_out():
    spec = task_spec("4")
    world = WorldState(
        body_pose=(0.0, 0.0, math.pi / 2.0),
        joint_angles=[list(a.home_angles) for a in spec.wspec.arms],
        object_poses={"box": (0.0, 0.3, 0.0)},  # overlapping the base disc
        picked=[False, False],
        placed=[False, False],
    )
    before = world.object_poses["box"]
    step(world, spec.wspec, [np.zeros(3), np.zeros(3), np.zeros(2)])
    after = world.object_poses["box"]
    assert after[1] > before[1]  # shoved away from the base
    moved = math.hypot(after[0] - before[0], after[1] - before[1])
    assert moved > 0.0


# -- grasping -----------------------------------------------------------------------


def test_try_grasp_attaches_when_close_and_aligned():
    spec, world = world_for_task1()
    tip = gripper_pose(world, spec.wspec, 0)
    ahead = (
        tip[0] + 0.05 * math.cos(tip[2]),
        tip[1] + 0.05 * math.sin(tip[2]),
        0.0,
    )
    world.object_poses["bolt_0"] = ahead
    assert try_grasp(world, spec.wspec, 0, "bolt_0")
    assert world.grasps["bolt_0"].arm == 0


def test_try_grasp_rejects_far_object():
    spec, world = world_for_task1()
    world.object_poses["bolt_0"] = (5.0, 5.0, 0.0)
    assert not try_grasp(world, spec.wspec, 0, "bolt_0")


def test_try_grasp_rejects_misaligned():
    spec, world = world_for_task1()
    tip = gripper_pose(world, spec.wspec, 0)
    sideways = (
        tip[0] + 0.05 * math.cos(tip[2] + math.pi / 2.0),
        tip[1] + 0.05 * math.sin(tip[2] + math.pi / 2.0),
        0.0,
    )
    world.object_poses["bolt_0"] = sideways
    d, align = tip_alignment(tip, sideways[:2])
    assert d < 0.1 and align < 0.95
    assert not try_grasp(world, spec.wspec, 0, "bolt_0")


def test_grasped_object_follows_gripper_rigidly():
    """Grasp rigidity: pose recomputed from tip frame matches within 1e-12."""
    spec, world = world_for_task1()
    tip = gripper_pose(world, spec.wspec, 0)
    world.object_poses["bolt_0"] = (
        tip[0] + 0.04 * math.cos(tip[2]),
        tip[1] + 0.04 * math.sin(tip[2]),
        0.3,
    )
    assert try_grasp(world, spec.wspec, 0, "bolt_0")
    offset = world.grasps["bolt_0"].offset
    rng = np.random.default_rng(21)
    for _ in range(50):
        step(world, spec.wspec, [rng.uniform(-1, 1, size=3), rng.uniform(-1, 1, size=3)])
        tip = gripper_pose(world, spec.wspec, 0)
        expect = compose_pose(tip, offset)
        got = world.object_poses["bolt_0"]
        assert got[0] == pytest.approx(expect[0], abs=1e-12)
        assert got[1] == pytest.approx(expect[1], abs=1e-12)


# -- collision detection ----------------------------------------------------------------


def brute_force_report(world, wspec):
    """All-pairs re-check with the documented rule set, written independently."""
    links = [
        forward_kinematics(arm, world.joint_angles[i], world.body_pose)[0]
        for i, arm in enumerate(wspec.arms)
    ]
    c_s = 0
    for i in range(len(links)):
        for j in range(len(links)):
            for a in range(len(links[i])):
                for b in range(len(links[j])):
                    if (i, a) >= (j, b):
                        continue
                    if i == j and abs(a - b) < 2:
                        continue
                    if segment_segment_distance(links[i][a], links[j][b]) < wspec.collision_margin:
                        c_s = 1
    c_o = 0
    for i in range(len(links)):
        for link in links[i]:
            for name, ospec in wspec.objects.items():
                grasp = world.grasps.get(name)
                if grasp is not None and grasp.arm == i:
                    continue
                d = _link_object_distance(link, world.object_poses[name], ospec)
                if d < wspec.collision_margin:
                    c_o = 1
    if wspec.mobile_base:
        bx, by, _ = world.body_pose
        for name, ospec in wspec.objects.items():
            if world.grasps.get(name) is not None:
                continue
            probe = Segment(bx, by, bx, by)
            d = _link_object_distance(probe, world.object_poses[name], ospec)
            if d - wspec.base_radius < wspec.collision_margin:
                c_o = 1
    return c_s, c_o


def test_overlapping_arms_are_self_collision():
    spec = task_spec("1")
    world = WorldState(
        body_pose=BODY_HOME,
        joint_angles=[[-0.9, 0.0, 0.0], [0.9, 0.0, 0.0]],  # arms folded inward, crossing
        object_poses={
            "bolt_0": (-1.0, -1.0, 0.0),
            "bolt_1": (1.0, -1.0, 0.0),
            "platform": (0.0, 0.62, 0.0),
        },
        picked=[False, False],
        placed=[False, False],
    )
    report = detect_collisions(world, spec.wspec)
    assert report.c_s == 1


def test_separated_arms_no_self_collision():
    spec, world = world_for_task1()
    world.joint_angles = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]  # leaning apart
    report = detect_collisions(world, spec.wspec)
    assert report.c_s == 0


def test_collision_symmetry_under_arm_swap():
    spec = task_spec("1")
    rng = np.random.default_rng(17)
    for _ in range(50):
        world = fresh_world(spec, rng)
        world.object_poses["platform"] = (0.0, 0.62, 0.0)
        report = detect_collisions(world, spec.wspec)
        swapped = world.copy()
        swapped.joint_angles = [world.joint_angles[1], world.joint_angles[0]]
        # swapping both mounts and angles mirrors the swap exactly
        swapped_spec = WorldSpec(
            arms=(spec.wspec.arms[1], spec.wspec.arms[0]),
            objects=spec.wspec.objects,
        )
        report2 = detect_collisions(swapped, swapped_spec)
        assert report.c_s == report2.c_s
        assert report.c_o == report2.c_o


def test_detector_matches_brute_force_on_100_random_worlds():
    spec = task_spec("1")
    rng = np.random.default_rng(1234)
    disagreements = 0
    for _ in range(100):
        world = fresh_world(spec, rng)
        world.object_poses["platform"] = (0.0, 0.62, 0.0)
        if rng.random() < 0.3:
            # sometimes attach a bolt so grasp exclusions get exercised
            world.grasps["bolt_0"] = Grasp(0, (0.02, 0.0, 0.0))
        report = detect_collisions(world, spec.wspec)
        if (report.c_s, report.c_o) != brute_force_report(world, spec.wspec):
            disagreements += 1
    assert disagreements == 0


def test_detector_matches_brute_force_task4_base():
    spec = task_spec("4")
    rng = np.random.default_rng(55)
    for _ in range(50):
        world = WorldState(
            body_pose=(
                float(rng.uniform(-1, 1)),
                float(rng.uniform(0, 2)),
                float(rng.uniform(-math.pi, math.pi)),
            ),
            joint_angles=[
                [float(rng.uniform(lo, hi)) for lo, hi in arm.joint_limits]
                for arm in spec.wspec.arms
            ],
            object_poses={
                "box": (
                    float(rng.uniform(-1, 1)),
                    float(rng.uniform(0, 2)),
                    float(rng.uniform(-math.pi, math.pi)),
                )
            },
            picked=[False, False],
            placed=[False, False],
        )
        report = detect_collisions(world, spec.wspec)
        assert (report.c_s, report.c_o) == brute_force_report(world, spec.wspec)


def test_grasped_object_ignored_against_holder_only():
    spec, world = world_for_task1()
    tip = gripper_pose(world, spec.wspec, 0)
    # bolt sits right on the holder's tip: no collision for arm 0 once grasped
    world.object_poses["bolt_0"] = (tip[0], tip[1], 0.0)
    world.grasps["bolt_0"] = Grasp(0, (0.0, 0.0, 0.0))
    report = detect_collisions(world, spec.wspec)
    assert all("bolt_0" != b for a, b in report.pairs if a.startswith("arm0"))


def test_world_serialization_roundtrip():
    spec, world = world_for_task1()
    world.grasps["bolt_1"] = Grasp(1, (0.01, -0.02, 0.3))
    world.picked[1] = True
    d = world.to_dict()
    back = WorldState.from_dict(d)
    assert back.to_dict() == d
