"""Closed-form planar inverse kinematics and the policy-to-IK finishing move.

A 3-joint arm (two positioning links plus a wrist link) admits the textbook
two-link law-of-cosines solution once the wrist point is peeled off the
target pose.  ``finish_with_ik`` then walks the gripper along a straight
Cartesian path, one IK solve per waypoint, respecting joint and per-step
delta limits and keeping collision checks on (violations are reported, not
ignored).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ShapeError, UnreachableError
from .geometry import wrap_angle
from .planarsim import (
    ArmSpec,
    Pose,
    WorldSpec,
    WorldState,
    arm_base_pose,
    compose_pose,
    detect_collisions,
    forward_kinematics,
    gripper_pose,
    relative_pose,
)

BRANCHES = ("elbow_up", "elbow_down")


@dataclass(frozen=True)
class IkSolution:
    angles: tuple[float, float, float]
    branch: str
    residual: float


def _branch_angles(
    spec: ArmSpec, local: Pose, branch: str
) -> tuple[float, float, float] | None:
    """Joint angles for one elbow branch, or None when limits are violated."""
    l1, l2, l3 = spec.link_lengths
    px, py, phi = local
    wx = px - l3 * math.cos(phi)
    wy = py - l3 * math.sin(phi)
    rr = wx * wx + wy * wy
    d = (rr - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    if d > 1.0 + 1e-12 or d < -1.0 - 1e-12:
        raise UnreachableError(
            f"wrist point ({wx:.4f}, {wy:.4f}) outside reachable annulus"
        )
    d = max(-1.0, min(1.0, d))
    q2 = math.acos(d) if branch == "elbow_up" else -math.acos(d)
    q1 = wrap_angle(
        math.atan2(wy, wx) - math.atan2(l2 * math.sin(q2), l1 + l2 * math.cos(q2))
    )
    q3 = wrap_angle(phi - q1 - q2)
    angles = (q1, q2, q3)
    for q, (lo, hi) in zip(angles, spec.joint_limits):
        if q < lo or q > hi:
            return None
    return angles


def solve_ik(
    spec: ArmSpec,
    target: Pose,
    body_pose: Pose = (0.0, 0.0, 0.0),
    current_angles=None,
    branch: str | None = None,
) -> IkSolution:
    """Closed-form IK for a 3-joint planar arm.

    Among the in-limit elbow branches, returns the one closest in joint space
    to `current_angles` (or the home pose).  `branch` forces a specific elbow
    configuration.  Raises UnreachableError when the target is outside the
    annulus or every branch violates joint limits.
    """
    if spec.n_joints != 3:
        raise ShapeError(f"solve_ik needs a 3-joint arm, got {spec.n_joints} joints")
    if branch is not None and branch not in BRANCHES:
        raise ShapeError(f"unknown branch {branch!r}")
    if current_angles is None:
        current_angles = spec.home_angles or (0.0, 0.0, 0.0)

    local = relative_pose(arm_base_pose(spec, body_pose), target)
    candidates: list[tuple[str, tuple[float, float, float]]] = []
    for tag in BRANCHES if branch is None else (branch,):
        angles = _branch_angles(spec, local, tag)
        if angles is not None:
            candidates.append((tag, angles))
    if not candidates:
        raise UnreachableError("every in-annulus branch violates joint limits")

    def joint_distance(angles) -> float:
        return sum((a - b) ** 2 for a, b in zip(angles, current_angles))

    tag, angles = min(candidates, key=lambda c: joint_distance(c[1]))
    _, tip = forward_kinematics(spec, angles, body_pose)
    residual = math.hypot(tip[0] - target[0], tip[1] - target[1])
    return IkSolution(angles, tag, residual)


@dataclass
class FinishResult:
    """Outcome of one IK finishing move."""

    success: bool
    steps: int
    tip_error: float
    branch: str | None = None
    failure: str | None = None  # unreachable | joint_limit | collision | delta_limit | max_steps
    failure_step: int | None = None
    trajectory: list[tuple[float, float, float]] = field(default_factory=list)
    collided_with: tuple[str, str] | None = None


def finish_with_ik(
    world: WorldState,
    wspec: WorldSpec,
    arm: int,
    goal: Pose,
    max_steps: int = 80,
    waypoint_spacing: float = 0.005,
    ignore_objects: tuple[str, ...] = (),
) -> FinishResult:
    """Drive `arm`'s gripper along a straight line to `goal` via per-waypoint IK.

    Works on a copy of the world (the caller applies `trajectory` if wanted).
    The elbow branch is locked at the first waypoint so the arm cannot flip
    mid-path; success requires a final tip error below 1e-3 m and no
    collision along the way.  `ignore_objects` exempts the intended contact
    (e.g. the object being picked) from collision checks.
    """
    sim = world.copy()
    spec = wspec.arms[arm]
    start = gripper_pose(sim, wspec, arm)
    dist = math.hypot(goal[0] - start[0], goal[1] - start[1])
    dh = wrap_angle(goal[2] - start[2])

    if dist < 1e-12 and abs(dh) < 1e-12:
        return FinishResult(True, 0, dist, branch=None)

    check_spec = wspec
    if ignore_objects:
        keep = {k: v for k, v in wspec.objects.items() if k not in ignore_objects}
        check_spec = WorldSpec(
            arms=wspec.arms,
            objects=keep,
            mobile_base=wspec.mobile_base,
            base_radius=wspec.base_radius,
            base_speed_limit=wspec.base_speed_limit,
            base_turn_limit=wspec.base_turn_limit,
            collision_margin=wspec.collision_margin,
            push_objects=(),
        )

    def target_at(s: float) -> Pose:
        return (
            start[0] + s * (goal[0] - start[0]),
            start[1] + s * (goal[1] - start[1]),
            wrap_angle(start[2] + s * dh),
        )

    base_ds = 1.0 / max(1, math.ceil(dist / waypoint_spacing))
    min_ds = base_ds / 256.0
    result = FinishResult(False, 0, dist)
    branch: str | None = None
    s = 0.0
    ds = base_ds
    while s < 1.0 - 1e-12:
        s_try = min(1.0, s + ds)
        try:
            sol = solve_ik(
                spec,
                target_at(s_try),
                sim.body_pose,
                current_angles=sim.joint_angles[arm],
                branch=branch,
            )
        except UnreachableError as err:
            kind = "joint_limit" if "limits" in str(err) else "unreachable"
            result.failure = kind
            result.failure_step = result.steps
            result.tip_error = _tip_error(sim, wspec, arm, goal)
            return result
        max_delta = max(
            abs(a - b) for a, b in zip(sol.angles, sim.joint_angles[arm])
        )
        if max_delta > spec.joint_delta_limit:
            if ds / 2.0 < min_ds:
                result.failure = "delta_limit"
                result.failure_step = result.steps
                result.tip_error = _tip_error(sim, wspec, arm, goal)
                return result
            ds /= 2.0
            continue
        if result.steps + 1 > max_steps:
            result.failure = "max_steps"
            result.failure_step = result.steps
            result.tip_error = _tip_error(sim, wspec, arm, goal)
            return result

        branch = branch or sol.branch
        sim.joint_angles[arm] = list(sol.angles)
        held = [name for name, g in sim.grasps.items() if g.arm == arm]
        if held:
            tip = gripper_pose(sim, wspec, arm)
            for name in held:
                sim.object_poses[name] = compose_pose(tip, sim.grasps[name].offset)
        report = detect_collisions(sim, check_spec)
        result.steps += 1
        result.trajectory.append(sol.angles)
        # only contacts involving the moving arm (or its cargo) can be its fault
        tag = f"arm{arm}/"
        hits = [
            p
            for p in report.pairs
            if p[0].startswith(tag) or p[1].startswith(tag) or p[1] in held
        ]
        if hits:
            result.failure = "collision"
            result.failure_step = result.steps
            result.collided_with = hits[0]
            result.tip_error = _tip_error(sim, wspec, arm, goal)
            return result
        s = s_try
        ds = min(base_ds, ds * 2.0)

    result.branch = branch
    result.tip_error = _tip_error(sim, wspec, arm, goal)
    result.success = result.tip_error < 1e-3
    if not result.success:
        result.failure = "unreachable"
        result.failure_step = result.steps
    return result


def _tip_error(sim: WorldState, wspec: WorldSpec, arm: int, goal: Pose) -> float:
    tip = gripper_pose(sim, wspec, arm)
    return math.hypot(tip[0] - goal[0], tip[1] - goal[1])
