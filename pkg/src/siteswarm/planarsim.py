"""Deterministic planar kinematic world.

Articulated arms hang off a torso (static for bench tasks, a driven unicycle
base for transport), objects are discs/segments/rectangles, grasps rigidly
attach an object to a gripper frame, and collision checks are exact segment
geometry.  No masses or contact impulses: rewards only need poses and
collision booleans.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ShapeError
from .geometry import (
    Disc,
    Rect,
    Segment,
    point_rect_distance,
    point_segment_distance,
    segment_disc_distance,
    segment_rect_distance,
    segment_segment_distance,
    wrap_angle,
)

Pose = tuple[float, float, float]


@dataclass(frozen=True)
class ArmSpec:
    """Planar serial arm rooted on the torso.

    base_pos/base_heading place the arm root in the body frame; for a static
    torso at the origin they are world coordinates.
    """

    base_pos: tuple[float, float]
    base_heading: float
    link_lengths: tuple[float, ...]
    joint_limits: tuple[tuple[float, float], ...]
    joint_delta_limit: float = 0.15
    jaw_halfwidth: float = 0.02
    home_angles: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if any(l < 0.0 for l in self.link_lengths) or sum(self.link_lengths) <= 0.0:
            raise ShapeError("link lengths must be non-negative with positive total")
        if len(self.joint_limits) != len(self.link_lengths):
            raise ShapeError("need one joint limit pair per link")
        for lo, hi in self.joint_limits:
            if lo >= hi:
                raise ShapeError(f"joint limits not ordered: ({lo}, {hi})")
        if self.home_angles and len(self.home_angles) != len(self.link_lengths):
            raise ShapeError("home angles must match joint count")

    @property
    def n_joints(self) -> int:
        return len(self.link_lengths)


@dataclass(frozen=True)
class ObjectSpec:
    """Collision shape attached to a named object pose."""

    shape: str  # "disc" | "segment" | "rect"
    radius: float = 0.0
    length: float = 0.0
    half_x: float = 0.0
    half_y: float = 0.0
    static: bool = False


@dataclass(frozen=True)
class WorldSpec:
    arms: tuple[ArmSpec, ...]
    objects: dict[str, ObjectSpec] = field(default_factory=dict)
    mobile_base: bool = False
    base_radius: float = 0.25
    base_speed_limit: float = 0.06
    base_turn_limit: float = 0.25
    collision_margin: float = 0.01
    push_objects: tuple[str, ...] = ()

    @property
    def n_agents(self) -> int:
        return len(self.arms) + (1 if self.mobile_base else 0)

    def action_dims(self) -> list[int]:
        dims = [arm.n_joints for arm in self.arms]
        if self.mobile_base:
            dims.append(2)
        return dims


@dataclass
class Grasp:
    arm: int
    offset: tuple[float, float, float]  # object pose in the gripper-tip frame


@dataclass
class CollisionReport:
    c_s: int = 0
    c_o: int = 0
    pairs: list[tuple[str, str]] = field(default_factory=list)

    def arm_hit_object(self, arm: int) -> bool:
        tag = f"arm{arm}/"
        return any(a.startswith(tag) for a, _ in self.pairs if not a.startswith("base"))

    def base_hit_object(self) -> bool:
        return any(a == "base" for a, _ in self.pairs)


@dataclass
class WorldState:
    body_pose: Pose
    joint_angles: list[list[float]]
    object_poses: dict[str, Pose]
    grasps: dict[str, Grasp] = field(default_factory=dict)
    picked: list[bool] = field(default_factory=list)
    placed: list[bool] = field(default_factory=list)
    step_count: int = 0
    collisions: CollisionReport = field(default_factory=CollisionReport)

    def copy(self) -> "WorldState":
        return WorldState(
            body_pose=self.body_pose,
            joint_angles=[list(q) for q in self.joint_angles],
            object_poses=dict(self.object_poses),
            grasps={k: Grasp(g.arm, g.offset) for k, g in self.grasps.items()},
            picked=list(self.picked),
            placed=list(self.placed),
            step_count=self.step_count,
            collisions=CollisionReport(
                self.collisions.c_s, self.collisions.c_o, list(self.collisions.pairs)
            ),
        )

    def to_dict(self) -> dict:
        return {
            "body_pose": list(self.body_pose),
            "joint_angles": [list(q) for q in self.joint_angles],
            "object_poses": {k: list(v) for k, v in self.object_poses.items()},
            "grasps": {k: [g.arm, list(g.offset)] for k, g in self.grasps.items()},
            "picked": list(self.picked),
            "placed": list(self.placed),
            "step_count": self.step_count,
            "collisions": {
                "c_s": self.collisions.c_s,
                "c_o": self.collisions.c_o,
                "pairs": [list(p) for p in self.collisions.pairs],
            },
        }

    @staticmethod
    def from_dict(d: dict) -> "WorldState":
        col = d.get("collisions", {})
        return WorldState(
            body_pose=tuple(d["body_pose"]),
            joint_angles=[list(q) for q in d["joint_angles"]],
            object_poses={k: tuple(v) for k, v in d["object_poses"].items()},
            grasps={k: Grasp(int(a), tuple(off)) for k, (a, off) in d.get("grasps", {}).items()},
            picked=list(d.get("picked", [])),
            placed=list(d.get("placed", [])),
            step_count=int(d.get("step_count", 0)),
            collisions=CollisionReport(
                int(col.get("c_s", 0)),
                int(col.get("c_o", 0)),
                [tuple(p) for p in col.get("pairs", [])],
            ),
        )


def compose_pose(base: Pose, local: Pose) -> Pose:
    """Pose of `local` (expressed in `base`'s frame) in the world frame."""
    bx, by, bh = base
    lx, ly, lh = local
    c = math.cos(bh)
    s = math.sin(bh)
    return (bx + c * lx - s * ly, by + s * lx + c * ly, wrap_angle(bh + lh))


def relative_pose(base: Pose, world: Pose) -> Pose:
    """Express a world pose in `base`'s frame (inverse of compose_pose)."""
    bx, by, bh = base
    wx, wy, wh = world
    c = math.cos(bh)
    s = math.sin(bh)
    dx = wx - bx
    dy = wy - by
    return (c * dx + s * dy, -s * dx + c * dy, wrap_angle(wh - bh))


def arm_base_pose(spec: ArmSpec, body_pose: Pose) -> Pose:
    return compose_pose(body_pose, (spec.base_pos[0], spec.base_pos[1], spec.base_heading))


def forward_kinematics(
    spec: ArmSpec, angles, body_pose: Pose = (0.0, 0.0, 0.0)
) -> tuple[list[Segment], Pose]:
    """Standard planar chain: returns one segment per link and the tip pose."""
    if len(angles) != spec.n_joints:
        raise ShapeError(f"expected {spec.n_joints} joint angles, got {len(angles)}")
    x, y, heading = arm_base_pose(spec, body_pose)
    links: list[Segment] = []
    for q, length in zip(angles, spec.link_lengths):
        heading += q
        nx = x + length * math.cos(heading)
        ny = y + length * math.sin(heading)
        links.append(Segment(x, y, nx, ny))
        x, y = nx, ny
    return links, (x, y, wrap_angle(heading))


def gripper_pose(world: WorldState, wspec: WorldSpec, arm: int) -> Pose:
    _, tip = forward_kinematics(wspec.arms[arm], world.joint_angles[arm], world.body_pose)
    return tip


def object_segment(pose: Pose, spec: ObjectSpec) -> Segment:
    half = 0.5 * spec.length
    c = math.cos(pose[2])
    s = math.sin(pose[2])
    return Segment(pose[0] - half * c, pose[1] - half * s, pose[0] + half * c, pose[1] + half * s)


def object_rect(pose: Pose, spec: ObjectSpec) -> Rect:
    return Rect(pose[0], pose[1], pose[2], spec.half_x, spec.half_y)


def _link_object_distance(link: Segment, pose: Pose, spec: ObjectSpec) -> float:
    if spec.shape == "disc":
        return segment_disc_distance(link, Disc(pose[0], pose[1], spec.radius))
    if spec.shape == "segment":
        return segment_segment_distance(link, object_segment(pose, spec))
    if spec.shape == "rect":
        return segment_rect_distance(link, object_rect(pose, spec))
    raise ShapeError(f"unknown object shape {spec.shape!r}")


def _point_object_distance(px: float, py: float, pose: Pose, spec: ObjectSpec) -> float:
    if spec.shape == "disc":
        d = math.hypot(px - pose[0], py - pose[1]) - spec.radius
        return d if d > 0.0 else 0.0
    if spec.shape == "segment":
        return point_segment_distance(px, py, object_segment(pose, spec))
    if spec.shape == "rect":
        return point_rect_distance(px, py, object_rect(pose, spec))
    raise ShapeError(f"unknown object shape {spec.shape!r}")


def detect_collisions(
    world: WorldState, wspec: WorldSpec, links_per_arm: list[list[Segment]] | None = None
) -> CollisionReport:
    """Self- and object-collision indicators.

    c_s covers link pairs of different arms plus non-adjacent links of the
    same arm; c_o covers links against objects not grasped by that same arm.
    A mobile base is additionally checked against every object.
    """
    margin = wspec.collision_margin
    if links_per_arm is None:
        links_per_arm = [
            forward_kinematics(spec, world.joint_angles[i], world.body_pose)[0]
            for i, spec in enumerate(wspec.arms)
        ]
    report = CollisionReport()

    n_arms = len(wspec.arms)
    for i in range(n_arms):
        for j in range(i + 1, n_arms):
            for k, link_a in enumerate(links_per_arm[i]):
                for l, link_b in enumerate(links_per_arm[j]):
                    if segment_segment_distance(link_a, link_b) < margin:
                        report.c_s = 1
                        report.pairs.append((f"arm{i}/link{k}", f"arm{j}/link{l}"))
    for i in range(n_arms):
        links = links_per_arm[i]
        for k in range(len(links)):
            for l in range(k + 2, len(links)):
                if segment_segment_distance(links[k], links[l]) < margin:
                    report.c_s = 1
                    report.pairs.append((f"arm{i}/link{k}", f"arm{i}/link{l}"))

    for i in range(n_arms):
        for k, link in enumerate(links_per_arm[i]):
            for name, ospec in wspec.objects.items():
                grasp = world.grasps.get(name)
                if grasp is not None and grasp.arm == i:
                    continue
                if _link_object_distance(link, world.object_poses[name], ospec) < margin:
                    report.c_o = 1
                    report.pairs.append((f"arm{i}/link{k}", name))

    if wspec.mobile_base:
        bx, by, _ = world.body_pose
        for name, ospec in wspec.objects.items():
            if world.grasps.get(name) is not None:
                continue
            d = _point_object_distance(bx, by, world.object_poses[name], ospec)
            if d - wspec.base_radius < margin:
                report.c_o = 1
                report.pairs.append(("base", name))
    return report


def _follow_grasps(world: WorldState, wspec: WorldSpec) -> None:
    for name, grasp in world.grasps.items():
        tip = gripper_pose(world, wspec, grasp.arm)
        world.object_poses[name] = compose_pose(tip, grasp.offset)


def _push_out(world: WorldState, wspec: WorldSpec) -> None:
    """Translate pushable rectangles out of the base disc (minimal shove)."""
    bx, by, _ = world.body_pose
    for name in wspec.push_objects:
        if world.grasps.get(name) is not None:
            continue
        ospec = wspec.objects[name]
        pose = world.object_poses[name]
        rect = object_rect(pose, ospec)
        d = point_rect_distance(bx, by, rect)
        if d >= wspec.base_radius:
            continue
        if d > 0.0:
            best = None
            for edge in rect.edges():
                cp = _closest_point_on_segment(bx, by, edge)
                dist = math.hypot(cp[0] - bx, cp[1] - by)
                if best is None or dist < best[0]:
                    best = (dist, cp)
            _, cp = best
            ux = (cp[0] - bx) / (d if d > 0 else 1.0)
            uy = (cp[1] - by) / (d if d > 0 else 1.0)
            depth = wspec.base_radius - d
        else:
            dx = pose[0] - bx
            dy = pose[1] - by
            norm = math.hypot(dx, dy)
            if norm == 0.0:
                dx, dy, norm = 1.0, 0.0, 1.0
            ux, uy = dx / norm, dy / norm
            depth = wspec.base_radius
        world.object_poses[name] = (pose[0] + ux * depth, pose[1] + uy * depth, pose[2])


def _closest_point_on_segment(px: float, py: float, seg: Segment) -> tuple[float, float]:
    dx = seg.bx - seg.ax
    dy = seg.by - seg.ay
    dd = dx * dx + dy * dy
    if dd == 0.0:
        return (seg.ax, seg.ay)
    t = ((px - seg.ax) * dx + (py - seg.ay) * dy) / dd
    t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
    return (seg.ax + t * dx, seg.ay + t * dy)


def step(world: WorldState, wspec: WorldSpec, actions) -> WorldState:
    """Advance the world one tick in place and return it.

    Arm actions are joint deltas in [-1, 1] scaled by the per-step limit and
    clamped to joint limits; the optional base action is (drive, turn).
    Grasped objects follow their grippers, pushable objects are shoved out of
    the base, then collision flags are recomputed.
    """
    dims = wspec.action_dims()
    if len(actions) != len(dims):
        raise ShapeError(f"expected {len(dims)} agent actions, got {len(actions)}")
    for a, d in zip(actions, dims):
        if len(a) != d:
            raise ShapeError(f"action dims {[len(x) for x in actions]} != {dims}")

    for i, spec in enumerate(wspec.arms):
        q = world.joint_angles[i]
        act = actions[i]
        for j in range(spec.n_joints):
            a = float(act[j])
            a = -1.0 if a < -1.0 else (1.0 if a > 1.0 else a)
            nq = q[j] + a * spec.joint_delta_limit
            lo, hi = spec.joint_limits[j]
            q[j] = lo if nq < lo else (hi if nq > hi else nq)

    if wspec.mobile_base:
        act = actions[-1]
        drive = float(act[0])
        turn = float(act[1])
        drive = -1.0 if drive < -1.0 else (1.0 if drive > 1.0 else drive)
        turn = -1.0 if turn < -1.0 else (1.0 if turn > 1.0 else turn)
        x, y, h = world.body_pose
        h = wrap_angle(h + turn * wspec.base_turn_limit)
        v = drive * wspec.base_speed_limit
        world.body_pose = (x + v * math.cos(h), y + v * math.sin(h), h)

    _push_out(world, wspec)
    _follow_grasps(world, wspec)
    world.collisions = detect_collisions(world, wspec)
    world.step_count += 1
    return world


def try_grasp(
    world: WorldState,
    wspec: WorldSpec,
    arm: int,
    obj: str,
    threshold: float = 0.1,
    align_min: float = 0.95,
) -> bool:
    """Attach `obj` to `arm`'s gripper when close enough and aimed at it.

    The object keeps its current offset in the gripper frame.  No-op (False)
    when out of range, misaligned, or already grasped.
    """
    if obj in world.grasps:
        return False
    tip = gripper_pose(world, wspec, arm)
    pose = world.object_poses[obj]
    d, align = tip_alignment(tip, (pose[0], pose[1]))
    if d >= threshold or align < align_min:
        return False
    world.grasps[obj] = Grasp(arm, relative_pose(tip, pose))
    return True


def tip_alignment(tip: Pose, point: tuple[float, float]) -> tuple[float, float]:
    """Distance from tip to point, and cos(angle) between gripper axis and the
    tip->point direction (1.0 when on top of the point)."""
    dx = point[0] - tip[0]
    dy = point[1] - tip[1]
    d = math.hypot(dx, dy)
    if d < 1e-9:
        return d, 1.0
    return d, (dx * math.cos(tip[2]) + dy * math.sin(tip[2])) / d
