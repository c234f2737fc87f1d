"""The construction task environments.

Four collaborative bench tasks (dual-arm pick-and-place, plate installation,
bolt hand-off, box transport with a mobile base) plus a single-arm "reach"
variant used for fast smoke training.  Each task defines randomized resets,
a shared observation vector that embeds every agent's previous action,
dense shaped rewards over gripper/object geometry and collision indicators,
and staged completion flags that trigger the IK finishing controller.

Weight slots w1..w6 are per-task shaping coefficients; their roles are:
tasks 1-3  w1: gripper-to-object distance   w2: object-to-target distance
           w3: approach alignment bonus     w4: self-collision penalty
           w5: object-collision penalty     w6: task extra (drop depth /
           plate orientation error / inter-gripper axis alignment)
task 4     w1: distance to target           w2: self-collision penalty
           w3: box displacement penalty     w4: base-collision penalty
           w5: reserved (published but unused)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ShapeError
from .geometry import Segment, wrap_angle
from .planarsim import (
    ArmSpec,
    Grasp,
    ObjectSpec,
    Pose,
    WorldSpec,
    WorldState,
    compose_pose,
    detect_collisions,
    forward_kinematics,
    relative_pose,
    step as sim_step,
    tip_alignment,
    try_grasp,
)

# -- shared geometry defaults ------------------------------------------------

ARM_LINKS = (0.3, 0.25, 0.15)
ARM_LIMITS = ((-2.9, 2.9), (-2.9, 2.9), (-2.9, 2.9))
JOINT_DELTA = 0.15
HOME_LEFT = (0.25, -0.1, 0.0)
HOME_RIGHT = (-0.25, 0.1, 0.0)
BODY_HOME: Pose = (0.0, 0.0, math.pi / 2.0)

LEFT_ARM = ArmSpec(
    base_pos=(0.0, 0.2),
    base_heading=0.0,
    link_lengths=ARM_LINKS,
    joint_limits=ARM_LIMITS,
    joint_delta_limit=JOINT_DELTA,
    home_angles=HOME_LEFT,
)
RIGHT_ARM = ArmSpec(
    base_pos=(0.0, -0.2),
    base_heading=0.0,
    link_lengths=ARM_LINKS,
    joint_limits=ARM_LIMITS,
    joint_delta_limit=JOINT_DELTA,
    home_angles=HOME_RIGHT,
)

Rect4 = tuple[float, float, float, float]  # xmin, xmax, ymin, ymax

# spawn-area sizes the task definitions must keep (width x height, m)
SPAWN_AREA_DIMS = {
    "reach": {"bolt_0": (0.4, 0.24)},
    "1": {"bolt_0": (0.4, 0.24), "bolt_1": (0.4, 0.24)},
    "2": {"bolt_0": (0.1, 0.24), "plate": (0.05, 0.24)},
    "3": {"bolt_0": (0.1, 0.2)},
    "4": {"box": (1.0, 1.0)},
}


@dataclass(frozen=True)
class RewardWeights:
    """Shaping coefficients; defaults are the published per-task values."""

    w1: float
    w2: float
    w3: float
    w4: float
    w5: float
    w6: float

    @staticmethod
    def for_task(task: str) -> "RewardWeights":
        try:
            return RewardWeights(*TASK_WEIGHTS[task])
        except KeyError:
            raise ConfigError(f"unknown task {task!r}") from None


# task-2 w6 is published negative; the reward applies |w6| as a penalty.
# task-4 w5 is published but enters no reward term; it is stored unused.
TASK_WEIGHTS = {
    "reach": (0.2, 0.2, 0.1, 1.0, 1.0, 0.2),
    "1": (0.2, 0.2, 0.1, 1.0, 1.0, 0.2),
    "2": (0.2, 0.2, 0.1, 1.0, 1.0, -0.1),
    "3": (0.2, 0.2, 0.1, 1.0, 1.0, 0.1),
    "4": (0.1, 0.5, 0.05, 1.0, 1.0, 0.0),
}


@dataclass
class RewardTerms:
    """Measured quantities entering one agent's reward for one step."""

    gripper_object_dist: float = 0.0   # d_o
    target_dist: float = 0.0           # d_T
    approach_alignment: float = 0.0    # v_og . v_gb
    axes_alignment: float = 0.0        # v_gl . v_gr (task 3)
    orientation_error: float = 0.0     # plate heading mismatch, rad (task 2)
    self_collision: int = 0            # c_s
    object_collision: int = 0          # c_o, attributed to this agent
    box_motion: float = 0.0            # box displacement since last step (task 4)
    drop_depth: float = 0.0            # h_g
    pickup_bonus: float = 0.0          # r_o, fires once
    place_bonus: float = 0.0           # r_T, fires once

    def to_dict(self) -> dict:
        return {
            "d_o": self.gripper_object_dist,
            "d_T": self.target_dist,
            "align_og": self.approach_alignment,
            "align_axes": self.axes_alignment,
            "orient_err": self.orientation_error,
            "c_s": self.self_collision,
            "c_o": self.object_collision,
            "box_motion": self.box_motion,
            "drop_depth": self.drop_depth,
            "r_o": self.pickup_bonus,
            "r_T": self.place_bonus,
        }

    @staticmethod
    def from_dict(d: dict) -> "RewardTerms":
        return RewardTerms(
            gripper_object_dist=d["d_o"],
            target_dist=d["d_T"],
            approach_alignment=d["align_og"],
            axes_alignment=d["align_axes"],
            orientation_error=d["orient_err"],
            self_collision=d["c_s"],
            object_collision=d["c_o"],
            box_motion=d["box_motion"],
            drop_depth=d["drop_depth"],
            pickup_bonus=d["r_o"],
            place_bonus=d["r_T"],
        )


# -- reward functions ---------------------------------------------------------


def reward_task1(terms: RewardTerms, w: RewardWeights) -> float:
    """Pick-and-place shaping: approach, carry, stay aligned, avoid contact."""
    return (
        -w.w1 * terms.gripper_object_dist
        - w.w2 * terms.target_dist
        + w.w3 * terms.approach_alignment
        - w.w4 * terms.self_collision
        - w.w5 * terms.object_collision
        - w.w6 * terms.drop_depth
        + terms.pickup_bonus
        + terms.place_bonus
    )


def reward_task2(terms: RewardTerms, w: RewardWeights) -> float:
    """Like task 1 but the extra slot penalizes plate misorientation.

    The published w6 is negative; |w6| keeps the term a penalty.
    """
    return (
        -w.w1 * terms.gripper_object_dist
        - w.w2 * terms.target_dist
        + w.w3 * terms.approach_alignment
        - w.w4 * terms.self_collision
        - w.w5 * terms.object_collision
        - abs(w.w6) * terms.orientation_error
        + terms.pickup_bonus
        + terms.place_bonus
    )


def reward_task3(
    terms_left: RewardTerms, terms_right: RewardTerms, w: RewardWeights
) -> tuple[float, float]:
    """Hand-off rewards; the receiving arm carries no approach-alignment term."""
    r_left = (
        -w.w1 * terms_left.gripper_object_dist
        - w.w2 * terms_left.target_dist
        + w.w3 * terms_left.approach_alignment
        - w.w4 * terms_left.self_collision
        - w.w5 * terms_left.object_collision
        + w.w6 * terms_left.axes_alignment
        + terms_left.pickup_bonus
        + terms_left.place_bonus
    )
    r_right = (
        -w.w1 * terms_right.gripper_object_dist
        - w.w2 * terms_right.target_dist
        + w.w6 * terms_right.axes_alignment
        - w.w4 * terms_right.self_collision
        - w.w5 * terms_right.object_collision
        + terms_right.pickup_bonus
        + terms_right.place_bonus
    )
    return r_left, r_right


def reward_task4(
    terms_left: RewardTerms,
    terms_right: RewardTerms,
    terms_wheel: RewardTerms,
    w: RewardWeights,
) -> tuple[float, float, float]:
    """Transport rewards: both arms share one form, the wheel agent another."""

    def arm(terms: RewardTerms) -> float:
        return (
            -w.w1 * terms.target_dist
            - w.w2 * terms.self_collision
            - w.w3 * terms.box_motion
            + terms.place_bonus
        )

    r_wheel = (
        -w.w1 * terms_wheel.target_dist
        - w.w2 * terms_wheel.self_collision
        - w.w4 * terms_wheel.object_collision
        + terms_wheel.place_bonus
    )
    return arm(terms_left), arm(terms_right), r_wheel


REWARD_FN = {"reach": reward_task1, "1": reward_task1, "2": reward_task2}


# -- task specification --------------------------------------------------------


@dataclass(frozen=True)
class TaskSpec:
    """Static description of one task: world, spawns, targets, layout."""

    task: str
    wspec: WorldSpec
    episode_len: int
    agent_names: tuple[str, ...]
    spawn_rects: dict[str, Rect4] = field(default_factory=dict)
    spawn_headings: dict[str, float] = field(default_factory=dict)
    randomize_heading: tuple[str, ...] = ()
    pick_threshold: float = 0.1
    align_min: float = 0.95
    bolt_targets: tuple[tuple[float, float], ...] = ()
    plate_target: Pose | None = None
    hole_offset: tuple[float, float] = (0.1, 0.0)
    handle_offsets: tuple[tuple[float, float], ...] = ()
    staging_distance: float = 0.5
    staging_heading_weight: float = 0.3
    h_g_mode: str = "zero"  # "zero" | "depth_below_base"

    def __post_init__(self) -> None:
        dims = SPAWN_AREA_DIMS.get(self.task)
        if dims is None:
            raise ConfigError(f"unknown task {self.task!r}")
        for name, (width, height) in dims.items():
            x0, x1, y0, y1 = self.spawn_rects[name]
            if abs((x1 - x0) - width) > 1e-9 or abs((y1 - y0) - height) > 1e-9:
                raise ConfigError(
                    f"task {self.task}: spawn area for {name} must be "
                    f"{width} x {height} m, got {x1 - x0:.3f} x {y1 - y0:.3f}"
                )
        if self.h_g_mode not in ("zero", "depth_below_base"):
            raise ConfigError(f"unknown h_g mode {self.h_g_mode!r}")

    @property
    def n_agents(self) -> int:
        return self.wspec.n_agents

    @property
    def n_arms(self) -> int:
        return len(self.wspec.arms)


def task_spec(task: str, h_g_mode: str = "zero") -> TaskSpec:
    """Default TaskSpec for a task key in {reach, 1, 2, 3, 4}."""
    task = str(task)
    if task == "reach":
        wspec = WorldSpec(
            arms=(LEFT_ARM,),
            objects={"bolt_0": ObjectSpec("disc", radius=0.008)},
        )
        return TaskSpec(
            task="reach",
            wspec=wspec,
            episode_len=20,
            agent_names=("left_arm",),
            spawn_rects={"bolt_0": (-0.2, 0.2, 0.25, 0.49)},
            h_g_mode=h_g_mode,
        )
    if task == "1":
        wspec = WorldSpec(
            arms=(LEFT_ARM, RIGHT_ARM),
            objects={
                "bolt_0": ObjectSpec("disc", radius=0.008),
                "bolt_1": ObjectSpec("disc", radius=0.008),
                "platform": ObjectSpec("segment", length=0.3, static=True),
            },
        )
        return TaskSpec(
            task="1",
            wspec=wspec,
            episode_len=20,
            agent_names=("left_arm", "right_arm"),
            spawn_rects={
                "bolt_0": (-0.2, 0.2, 0.25, 0.49),
                "bolt_1": (-0.2, 0.2, 0.25, 0.49),
            },
            bolt_targets=((-0.1, 0.60), (0.1, 0.60)),
            h_g_mode=h_g_mode,
        )
    if task == "2":
        wspec = WorldSpec(
            arms=(LEFT_ARM, RIGHT_ARM),
            objects={
                "bolt_0": ObjectSpec("disc", radius=0.008),
                "plate": ObjectSpec("segment", length=0.3),
                "beam": ObjectSpec("segment", length=0.5, static=True),
            },
        )
        return TaskSpec(
            task="2",
            wspec=wspec,
            episode_len=30,
            agent_names=("left_arm", "right_arm"),
            spawn_rects={
                "bolt_0": (-0.42, -0.32, 0.2, 0.44),
                "plate": (0.36, 0.41, 0.2, 0.44),
            },
            spawn_headings={"plate": math.pi / 2.0},
            plate_target=(0.0, 0.58, 0.0),
            hole_offset=(0.1, 0.0),
            h_g_mode=h_g_mode,
        )
    if task == "3":
        wspec = WorldSpec(
            arms=(LEFT_ARM, RIGHT_ARM),
            objects={
                "bolt_0": ObjectSpec("disc", radius=0.008),
                "beam": ObjectSpec("segment", length=0.25, static=True),
            },
        )
        return TaskSpec(
            task="3",
            wspec=wspec,
            episode_len=25,
            agent_names=("left_arm", "right_arm"),
            spawn_rects={"bolt_0": (-0.6, -0.5, 0.1, 0.3)},
            bolt_targets=((0.55, 0.3),),
            h_g_mode=h_g_mode,
        )
    if task == "4":
        wspec = WorldSpec(
            arms=(LEFT_ARM, RIGHT_ARM),
            objects={"box": ObjectSpec("rect", half_x=0.15, half_y=0.10)},
            mobile_base=True,
            push_objects=("box",),
        )
        return TaskSpec(
            task="4",
            wspec=wspec,
            episode_len=50,
            agent_names=("left_arm", "right_arm", "wheels"),
            spawn_rects={"box": (-0.5, 0.5, 1.2, 2.2)},
            randomize_heading=("box",),
            handle_offsets=((0.15, 0.0), (-0.15, 0.0)),
            h_g_mode=h_g_mode,
        )
    raise ConfigError(f"unknown task {task!r}")


# static object placements per task (poses of objects that never move)
STATIC_POSES = {
    "1": {"platform": (0.0, 0.62, 0.0)},
    "2": {"beam": (0.0, 0.62, 0.0)},
    "3": {"beam": (0.575, 0.34, 0.0)},
}


# -- observation layout --------------------------------------------------------


@dataclass(frozen=True)
class LayoutField:
    name: str
    size: int


class ObservationLayout:
    """Declared slot order of the shared observation vector."""

    def __init__(self, fields: list[LayoutField]):
        self.fields = fields
        self.total = sum(f.size for f in fields)
        self._slices: dict[str, slice] = {}
        at = 0
        for f in fields:
            self._slices[f.name] = slice(at, at + f.size)
            at += f.size

    def slice_of(self, name: str) -> slice:
        return self._slices[name]

    def names(self) -> list[str]:
        return [f.name for f in self.fields]


def observation_layout(spec: TaskSpec) -> ObservationLayout:
    fields: list[LayoutField] = []
    dims = spec.wspec.action_dims()
    for name, dim in zip(spec.agent_names, dims):
        fields.append(LayoutField(f"action_{name}", dim))
    # gripper poses only: arm configurations stay hidden (elbow ambiguity),
    # which is what makes the shared action block informative
    for i in range(spec.n_arms):
        arm = spec.agent_names[i]
        fields.append(LayoutField(f"{arm}_tip_pos", 2))
        fields.append(LayoutField(f"{arm}_tip_rot", 2))
        fields.append(LayoutField(f"{arm}_stage", 2))
    task = spec.task
    if task == "reach":
        fields.append(LayoutField("bolt_0_pos", 2))
    elif task == "1":
        fields.append(LayoutField("bolt_0_pos", 2))
        fields.append(LayoutField("bolt_1_pos", 2))
        fields.append(LayoutField("target_0_pos", 2))
        fields.append(LayoutField("target_1_pos", 2))
    elif task == "2":
        fields.append(LayoutField("bolt_0_pos", 2))
        fields.append(LayoutField("plate_pos", 2))
        fields.append(LayoutField("plate_rot", 2))
        fields.append(LayoutField("hole_pos", 2))
        fields.append(LayoutField("plate_target_pos", 2))
        fields.append(LayoutField("plate_target_rot", 2))
    elif task == "3":
        fields.append(LayoutField("bolt_0_pos", 2))
        fields.append(LayoutField("target_0_pos", 2))
    elif task == "4":
        fields.append(LayoutField("base_pos", 2))
        fields.append(LayoutField("base_rot", 2))
        fields.append(LayoutField("box_pos", 2))
        fields.append(LayoutField("box_rot", 2))
        fields.append(LayoutField("handle_left_pos", 2))
        fields.append(LayoutField("handle_right_pos", 2))
        fields.append(LayoutField("staging_pos", 2))
        fields.append(LayoutField("staging_rot", 2))
    fields.append(LayoutField("time_frac", 1))
    return ObservationLayout(fields)


@dataclass
class CompletionFlags:
    picked: tuple[bool, ...]
    placed: tuple[bool, ...]
    success: bool
    done: bool


def check_completion(world: WorldState, spec: TaskSpec) -> CompletionFlags:
    """Stage flags straight from world state plus the episode-done test."""
    picked = tuple(bool(p) for p in world.picked)
    placed = tuple(bool(p) for p in world.placed)
    if spec.task in ("reach",):
        success = picked[0]
    elif spec.task == "4":
        success = all(picked)
    else:
        success = all(placed)
    done = success or world.step_count >= spec.episode_len
    return CompletionFlags(picked, placed, success, done)


# -- environment ---------------------------------------------------------------


class ConstructionEnv:
    """Stepped task environment over the planar world.

    Observations are one shared vector delivered to every agent; with
    ``action_sharing`` off each agent instead sees the other agents' action
    slots zeroed (the ablation mode).
    """

    def __init__(
        self,
        spec: TaskSpec,
        weights: RewardWeights | None = None,
        seed: int = 0,
        action_sharing: bool = True,
    ) -> None:
        self.spec = spec
        self.weights = weights or RewardWeights.for_task(spec.task)
        self.layout = observation_layout(spec)
        self.action_sharing = action_sharing
        self.rng = np.random.default_rng(seed)
        self.n_agents = spec.n_agents
        self.obs_dim = self.layout.total
        self.action_dims = spec.wspec.action_dims()
        self.world: WorldState | None = None
        self._last_actions: list[np.ndarray] = [
            np.zeros(d) for d in self.action_dims
        ]
        self._tips: list[Pose] = []
        self._prev_box_pos: tuple[float, float] | None = None
        self._staging_side = 1.0
        self._record_events = False
        self.reset()

    # -- lifecycle --

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        spec = self.spec
        world = WorldState(
            body_pose=BODY_HOME,
            joint_angles=[list(a.home_angles) for a in spec.wspec.arms],
            object_poses={},
            picked=[False] * spec.n_arms,
            placed=[False] * spec.n_arms,
        )
        for name, pose in STATIC_POSES.get(spec.task, {}).items():
            world.object_poses[name] = pose
        self._sample_objects(world)
        self.world = world
        self._refresh_kinematics()
        if spec.task == "4":
            self._staging_side = self._choose_staging_side()
        self._prev_box_pos = (
            world.object_poses["box"][:2] if spec.task == "4" else None
        )
        self._last_actions = [np.zeros(d) for d in self.action_dims]
        world.collisions = detect_collisions(world, spec.wspec)
        return self._observe()

    def _sample_objects(self, world: WorldState) -> None:
        spec = self.spec
        sampled = list(spec.spawn_rects.keys())
        for attempt in range(100):
            for name in sampled:
                x0, x1, y0, y1 = spec.spawn_rects[name]
                x = x0 + (x1 - x0) * self.rng.random()
                y = y0 + (y1 - y0) * self.rng.random()
                if name in spec.randomize_heading:
                    h = wrap_angle(-math.pi + 2.0 * math.pi * self.rng.random())
                else:
                    h = spec.spawn_headings.get(name, 0.0)
                world.object_poses[name] = (x, y, h)
            report = detect_collisions(world, spec.wspec)
            bad = any(a in sampled or b in sampled for a, b in report.pairs)
            if not bad:
                return
        raise ConfigError(
            f"task {spec.task}: could not place objects collision-free in 100 tries"
        )

    def _refresh_kinematics(self) -> None:
        self._tips = []
        self._links = []
        for i, arm in enumerate(self.spec.wspec.arms):
            links, tip = forward_kinematics(
                arm, self.world.joint_angles[i], self.world.body_pose
            )
            self._links.append(links)
            self._tips.append(tip)

    # -- helpers --

    def _choose_staging_side(self) -> float:
        bx, by, _ = self.world.body_pose
        best_side, best_d = 1.0, float("inf")
        for side in (1.0, -1.0):
            px, py, _ = self._staging_pose(side)
            d = math.hypot(px - bx, py - by)
            if d < best_d:
                best_side, best_d = side, d
        return best_side

    def _staging_pose(self, side: float | None = None) -> Pose:
        """Base pose from which both handles are in comfortable arm reach."""
        side = self._staging_side if side is None else side
        box = self.world.object_poses["box"]
        nx = -math.sin(box[2]) * side
        ny = math.cos(box[2]) * side
        px = box[0] + self.spec.staging_distance * nx
        py = box[1] + self.spec.staging_distance * ny
        heading = wrap_angle(box[2] - side * math.pi / 2.0)
        return (px, py, heading)

    def _handle_world(self, arm: int) -> tuple[float, float]:
        box = self.world.object_poses["box"]
        # approach side decides which physical handle each arm takes
        ox, oy = self.spec.handle_offsets[arm]
        if self._staging_side < 0.0:
            ox, oy = -ox, -oy
        p = compose_pose(box, (ox, oy, 0.0))
        return (p[0], p[1])

    def _hole_world(self) -> tuple[float, float]:
        plate = self.world.object_poses["plate"]
        p = compose_pose(plate, (self.spec.hole_offset[0], self.spec.hole_offset[1], 0.0))
        return (p[0], p[1])

    def _drop_depth(self, arm: int) -> float:
        if self.spec.h_g_mode == "zero":
            return 0.0
        return max(0.0, -self._tips[arm][1])

    def _arm_object_collision(self, arm: int) -> int:
        return 1 if self.world.collisions.arm_hit_object(arm) else 0

    # -- step --

    def step(self, actions) -> tuple[np.ndarray, np.ndarray, bool, dict]:
        if len(actions) != self.n_agents:
            raise ShapeError(f"expected {self.n_agents} actions, got {len(actions)}")
        clipped = [np.clip(np.asarray(a, dtype=np.float64), -1.0, 1.0) for a in actions]
        sim_step(self.world, self.spec.wspec, clipped)
        self._refresh_kinematics()
        events: list[dict] = []
        bonuses = self._apply_stage_events(events)
        terms = self._compute_terms(bonuses)
        rewards = self._rewards(terms)
        flags = check_completion(self.world, self.spec)
        self._last_actions = clipped
        if self.spec.task == "4":
            self._prev_box_pos = self.world.object_poses["box"][:2]
        info = {
            "terms": terms,
            "events": events,
            "flags": flags,
            "success": flags.success,
            "c_s": self.world.collisions.c_s,
            "c_o": self.world.collisions.c_o,
        }
        return self._observe(), np.array(rewards, dtype=np.float64), flags.done, info

    def _apply_stage_events(self, events: list[dict]) -> list[dict]:
        """Run pick/place/hand-off triggers; returns per-agent bonus dicts."""
        spec = self.spec
        world = self.world
        bonuses = [{"pickup": 0.0, "place": 0.0} for _ in range(spec.n_arms)]
        task = spec.task

        if task in ("reach", "1"):
            for i in range(spec.n_arms):
                bolt = f"bolt_{i}"
                if not world.picked[i]:
                    if self._record_events:
                        staged = self._stage_candidate(i, bolt)
                        if staged:
                            events.append(staged)
                    if try_grasp(world, spec.wspec, i, bolt, spec.pick_threshold, spec.align_min):
                        world.picked[i] = True
                        bonuses[i]["pickup"] = 1.0
                        events.append({"kind": "picked", "arm": i, "object": bolt})
                elif task == "1" and not world.placed[i]:
                    tx, ty = spec.bolt_targets[i]
                    bx, by, _ = world.object_poses[bolt]
                    if math.hypot(bx - tx, by - ty) < spec.pick_threshold:
                        if self._record_events:
                            events.append(self._place_candidate(i, bolt, (tx, ty)))
                        world.object_poses[bolt] = (tx, ty, 0.0)
                        del world.grasps[bolt]
                        world.placed[i] = True
                        bonuses[i]["place"] = 1.0
                        events.append({"kind": "placed", "arm": i, "object": bolt})
        elif task == "2":
            objs = ("bolt_0", "plate")
            for i in range(2):
                obj = objs[i]
                if not world.picked[i]:
                    if self._record_events:
                        staged = self._stage_candidate(i, obj)
                        if staged:
                            events.append(staged)
                    if try_grasp(world, spec.wspec, i, obj, spec.pick_threshold, spec.align_min):
                        world.picked[i] = True
                        bonuses[i]["pickup"] = 1.0
                        events.append({"kind": "picked", "arm": i, "object": obj})
            # plate install first, then the bolt into its hole
            if world.picked[1] and not world.placed[1]:
                px, py, _ = world.object_poses["plate"]
                tx, ty, th = spec.plate_target
                if math.hypot(px - tx, py - ty) < spec.pick_threshold:
                    if self._record_events:
                        events.append(self._place_candidate(1, "plate", (tx, ty)))
                    world.object_poses["plate"] = spec.plate_target
                    del world.grasps["plate"]
                    world.placed[1] = True
                    bonuses[1]["place"] = 1.0
                    events.append({"kind": "placed", "arm": 1, "object": "plate"})
            if world.placed[1] and world.picked[0] and not world.placed[0]:
                hx, hy = self._hole_world()
                bx, by, _ = world.object_poses["bolt_0"]
                if math.hypot(bx - hx, by - hy) < spec.pick_threshold:
                    if self._record_events:
                        events.append(self._place_candidate(0, "bolt_0", (hx, hy)))
                    world.object_poses["bolt_0"] = (hx, hy, 0.0)
                    del world.grasps["bolt_0"]
                    world.placed[0] = True
                    bonuses[0]["place"] = 1.0
                    events.append({"kind": "placed", "arm": 0, "object": "bolt_0"})
        elif task == "3":
            bolt = "bolt_0"
            if not world.picked[0]:
                if self._record_events:
                    staged = self._stage_candidate(0, bolt)
                    if staged:
                        events.append(staged)
                if try_grasp(world, spec.wspec, 0, bolt, spec.pick_threshold, spec.align_min):
                    world.picked[0] = True
                    bonuses[0]["pickup"] = 1.0
                    events.append({"kind": "picked", "arm": 0, "object": bolt})
            elif not world.picked[1]:
                # hand-off: the right gripper takes the bolt out of the left
                tip = self._tips[1]
                pose = world.object_poses[bolt]
                d, align = tip_alignment(tip, (pose[0], pose[1]))
                if self._record_events:
                    staged = self._stage_candidate(1, bolt)
                    if staged:
                        events.append(staged)
                if d < spec.pick_threshold and align >= spec.align_min:
                    del world.grasps[bolt]
                    world.grasps[bolt] = Grasp(1, relative_pose(tip, pose))
                    world.picked[1] = True
                    world.placed[0] = True
                    bonuses[1]["pickup"] = 1.0
                    bonuses[0]["place"] = 1.0
                    events.append({"kind": "handoff", "from": 0, "to": 1, "object": bolt})
            elif not world.placed[1]:
                tx, ty = spec.bolt_targets[0]
                bx, by, _ = world.object_poses[bolt]
                if math.hypot(bx - tx, by - ty) < spec.pick_threshold:
                    if self._record_events:
                        events.append(self._place_candidate(1, bolt, (tx, ty)))
                    world.object_poses[bolt] = (tx, ty, 0.0)
                    del world.grasps[bolt]
                    world.placed[1] = True
                    bonuses[1]["place"] = 1.0
                    events.append({"kind": "placed", "arm": 1, "object": bolt})
        elif task == "4":
            for i in range(2):
                if not world.picked[i]:
                    hx, hy = self._handle_world(i)
                    tip = self._tips[i]
                    if math.hypot(tip[0] - hx, tip[1] - hy) < spec.pick_threshold:
                        world.picked[i] = True
                        events.append({"kind": "held", "arm": i})
            lifted_now = all(world.picked) and not all(world.placed)
            if lifted_now:
                world.placed = [True, True]
                for b in bonuses:
                    b["place"] = 1.0
                events.append({"kind": "lifted"})
            bonuses.append({"pickup": 0.0, "place": 1.0 if lifted_now else 0.0})
        return bonuses

    def _stage_candidate(self, arm: int, obj: str) -> dict | None:
        """Report a staging condition (for IK verification during evaluation)."""
        tip = self._tips[arm]
        pose = self.world.object_poses[obj]
        d, align = tip_alignment(tip, (pose[0], pose[1]))
        if d < self.spec.pick_threshold and align >= self.spec.align_min:
            heading = math.atan2(pose[1] - tip[1], pose[0] - tip[0]) if d > 1e-9 else tip[2]
            return {
                "kind": "staged_pick",
                "arm": arm,
                "object": obj,
                "goal": (pose[0], pose[1], heading),
                "world_before": self.world.copy(),
            }
        return None

    def _place_candidate(self, arm: int, obj: str, target: tuple[float, float]) -> dict:
        grasp = self.world.grasps.get(obj)
        tip = self._tips[arm]
        if grasp is not None:
            # translate the tip (carry heading kept) so the cargo lands on target
            gx, gy, _ = compose_pose(tip, grasp.offset)
            goal = (tip[0] + (target[0] - gx), tip[1] + (target[1] - gy), tip[2])
        else:
            goal = (target[0], target[1], tip[2])
        return {
            "kind": "staged_place",
            "arm": arm,
            "object": obj,
            "goal": goal,
            "world_before": self.world.copy(),
        }

    def _compute_terms(self, bonuses: list[dict]) -> list[RewardTerms]:
        spec = self.spec
        world = self.world
        c_s = world.collisions.c_s
        task = spec.task
        terms: list[RewardTerms] = []

        if task in ("reach", "1"):
            for i in range(spec.n_arms):
                bolt = f"bolt_{i}"
                tip = self._tips[i]
                pose = world.object_poses[bolt]
                if not world.picked[i]:
                    d_o, align = tip_alignment(tip, (pose[0], pose[1]))
                    d_t = 0.0
                elif task == "1" and not world.placed[i]:
                    d_o, align = 0.0, 0.0
                    tx, ty = spec.bolt_targets[i]
                    d_t = math.hypot(pose[0] - tx, pose[1] - ty)
                else:
                    d_o, align, d_t = 0.0, 0.0, 0.0
                terms.append(
                    RewardTerms(
                        gripper_object_dist=d_o,
                        target_dist=d_t,
                        approach_alignment=align,
                        self_collision=c_s,
                        object_collision=self._arm_object_collision(i),
                        drop_depth=self._drop_depth(i),
                        pickup_bonus=bonuses[i]["pickup"],
                        place_bonus=bonuses[i]["place"],
                    )
                )
        elif task == "2":
            objs = ("bolt_0", "plate")
            tx_th = spec.plate_target
            plate_h = world.object_poses["plate"][2]
            orient_err = abs(wrap_angle(plate_h - tx_th[2]))
            for i in range(2):
                obj = objs[i]
                tip = self._tips[i]
                pose = world.object_poses[obj]
                if not world.picked[i]:
                    d_o, align = tip_alignment(tip, (pose[0], pose[1]))
                    d_t = 0.0
                elif not world.placed[i]:
                    d_o, align = 0.0, 0.0
                    if i == 1:
                        d_t = math.hypot(pose[0] - tx_th[0], pose[1] - tx_th[1])
                    else:
                        hx, hy = self._hole_world()
                        d_t = math.hypot(pose[0] - hx, pose[1] - hy)
                else:
                    d_o, align, d_t = 0.0, 0.0, 0.0
                terms.append(
                    RewardTerms(
                        gripper_object_dist=d_o,
                        target_dist=d_t,
                        approach_alignment=align,
                        orientation_error=orient_err,
                        self_collision=c_s,
                        object_collision=self._arm_object_collision(i),
                        drop_depth=self._drop_depth(i),
                        pickup_bonus=bonuses[i]["pickup"],
                        place_bonus=bonuses[i]["place"],
                    )
                )
        elif task == "3":
            bolt_pose = world.object_poses["bolt_0"]
            tip_l, tip_r = self._tips[0], self._tips[1]
            inter = math.hypot(tip_l[0] - tip_r[0], tip_l[1] - tip_r[1])
            axes = math.cos(tip_l[2]) * math.cos(tip_r[2]) + math.sin(tip_l[2]) * math.sin(tip_r[2])
            # left arm
            if not world.picked[0]:
                d_o_l, align_l = tip_alignment(tip_l, (bolt_pose[0], bolt_pose[1]))
                d_t_l = 0.0
            elif not world.placed[0]:
                d_o_l, align_l = 0.0, 0.0
                d_t_l = inter
            else:
                d_o_l, align_l, d_t_l = 0.0, 0.0, 0.0
            terms.append(
                RewardTerms(
                    gripper_object_dist=d_o_l,
                    target_dist=d_t_l,
                    approach_alignment=align_l,
                    axes_alignment=axes,
                    self_collision=c_s,
                    object_collision=self._arm_object_collision(0),
                    pickup_bonus=bonuses[0]["pickup"],
                    place_bonus=bonuses[0]["place"],
                )
            )
            # right arm: d_o is the inter-effector distance until the hand-off
            if not world.picked[1]:
                d_o_r = inter
                d_t_r = 0.0
            elif not world.placed[1]:
                d_o_r = 0.0
                tx, ty = spec.bolt_targets[0]
                d_t_r = math.hypot(bolt_pose[0] - tx, bolt_pose[1] - ty)
            else:
                d_o_r, d_t_r = 0.0, 0.0
            terms.append(
                RewardTerms(
                    gripper_object_dist=d_o_r,
                    target_dist=d_t_r,
                    axes_alignment=axes,
                    self_collision=c_s,
                    object_collision=self._arm_object_collision(1),
                    pickup_bonus=bonuses[1]["pickup"],
                    place_bonus=bonuses[1]["place"],
                )
            )
        elif task == "4":
            box = world.object_poses["box"]
            moved = 0.0
            if self._prev_box_pos is not None:
                moved = math.hypot(box[0] - self._prev_box_pos[0], box[1] - self._prev_box_pos[1])
            for i in range(2):
                hx, hy = self._handle_world(i)
                tip = self._tips[i]
                terms.append(
                    RewardTerms(
                        target_dist=math.hypot(tip[0] - hx, tip[1] - hy),
                        self_collision=c_s,
                        box_motion=moved,
                        pickup_bonus=bonuses[i]["pickup"],
                        place_bonus=bonuses[i]["place"],
                    )
                )
            sx, sy, sh = self._staging_pose()
            bx, by, bh = world.body_pose
            pose_dist = math.hypot(bx - sx, by - sy) + spec.staging_heading_weight * abs(
                wrap_angle(bh - sh)
            )
            terms.append(
                RewardTerms(
                    target_dist=pose_dist,
                    self_collision=c_s,
                    object_collision=1 if world.collisions.base_hit_object() else 0,
                    box_motion=moved,
                    place_bonus=bonuses[2]["place"],
                )
            )
        return terms

    def _rewards(self, terms: list[RewardTerms]) -> list[float]:
        w = self.weights
        task = self.spec.task
        if task in ("reach", "1"):
            return [reward_task1(t, w) for t in terms]
        if task == "2":
            return [reward_task2(t, w) for t in terms]
        if task == "3":
            return list(reward_task3(terms[0], terms[1], w))
        if task == "4":
            return list(reward_task4(terms[0], terms[1], terms[2], w))
        raise ConfigError(f"unknown task {task!r}")

    # -- observations --

    def _observe(self) -> np.ndarray:
        shared = self._shared_state()
        if self.action_sharing:
            return np.tile(shared, (self.n_agents, 1))
        views = np.tile(shared, (self.n_agents, 1))
        for i in range(self.n_agents):
            for j, name in enumerate(self.spec.agent_names):
                if j != i:
                    views[i, self.layout.slice_of(f"action_{name}")] = 0.0
        return views

    def _shared_state(self) -> np.ndarray:
        spec = self.spec
        world = self.world
        out = np.empty(self.obs_dim, dtype=np.float64)
        at = 0

        def put(*vals: float) -> None:
            nonlocal at
            for v in vals:
                out[at] = v
                at += 1

        for act in self._last_actions:
            for v in act:
                put(float(v))
        for i in range(spec.n_arms):
            tip = self._tips[i]
            put(tip[0], tip[1], math.cos(tip[2]), math.sin(tip[2]))
            put(1.0 if world.picked[i] else 0.0, 1.0 if world.placed[i] else 0.0)
        task = spec.task
        if task == "reach":
            p = world.object_poses["bolt_0"]
            put(p[0], p[1])
        elif task == "1":
            for name in ("bolt_0", "bolt_1"):
                p = world.object_poses[name]
                put(p[0], p[1])
            for tx, ty in spec.bolt_targets:
                put(tx, ty)
        elif task == "2":
            p = world.object_poses["bolt_0"]
            put(p[0], p[1])
            plate = world.object_poses["plate"]
            put(plate[0], plate[1], math.cos(plate[2]), math.sin(plate[2]))
            hx, hy = self._hole_world()
            put(hx, hy)
            tx, ty, th = spec.plate_target
            put(tx, ty, math.cos(th), math.sin(th))
        elif task == "3":
            p = world.object_poses["bolt_0"]
            put(p[0], p[1])
            put(*spec.bolt_targets[0])
        elif task == "4":
            bx, by, bh = world.body_pose
            put(bx, by, math.cos(bh), math.sin(bh))
            box = world.object_poses["box"]
            put(box[0], box[1], math.cos(box[2]), math.sin(box[2]))
            put(*self._handle_world(0))
            put(*self._handle_world(1))
            sx, sy, sh = self._staging_pose()
            put(sx, sy, math.cos(sh), math.sin(sh))
        put(world.step_count / spec.episode_len)
        if at != self.obs_dim:
            raise ShapeError(f"layout says {self.obs_dim} slots, filled {at}")
        return out

    # -- checkpoint support --

    def get_state(self) -> dict:
        return {
            "world": self.world.to_dict(),
            "rng": self.rng.bit_generator.state,
            "last_actions": [a.tolist() for a in self._last_actions],
            "staging_side": self._staging_side,
            "prev_box_pos": list(self._prev_box_pos) if self._prev_box_pos else None,
        }

    def set_state(self, state: dict) -> None:
        self.world = WorldState.from_dict(state["world"])
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = state["rng"]
        self._last_actions = [np.asarray(a, dtype=np.float64) for a in state["last_actions"]]
        self._staging_side = state.get("staging_side", 1.0)
        pb = state.get("prev_box_pos")
        self._prev_box_pos = tuple(pb) if pb else None
        self._refresh_kinematics()


def make_env(
    task: str,
    seed: int = 0,
    weights: RewardWeights | None = None,
    action_sharing: bool = True,
    h_g_mode: str = "zero",
    episode_len: int | None = None,
) -> ConstructionEnv:
    spec = task_spec(task, h_g_mode=h_g_mode)
    if episode_len is not None:
        spec = replace(spec, episode_len=int(episode_len))
    return ConstructionEnv(spec, weights=weights, seed=seed, action_sharing=action_sharing)
