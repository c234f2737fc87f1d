"""Operational shell: experiment configs, training runs, checkpoints,
metrics/trace export, and the 100-episode evaluation protocol.

Evaluation drives the deterministic policy means, and at every staging event
(gripper within threshold and aligned) verifies the analytical-IK finishing
move on a forked copy of the world, so the reported rates stay comparable to
training while the hand-off is still exercised and diagnosed.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, fields

import numpy as np
import yaml

from .errors import CheckpointError, ConfigError
from .ik import finish_with_ik
from .mappo import IterationRecord, Trainer, TrainerConfig
from .tasks import ConstructionEnv, RewardTerms, RewardWeights, make_env
from .planarsim import WorldState

CHECKPOINT_MAGIC = "SITESWARM-CKPT"
CHECKPOINT_VERSION = 1


# -- experiment configuration ---------------------------------------------------


@dataclass
class ExperimentConfig:
    """Everything one training run needs, serializable to YAML."""

    task: str = "1"
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    weights: RewardWeights | None = None  # None = published task defaults
    h_g_mode: str = "zero"
    out_dir: str = "runs/latest"
    checkpoint_interval: int = 0  # iterations; 0 = only final
    eval_episodes: int = 100
    workers: int = 1
    trace_iterations: int = 0

    def validate(self) -> "ExperimentConfig":
        if str(self.task) not in ("reach", "1", "2", "3", "4"):
            raise ConfigError(f"task must be one of reach,1,2,3,4; got {self.task!r}")
        self.task = str(self.task)
        if self.workers <= 0:
            raise ConfigError("workers must be positive")
        if self.eval_episodes <= 0:
            raise ConfigError("eval_episodes must be positive")
        if self.checkpoint_interval < 0 or self.trace_iterations < 0:
            raise ConfigError("intervals must be non-negative")
        self.trainer.num_envs = self.workers
        self.trainer.validate()
        return self

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "trainer": self.trainer.to_dict(),
            "weights": None if self.weights is None else vars(self.weights).copy(),
            "h_g_mode": self.h_g_mode,
            "out_dir": self.out_dir,
            "checkpoint_interval": self.checkpoint_interval,
            "eval_episodes": self.eval_episodes,
            "workers": self.workers,
            "trace_iterations": self.trace_iterations,
        }

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(ExperimentConfig)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        d = dict(d)
        task = str(d.get("task", "1"))
        trainer_dict = d.get("trainer") or {}
        if not isinstance(trainer_dict, dict):
            raise ConfigError("trainer section must be a mapping")
        base = TrainerConfig.for_task(task).to_dict()
        extra = set(trainer_dict) - set(base)
        if extra:
            raise ConfigError(f"unknown trainer config keys: {sorted(extra)}")
        base.update(trainer_dict)
        d["task"] = task
        d["trainer"] = TrainerConfig.from_dict(base)
        w = d.get("weights")
        if w is not None:
            allowed = {"w1", "w2", "w3", "w4", "w5", "w6"}
            if set(w) - allowed:
                raise ConfigError(f"unknown weight keys: {sorted(set(w) - allowed)}")
            defaults = vars(RewardWeights.for_task(task)).copy()
            defaults.update(w)
            d["weights"] = RewardWeights(**defaults)
        return ExperimentConfig(**d).validate()

    @staticmethod
    def for_task(task: str, **overrides) -> "ExperimentConfig":
        cfg = ExperimentConfig(task=str(task), trainer=TrainerConfig.for_task(task))
        for key, val in overrides.items():
            if not hasattr(cfg, key):
                raise ConfigError(f"unknown experiment config key {key!r}")
            setattr(cfg, key, val)
        return cfg.validate()

    def to_yaml(self, path: str) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    @staticmethod
    def from_yaml(path: str) -> "ExperimentConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} is not a mapping")
        return ExperimentConfig.from_dict(data)


def env_factory_for(config: ExperimentConfig):
    """Seeded environment factory capturing the experiment's task settings."""

    def factory(seed: int) -> ConstructionEnv:
        return make_env(
            config.task,
            seed=seed,
            weights=config.weights,
            action_sharing=config.trainer.action_sharing,
            h_g_mode=config.h_g_mode,
            episode_len=config.trainer.episode_len,
        )

    return factory


# -- checkpoints -----------------------------------------------------------------


def save_checkpoint(trainer: Trainer, config: ExperimentConfig, path: str) -> None:
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "trainer": trainer.state_dict(),
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[Trainer, ExperimentConfig]:
    """Rebuild a trainer exactly as saved; never mutates partial state."""
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as err:
        raise CheckpointError(f"corrupt checkpoint {path}: {err}") from err
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {payload.get('version')} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    try:
        config = ExperimentConfig.from_dict(payload["config"])
        trainer = Trainer(env_factory_for(config), config.trainer)
        trainer.load_state_dict(payload["trainer"])
    except (KeyError, TypeError, ValueError) as err:
        raise CheckpointError(f"corrupt checkpoint payload in {path}: {err}") from err
    return trainer, config


# -- metrics CSV -------------------------------------------------------------------


def metrics_header(n_agents: int) -> list[str]:
    cols = ["iteration", "env_steps"]
    for i in range(n_agents):
        cols += [
            f"mean_episode_return_{i}",
            f"policy_loss_{i}",
            f"value_loss_{i}",
            f"entropy_{i}",
            f"clip_fraction_{i}",
        ]
    cols += ["success_rate_rolling", "self_collisions_rolling"]
    return cols


def export_metrics(history: list[IterationRecord], path: str) -> None:
    """Write the per-iteration metrics table (floats as shortest round-trip)."""
    if not history:
        raise ConfigError("refusing to export an empty history")
    n_agents = len(history[0].agents)
    lines = [",".join(metrics_header(n_agents))]
    for rec in history:
        row = [str(rec.iteration), str(rec.env_steps)]
        for a in rec.agents:
            row += [
                repr(a["mean_episode_return"]),
                repr(a["policy_loss"]),
                repr(a["value_loss"]),
                repr(a["entropy"]),
                repr(a["clip_fraction"]),
            ]
        row += [repr(rec.success_rate_rolling), repr(rec.self_collisions_rolling)]
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_metrics(path: str) -> tuple[list[str], list[list[float]]]:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    header = lines[0].split(",")
    rows = [[float(x) for x in ln.split(",")] for ln in lines[1:]]
    return header, rows


# -- replay traces -----------------------------------------------------------------


class TraceRecorder:
    """Environment wrapper that logs one structured record per step."""

    def __init__(self, env: ConstructionEnv, limit_steps: int) -> None:
        self.env = env
        self.records: list[dict] = []
        self.limit = limit_steps
        self._episode = 0

    # pass-through surface the trainer uses
    @property
    def n_agents(self):
        return self.env.n_agents

    @property
    def obs_dim(self):
        return self.env.obs_dim

    @property
    def action_dims(self):
        return self.env.action_dims

    @property
    def action_sharing(self):
        return self.env.action_sharing

    @action_sharing.setter
    def action_sharing(self, value):
        self.env.action_sharing = value

    def reset(self, seed=None):
        self._episode += 1
        return self.env.reset(seed)

    def get_state(self):
        return self.env.get_state()

    def set_state(self, state):
        self.env.set_state(state)

    def step(self, actions):
        obs, rewards, done, info = self.env.step(actions)
        if len(self.records) < self.limit:
            self.records.append(
                {
                    "task": self.env.spec.task,
                    "episode": self._episode,
                    "t": self.env.world.step_count,
                    "world": self.env.world.to_dict(),
                    "actions": [np.asarray(a).tolist() for a in actions],
                    "rewards": rewards.tolist(),
                    "terms": [t.to_dict() for t in info["terms"]],
                    "events": [e.get("kind") for e in info["events"]],
                    "c_s": info["c_s"],
                    "c_o": info["c_o"],
                    "success": bool(info["success"]),
                }
            )
        return obs, rewards, done, info


def write_trace(records: list[dict], path: str) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_trace(path: str) -> list[dict]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def format_trace_record(rec: dict) -> str:
    world = rec["world"]
    joints = "; ".join(
        "[" + ", ".join(f"{q:+.3f}" for q in arm) + "]" for arm in world["joint_angles"]
    )
    rewards = ", ".join(f"{r:+.4f}" for r in rec["rewards"])
    events = ",".join(rec["events"]) if rec["events"] else "-"
    return (
        f"ep {rec['episode']:>4} t {rec['t']:>3}  joints {joints}  "
        f"r [{rewards}]  c_s {rec['c_s']} c_o {rec['c_o']}  events {events}"
    )


# -- training entry point -----------------------------------------------------------


@dataclass
class RunResult:
    trainer: Trainer
    config: ExperimentConfig
    metrics_path: str
    checkpoint_path: str
    trace_path: str | None


def run_training(
    config: ExperimentConfig,
    resume_from: str | None = None,
    progress=None,
) -> RunResult:
    """Run (or resume) one experiment, writing metrics/checkpoint/trace files."""
    config.validate()
    os.makedirs(config.out_dir, exist_ok=True)
    metrics_path = os.path.join(config.out_dir, "metrics.csv")
    checkpoint_path = os.path.join(config.out_dir, "checkpoint.json")
    trace_path = (
        os.path.join(config.out_dir, "trace.jsonl") if config.trace_iterations else None
    )
    config.to_yaml(os.path.join(config.out_dir, "config.yaml"))

    recorders: list[TraceRecorder] = []
    base_factory = env_factory_for(config)
    if trace_path is not None:
        limit = config.trace_iterations * config.trainer.buffer_size

        def factory(seed: int):
            env = base_factory(seed)
            if not recorders:
                recorders.append(TraceRecorder(env, limit))
                return recorders[0]
            return env

    else:
        factory = base_factory

    if resume_from is not None:
        trainer, _ = load_checkpoint(resume_from)
    else:
        trainer = Trainer(factory, config.trainer)

    def on_iteration(tr: Trainer, record: IterationRecord) -> None:
        if progress is not None:
            progress(tr, record)
        if config.checkpoint_interval and tr.iteration % config.checkpoint_interval == 0:
            save_checkpoint(tr, config, checkpoint_path)

    trainer.run(on_iteration)
    save_checkpoint(trainer, config, checkpoint_path)
    export_metrics(trainer.history, metrics_path)
    if recorders:
        write_trace(recorders[0].records, trace_path)
    return RunResult(trainer, config, metrics_path, checkpoint_path, trace_path)


# -- evaluation ----------------------------------------------------------------------


@dataclass
class EvalReport:
    """Table-style evaluation summary (rates in percent)."""

    task: str
    episodes: int
    pick_rate: list[float]
    place_rate: list[float]
    success_rate: float
    self_collisions_per_episode: float
    mean_return: list[float]
    ik_pick_attempts: int = 0
    ik_pick_successes: int = 0
    ik_place_attempts: int = 0
    ik_place_successes: int = 0
    ik_failures: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for r in list(self.pick_rate) + list(self.place_rate) + [self.success_rate]:
            if not 0.0 <= r <= 100.0:
                raise ConfigError(f"rate out of [0, 100]: {r}")
        if self.self_collisions_per_episode < 0.0:
            raise ConfigError("collision mean must be >= 0")

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "episodes": self.episodes,
            "pick_rate": list(self.pick_rate),
            "place_rate": list(self.place_rate),
            "success_rate": self.success_rate,
            "self_collisions_per_episode": self.self_collisions_per_episode,
            "mean_return": list(self.mean_return),
            "ik_pick_attempts": self.ik_pick_attempts,
            "ik_pick_successes": self.ik_pick_successes,
            "ik_place_attempts": self.ik_place_attempts,
            "ik_place_successes": self.ik_place_successes,
            "ik_failures": dict(self.ik_failures),
        }


def policies_from_learners(learners) -> list:
    return [lr.policy.mean_action for lr in learners]


def _verify_ik_event(env: ConstructionEnv, event: dict, report: EvalReport) -> None:
    world: WorldState = event["world_before"]
    arm = event["arm"]
    obj = event.get("object")
    goal = event["goal"]
    ignore = (obj,) if obj else ()
    if env.spec.task == "2" and event["kind"] == "staged_place" and obj == "bolt_0":
        ignore = (obj, "plate")
    headings = [goal[2], goal[2] + 0.15, goal[2] - 0.15, goal[2] + 0.3]
    result = None
    for h in headings:
        result = finish_with_ik(
            world, env.spec.wspec, arm, (goal[0], goal[1], h), ignore_objects=ignore
        )
        if result.success:
            break
    kind = event["kind"]
    if kind == "staged_pick":
        report.ik_pick_attempts += 1
        if result.success:
            report.ik_pick_successes += 1
    else:
        report.ik_place_attempts += 1
        if result.success:
            report.ik_place_successes += 1
    if not result.success:
        key = f"{kind}:{result.failure}"
        report.ik_failures[key] = report.ik_failures.get(key, 0) + 1


def evaluate(
    policies,
    task: str,
    episodes: int = 100,
    seed: int = 12345,
    weights: RewardWeights | None = None,
    h_g_mode: str = "zero",
    episode_len: int | None = None,
    verify_ik: bool = True,
    env: ConstructionEnv | None = None,
) -> EvalReport:
    """Run seeded episodes under deterministic policies and tally stage rates.

    `policies` maps per-agent observations to actions (e.g. the policy means).
    Never mutates policy parameters.
    """
    if env is None:
        env = make_env(
            task, seed=seed, weights=weights, h_g_mode=h_g_mode, episode_len=episode_len
        )
    if len(policies) != env.n_agents:
        raise ConfigError(
            f"task {task} needs {env.n_agents} policies, got {len(policies)}"
        )
    env._record_events = verify_ik
    n_arms = env.spec.n_arms
    picked = np.zeros(n_arms)
    placed = np.zeros(n_arms)
    success = 0
    cs_total = 0.0
    returns = np.zeros(env.n_agents)
    report = EvalReport(
        task=str(task),
        episodes=episodes,
        pick_rate=[0.0] * n_arms,
        place_rate=[0.0] * n_arms,
        success_rate=0.0,
        self_collisions_per_episode=0.0,
        mean_return=[0.0] * env.n_agents,
    )

    for ep in range(episodes):
        obs = env.reset(seed=seed + ep)
        done = False
        while not done:
            actions = [policies[i](obs[i]) for i in range(env.n_agents)]
            obs, rewards, done, info = env.step(actions)
            returns += rewards
            cs_total += info["c_s"]
            if verify_ik:
                for event in info["events"]:
                    if event.get("kind", "").startswith("staged_"):
                        _verify_ik_event(env, event, report)
        flags = info["flags"]
        for i in range(n_arms):
            picked[i] += 1.0 if flags.picked[i] else 0.0
            placed[i] += 1.0 if flags.placed[i] else 0.0
        success += 1 if flags.success else 0

    report.pick_rate = [100.0 * p / episodes for p in picked]
    report.place_rate = [100.0 * p / episodes for p in placed]
    report.success_rate = 100.0 * success / episodes
    report.self_collisions_per_episode = cs_total / episodes
    report.mean_return = [float(r) / episodes for r in returns]
    return report


# -- oracle self-checks ---------------------------------------------------------------


def oracle_check(verbose: bool = False) -> tuple[bool, list[str]]:
    """Fast independent cross-checks of the numeric cores (GAE, IK, collisions)."""
    from .rollout import compute_deltas, compute_gae, compute_returns
    from .ik import solve_ik
    from .planarsim import detect_collisions, forward_kinematics
    from .geometry import Segment, segment_segment_distance
    from .tasks import LEFT_ARM, RIGHT_ARM, task_spec
    from .planarsim import WorldState as WS

    lines = []
    ok = True
    rng = np.random.default_rng(20240817)

    # recursive GAE/returns vs explicit per-episode sums
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 11))
        rewards = rng.normal(size=n)
        values = rng.normal(size=n)
        masks = (rng.random(n) > 0.3).astype(float)
        boot = float(rng.normal())
        gamma, lam = 0.99, 0.95
        deltas = compute_deltas(rewards, values, boot, masks, gamma)
        adv = compute_gae(deltas, masks, gamma, lam)
        ret = compute_returns(rewards, masks, boot, gamma)
        adv_ref = np.zeros(n)
        ret_ref = np.zeros(n)
        for t in range(n):
            acc = 0.0
            scale = 1.0
            for k in range(t, n):
                acc += scale * deltas[k]
                if masks[k] == 0.0:
                    break
                scale *= gamma * lam
            adv_ref[t] = acc
            acc = 0.0
            scale = 1.0
            for k in range(t, n):
                acc += scale * rewards[k]
                if masks[k] == 0.0:
                    break
                scale *= gamma
            else:
                acc += scale * boot
            ret_ref[t] = acc
        worst = max(
            worst,
            float(np.max(np.abs(adv - adv_ref))),
            float(np.max(np.abs(ret - ret_ref))),
        )
    line_ok = worst < 1e-10
    ok &= line_ok
    lines.append(f"{'PASS' if line_ok else 'FAIL'} advantage/return recursion vs explicit sums (max err {worst:.2e})")

    # IK round trip on random reachable targets
    worst = 0.0
    fails = 0
    for _ in range(2000):
        q = [float(rng.uniform(lo, hi)) for lo, hi in LEFT_ARM.joint_limits]
        _, tip = forward_kinematics(LEFT_ARM, q, (0.0, 0.0, math.pi / 2))
        try:
            sol = solve_ik(LEFT_ARM, tip, (0.0, 0.0, math.pi / 2), current_angles=q)
            worst = max(worst, sol.residual)
        except Exception:
            fails += 1
    line_ok = worst < 1e-9 and fails == 0
    ok &= line_ok
    lines.append(f"{'PASS' if line_ok else 'FAIL'} IK round-trip ({fails} failures, max residual {worst:.2e})")

    # collision detector vs brute force on random worlds
    spec = task_spec("1")
    mismatches = 0
    for _ in range(30):
        world = WS(
            body_pose=(0.0, 0.0, math.pi / 2),
            joint_angles=[
                [float(rng.uniform(lo, hi)) for lo, hi in arm.joint_limits]
                for arm in spec.wspec.arms
            ],
            object_poses={
                "bolt_0": (float(rng.uniform(-0.4, 0.4)), float(rng.uniform(0.0, 0.6)), 0.0),
                "bolt_1": (float(rng.uniform(-0.4, 0.4)), float(rng.uniform(0.0, 0.6)), 0.0),
                "platform": (0.0, 0.62, 0.0),
            },
            picked=[False, False],
            placed=[False, False],
        )
        report = detect_collisions(world, spec.wspec)
        brute = _brute_force_collisions(world, spec.wspec)
        if (report.c_s, report.c_o) != brute:
            mismatches += 1
    line_ok = mismatches == 0
    ok &= line_ok
    lines.append(f"{'PASS' if line_ok else 'FAIL'} collision detector vs brute force ({mismatches} mismatches)")

    # exact segment distance vs dense sampling
    worst = 0.0
    for _ in range(20):
        pts = rng.uniform(-1.0, 1.0, size=8)
        s = Segment(pts[0], pts[1], pts[2], pts[3])
        t = Segment(pts[4], pts[5], pts[6], pts[7])
        exact = segment_segment_distance(s, t)
        u = np.linspace(0.0, 1.0, 400)
        px = s.ax + u * (s.bx - s.ax)
        py = s.ay + u * (s.by - s.ay)
        qx = t.ax + u * (t.bx - t.ax)
        qy = t.ay + u * (t.by - t.ay)
        d2 = (px[:, None] - qx[None, :]) ** 2 + (py[:, None] - qy[None, :]) ** 2
        worst = max(worst, abs(exact - float(np.sqrt(d2.min()))))
    line_ok = worst < 5e-3
    ok &= line_ok
    lines.append(f"{'PASS' if line_ok else 'FAIL'} segment distance vs dense sampling (max gap {worst:.2e})")

    return bool(ok), lines


def _brute_force_collisions(world, wspec) -> tuple[int, int]:
    """Independent all-pairs distance check (same rule set)."""
    from .planarsim import _link_object_distance, forward_kinematics

    links = [
        forward_kinematics(arm, world.joint_angles[i], world.body_pose)[0]
        for i, arm in enumerate(wspec.arms)
    ]
    from .geometry import segment_segment_distance as ssd

    c_s = 0
    n = len(links)
    for i in range(n):
        for j in range(n):
            for a in range(len(links[i])):
                for b in range(len(links[j])):
                    if i == j and abs(a - b) < 2:
                        continue
                    if i > j or (i == j and a > b):
                        continue
                    if ssd(links[i][a], links[j][b]) < wspec.collision_margin:
                        c_s = 1
    c_o = 0
    for i in range(n):
        for link in links[i]:
            for name, ospec in wspec.objects.items():
                g = world.grasps.get(name)
                if g is not None and g.arm == i:
                    continue
                if _link_object_distance(link, world.object_poses[name], ospec) < wspec.collision_margin:
                    c_o = 1
    return c_s, c_o
