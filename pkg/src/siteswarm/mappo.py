"""Multi-agent clipped-surrogate training loop.

Each agent owns an independent policy/value pair; coordination comes from the
shared observation vector that embeds every agent's previous action.  One
outer iteration collects a fixed-size buffer under the current policies,
computes masked advantages and return targets, then runs several epochs of
minibatch updates per agent against log-probabilities frozen at collection
time.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, fields
from typing import Callable, Sequence

import numpy as np

from . import autodiff
from .autodiff import Tape, backward
from .errors import ConfigError, NumericsError
from .nets import (
    AdamState,
    GaussianPolicy,
    ValueNet,
    adam_step,
    clip_grads,
    sample_action,
)
from .rollout import (
    RolloutBuffer,
    Transition,
    compute_deltas,
    compute_gae,
    compute_returns,
    minibatch_indices,
)

# published per-task training configurations (steps, buffer, episode length)
TRAIN_DEFAULTS = {
    "reach": {"total_steps": 2_000_000, "buffer_size": 2000, "episode_len": 20},
    "1": {"total_steps": 2_000_000, "buffer_size": 2000, "episode_len": 20},
    "2": {"total_steps": 2_500_000, "buffer_size": 2000, "episode_len": 30},
    "3": {"total_steps": 2_000_000, "buffer_size": 2000, "episode_len": 25},
    "4": {"total_steps": 1_000_000, "buffer_size": 4000, "episode_len": 50},
}


@dataclass
class TrainerConfig:
    """All training hyperparameters (defaults from the per-task table)."""

    total_steps: int = 2_000_000
    buffer_size: int = 2000
    num_minibatches: int = 5
    epochs: int = 4
    lr: float = 5e-4
    clip_coef: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    gae_lambda: float = 0.95
    gamma: float = 0.99
    episode_len: int = 20
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    normalize_advantages: bool = True
    action_sharing: bool = True
    max_grad_norm: float = 0.5
    num_envs: int = 1

    def validate(self) -> "TrainerConfig":
        if self.total_steps <= 0 or self.buffer_size <= 0 or self.episode_len <= 0:
            raise ConfigError("step counts must be positive")
        if self.epochs <= 0 or self.num_minibatches <= 0:
            raise ConfigError("epochs and minibatch count must be positive")
        if self.buffer_size % self.num_minibatches != 0:
            raise ConfigError(
                f"num_minibatches ({self.num_minibatches}) must divide "
                f"buffer_size ({self.buffer_size})"
            )
        if self.num_envs <= 0 or self.buffer_size % self.num_envs != 0:
            raise ConfigError("num_envs must be positive and divide buffer_size")
        if not 0.0 < self.clip_coef < 1.0:
            raise ConfigError(f"clip_coef must be in (0, 1), got {self.clip_coef}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError(f"gae_lambda must be in [0, 1], got {self.gae_lambda}")
        if self.lr <= 0.0 or self.value_coef < 0.0 or self.entropy_coef < 0.0:
            raise ConfigError("lr must be positive; loss weights non-negative")
        return self

    @staticmethod
    def for_task(task: str, **overrides) -> "TrainerConfig":
        base = dict(TRAIN_DEFAULTS.get(str(task), {}))
        base.update(overrides)
        return TrainerConfig(**base).validate()

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @staticmethod
    def from_dict(d: dict) -> "TrainerConfig":
        known = {f.name for f in fields(TrainerConfig)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown trainer config keys: {sorted(unknown)}")
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return TrainerConfig(**d).validate()


# -- loss pieces ---------------------------------------------------------------


def clipped_surrogate(ratio: float, advantage: float, clip_coef: float) -> float:
    """min(ratio * A, clip(ratio, 1-c, 1+c) * A) for one sample."""
    if not math.isfinite(ratio):
        raise NumericsError(f"non-finite probability ratio: {ratio}")
    clipped = min(max(ratio, 1.0 - clip_coef), 1.0 + clip_coef)
    return min(ratio * advantage, clipped * advantage)


def value_loss(v_pred: float, v_target: float) -> float:
    """Half squared error."""
    return 0.5 * (v_pred - v_target) ** 2


def total_loss(
    l_clip: float, l_v: float, l_e: float, value_coef: float, entropy_coef: float
) -> float:
    """The minimized objective: descend value error, ascend surrogate and entropy."""
    return -l_clip + value_coef * l_v - entropy_coef * l_e


class AgentLearner:
    """Policy/value pair plus optimizer state for one agent."""

    def __init__(
        self,
        index: int,
        obs_dim: int,
        action_dim: int,
        hidden: Sequence[int],
        rng: np.random.Generator,
    ) -> None:
        self.index = index
        self.policy = GaussianPolicy(
            obs_dim, action_dim, rng=rng, name=f"agent{index}", hidden=hidden
        )
        self.value = ValueNet(obs_dim, rng=rng, name=f"agent{index}", hidden=hidden)
        self.opt_policy = AdamState(self.policy.parameters())
        self.opt_value = AdamState(self.value.parameters())


@dataclass
class AgentUpdateStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    clip_fraction: float = 0.0
    mean_ratio: float = 0.0
    grad_norm_policy: float = 0.0
    grad_norm_value: float = 0.0


@dataclass
class AgentBatch:
    """Flat per-agent training arrays for one iteration."""

    obs: np.ndarray       # (M, D)
    actions: np.ndarray   # (M, A)
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray


def update_agents(
    learners: Sequence[AgentLearner],
    batches: Sequence[AgentBatch],
    config: TrainerConfig,
    rng: np.random.Generator,
) -> list[AgentUpdateStats]:
    """K epochs of n-minibatch updates for every agent; returns mean stats."""
    stats: list[AgentUpdateStats] = []
    for learner, batch in zip(learners, batches):
        m = batch.obs.shape[0]
        acc = AgentUpdateStats()
        count = 0
        for _ in range(config.epochs):
            for idx in minibatch_indices(m, config.num_minibatches, rng):
                acc_update = _minibatch_update(learner, batch, idx, config)
                for name in vars(acc):
                    setattr(acc, name, getattr(acc, name) + getattr(acc_update, name))
                count += 1
        for name in vars(acc):
            setattr(acc, name, getattr(acc, name) / count)
        stats.append(acc)
    return stats


def _minibatch_update(
    learner: AgentLearner, batch: AgentBatch, idx: np.ndarray, config: TrainerConfig
) -> AgentUpdateStats:
    obs = batch.obs[idx]
    actions = batch.actions[idx]
    old_lp = batch.old_log_probs[idx]
    adv = batch.advantages[idx]
    ret = batch.returns[idx]
    if config.normalize_advantages:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    tape = Tape()
    lp = learner.policy.log_prob_node(tape, obs, actions)
    ratio = (lp - tape.constant(old_lp)).exp()
    if not np.all(np.isfinite(ratio.data)):
        raise NumericsError("probability ratio blew up (non-finite)")
    adv_c = tape.constant(adv)
    surrogate = autodiff.minimum(
        ratio * adv_c,
        autodiff.clip(ratio, 1.0 - config.clip_coef, 1.0 + config.clip_coef) * adv_c,
    )
    l_clip = surrogate.mean()
    l_e = learner.policy.entropy_node(tape)
    v = learner.value.value_node(tape, obs)
    l_v = ((v - tape.constant(ret)).square() * 0.5).mean()
    loss = -l_clip + l_v * config.value_coef - l_e * config.entropy_coef
    if not np.isfinite(loss.data):
        raise NumericsError(
            f"agent {learner.index}: non-finite loss "
            f"(l_clip={l_clip.data}, l_v={l_v.data}, l_e={l_e.data})"
        )
    grads = backward(tape, loss)

    pol_params = learner.policy.parameters()
    val_params = learner.value.parameters()
    pol_grads, pol_norm = clip_grads(pol_params, grads, config.max_grad_norm)
    val_grads, val_norm = clip_grads(val_params, grads, config.max_grad_norm)
    adam_step(pol_params, pol_grads, learner.opt_policy, config.lr)
    adam_step(val_params, val_grads, learner.opt_value, config.lr)
    learner.policy.clamp_log_std()

    r = ratio.data
    return AgentUpdateStats(
        policy_loss=float(-l_clip.data),
        value_loss=float(l_v.data),
        entropy=float(l_e.data),
        clip_fraction=float(np.mean(np.abs(r - 1.0) > config.clip_coef)),
        mean_ratio=float(r.mean()),
        grad_norm_policy=pol_norm,
        grad_norm_value=val_norm,
    )


# -- training loop -------------------------------------------------------------


@dataclass
class IterationRecord:
    """One row of the metrics history."""

    iteration: int
    env_steps: int
    agents: list[dict]
    success_rate_rolling: float
    self_collisions_rolling: float

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "agents": [dict(a) for a in self.agents],
            "success_rate_rolling": self.success_rate_rolling,
            "self_collisions_rolling": self.self_collisions_rolling,
        }

    @staticmethod
    def from_dict(d: dict) -> "IterationRecord":
        return IterationRecord(
            iteration=int(d["iteration"]),
            env_steps=int(d["env_steps"]),
            agents=[dict(a) for a in d["agents"]],
            success_rate_rolling=float(d["success_rate_rolling"]),
            self_collisions_rolling=float(d["self_collisions_rolling"]),
        )


ROLLING_WINDOW = 50


class Trainer:
    """Owns the environments, learners, and the outer iteration schedule."""

    def __init__(self, env_factory: Callable[[int], object], config: TrainerConfig) -> None:
        self.config = config.validate()
        self.envs = [env_factory(config.seed + 100 + e) for e in range(config.num_envs)]
        env0 = self.envs[0]
        self.n_agents = env0.n_agents
        self.obs_dim = env0.obs_dim
        self.action_dims = list(env0.action_dims)
        for env in self.envs:
            env.action_sharing = config.action_sharing

        init_rng = np.random.default_rng(config.seed)
        self.learners = [
            AgentLearner(i, self.obs_dim, self.action_dims[i], config.hidden, init_rng)
            for i in range(self.n_agents)
        ]
        self.rng = np.random.default_rng(config.seed + 1)
        self.iteration = 0
        self.env_steps = 0
        self.history: list[IterationRecord] = []
        self._env_obs = [env.reset() for env in self.envs]
        self._ep_returns = [np.zeros(self.n_agents) for _ in self.envs]
        self._ep_cs = [0 for _ in self.envs]
        self._roll_success: deque[float] = deque(maxlen=ROLLING_WINDOW)
        self._roll_cs: deque[float] = deque(maxlen=ROLLING_WINDOW)

    @property
    def total_iterations(self) -> int:
        return math.ceil(self.config.total_steps / self.config.buffer_size)

    # -- collection --

    def _collect(self):
        """Fill one buffer; returns (buffer segments, bootstraps) per env."""
        cfg = self.config
        steps_per_env = cfg.buffer_size // cfg.num_envs
        segments: list[RolloutBuffer] = []
        bootstraps: list[np.ndarray] = []
        episode_returns: list[np.ndarray] = []
        for e, env in enumerate(self.envs):
            buf = RolloutBuffer(steps_per_env)
            obs = self._env_obs[e]
            for _ in range(steps_per_env):
                actions = []
                lps = np.empty(self.n_agents)
                vals = np.empty(self.n_agents)
                for i, learner in enumerate(self.learners):
                    head = learner.policy.head(obs[i])
                    a, lp = sample_action(head, self.rng)
                    actions.append(a)
                    lps[i] = lp
                    vals[i] = learner.value.value(obs[i])
                next_obs, rewards, done, info = env.step(actions)
                buf.append(
                    Transition(obs, actions, rewards, vals, lps, 0 if done else 1)
                )
                self._ep_returns[e] += rewards
                self._ep_cs[e] += info["c_s"]
                if done:
                    episode_returns.append(self._ep_returns[e].copy())
                    self._roll_success.append(1.0 if info["success"] else 0.0)
                    self._roll_cs.append(float(self._ep_cs[e]))
                    self._ep_returns[e] = np.zeros(self.n_agents)
                    self._ep_cs[e] = 0
                    next_obs = env.reset()
                obs = next_obs
            self._env_obs[e] = obs
            boot = np.array(
                [lr.value.value(obs[i]) for i, lr in enumerate(self.learners)]
            )
            segments.append(buf)
            bootstraps.append(boot)
            self.env_steps += steps_per_env
        return segments, bootstraps, episode_returns

    def _batches(self, segments, bootstraps) -> list[AgentBatch]:
        cfg = self.config
        batches = []
        for i in range(self.n_agents):
            obs_parts, act_parts, lp_parts, adv_parts, ret_parts = [], [], [], [], []
            for buf, boot in zip(segments, bootstraps):
                masks = buf.masks()
                rewards = buf.column("rewards", i)
                values = buf.column("values", i)
                deltas = compute_deltas(rewards, values, boot[i], masks, cfg.gamma)
                adv = compute_gae(deltas, masks, cfg.gamma, cfg.gae_lambda)
                ret = compute_returns(rewards, masks, boot[i], cfg.gamma)
                obs_parts.append(np.stack([t.obs[i] for t in buf.transitions]))
                act_parts.append(np.stack([t.actions[i] for t in buf.transitions]))
                lp_parts.append(buf.column("log_probs", i))
                adv_parts.append(adv)
                ret_parts.append(ret)
            batches.append(
                AgentBatch(
                    obs=np.concatenate(obs_parts),
                    actions=np.concatenate(act_parts),
                    old_log_probs=np.concatenate(lp_parts),
                    advantages=np.concatenate(adv_parts),
                    returns=np.concatenate(ret_parts),
                )
            )
        return batches

    # -- iterations --

    def run_iteration(self) -> IterationRecord:
        segments, bootstraps, episode_returns = self._collect()
        batches = self._batches(segments, bootstraps)
        stats = update_agents(self.learners, batches, self.config, self.rng)
        self.iteration += 1

        if episode_returns:
            mean_returns = np.mean(np.stack(episode_returns), axis=0)
        else:
            mean_returns = np.zeros(self.n_agents)
        agents = []
        for i, s in enumerate(stats):
            agents.append(
                {
                    "mean_episode_return": float(mean_returns[i]),
                    "policy_loss": s.policy_loss,
                    "value_loss": s.value_loss,
                    "entropy": s.entropy,
                    "clip_fraction": s.clip_fraction,
                }
            )
        record = IterationRecord(
            iteration=self.iteration,
            env_steps=self.env_steps,
            agents=agents,
            success_rate_rolling=(
                float(np.mean(self._roll_success)) if self._roll_success else 0.0
            ),
            self_collisions_rolling=(
                float(np.mean(self._roll_cs)) if self._roll_cs else 0.0
            ),
        )
        self.history.append(record)
        return record

    def run(
        self, on_iteration: Callable[["Trainer", IterationRecord], None] | None = None
    ) -> list[IterationRecord]:
        while self.iteration < self.total_iterations:
            record = self.run_iteration()
            if on_iteration is not None:
                on_iteration(self, record)
        return self.history

    # -- checkpoint state --

    def state_dict(self) -> dict:
        from .nets import adam_payload, dense_net_payload, _encode_array

        learners = []
        for lr in self.learners:
            learners.append(
                {
                    "policy_net": dense_net_payload(lr.policy.net),
                    "log_std": _encode_array(lr.policy.log_std.data),
                    "value_net": dense_net_payload(lr.value.net),
                    "adam_policy": adam_payload(lr.opt_policy),
                    "adam_value": adam_payload(lr.opt_value),
                }
            )
        return {
            "nn_format": 1,
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "rng": self.rng.bit_generator.state,
            "learners": learners,
            "envs": [env.get_state() for env in self.envs],
            "env_obs": [obs.tolist() for obs in self._env_obs],
            "ep_returns": [r.tolist() for r in self._ep_returns],
            "ep_cs": list(self._ep_cs),
            "rolling_success": list(self._roll_success),
            "rolling_cs": list(self._roll_cs),
            "history": [r.to_dict() for r in self.history],
        }

    def load_state_dict(self, state: dict) -> None:
        from .nets import load_adam, load_dense_net, _decode_array

        if state.get("nn_format") != 1:
            raise ConfigError(f"unsupported nn_format: {state.get('nn_format')}")
        self.iteration = int(state["iteration"])
        self.env_steps = int(state["env_steps"])
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = state["rng"]
        for lr, payload in zip(self.learners, state["learners"]):
            load_dense_net(lr.policy.net, payload["policy_net"])
            lr.policy.log_std.data = _decode_array(
                payload["log_std"], lr.policy.log_std.data.shape
            )
            load_dense_net(lr.value.net, payload["value_net"])
            load_adam(lr.opt_policy, payload["adam_policy"])
            load_adam(lr.opt_value, payload["adam_value"])
        for env, env_state in zip(self.envs, state["envs"]):
            env.set_state(env_state)
        self._env_obs = [np.asarray(o, dtype=np.float64) for o in state["env_obs"]]
        self._ep_returns = [np.asarray(r, dtype=np.float64) for r in state["ep_returns"]]
        self._ep_cs = [int(c) for c in state["ep_cs"]]
        self._roll_success = deque(
            [float(x) for x in state["rolling_success"]], maxlen=ROLLING_WINDOW
        )
        self._roll_cs = deque([float(x) for x in state["rolling_cs"]], maxlen=ROLLING_WINDOW)
        self.history = [IterationRecord.from_dict(d) for d in state["history"]]


def train(
    env_factory: Callable[[int], object],
    config: TrainerConfig,
    on_iteration: Callable[[Trainer, IterationRecord], None] | None = None,
) -> tuple[list[AgentLearner], list[IterationRecord]]:
    """Run the full training schedule; returns learners and metrics history."""
    trainer = Trainer(env_factory, config)
    history = trainer.run(on_iteration)
    return trainer.learners, history
