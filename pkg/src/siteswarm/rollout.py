"""Experience buffer plus masked advantage/return computation.

Masks mark episode ends inside a buffer: mask 0 on a step means the episode
terminated there, which cuts both value bootstrapping and advantage
accumulation across the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ConfigError, ShapeError


@dataclass
class Transition:
    """One environment step for all agents.

    obs rows are the per-agent views of the shared state (identical when
    action sharing is on); mask is 1 while the episode continues.
    """

    obs: np.ndarray            # (n_agents, obs_dim_i) as object array or list
    actions: list[np.ndarray]  # per-agent action vectors
    rewards: np.ndarray        # (n_agents,)
    values: np.ndarray         # (n_agents,)
    log_probs: np.ndarray      # (n_agents,)
    mask: int

    def __post_init__(self) -> None:
        if self.mask not in (0, 1):
            raise ShapeError(f"mask must be 0 or 1, got {self.mask}")
        for arr in (self.rewards, self.values, self.log_probs):
            if not np.all(np.isfinite(arr)):
                raise ShapeError("transition contains non-finite values")


class RolloutBuffer:
    """Fixed-capacity ordered store of transitions."""

    def __init__(self, capacity: int) -> None:
        if capacity <= 0:
            raise ConfigError(f"buffer capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.transitions: list[Transition] = []

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def full(self) -> bool:
        return len(self.transitions) >= self.capacity

    def append(self, transition: Transition) -> None:
        if self.full:
            raise CapacityError(f"buffer already holds {self.capacity} transitions")
        n_agents = len(transition.actions)
        if self.transitions and len(self.transitions[0].actions) != n_agents:
            raise ShapeError("agent count changed mid-buffer")
        self.transitions.append(transition)

    def column(self, name: str, agent: int) -> np.ndarray:
        """Stack one per-agent field ('rewards', 'values', 'log_probs') over time."""
        return np.array(
            [getattr(t, name)[agent] for t in self.transitions], dtype=np.float64
        )

    def masks(self) -> np.ndarray:
        return np.array([t.mask for t in self.transitions], dtype=np.float64)


def _check_lengths(*seqs) -> int:
    n = len(seqs[0])
    for s in seqs[1:]:
        if len(s) != n:
            raise ShapeError(f"sequence lengths differ: {[len(x) for x in seqs]}")
    return n


def compute_deltas(
    rewards, values, bootstrap: float, masks, gamma: float
) -> np.ndarray:
    """TD residuals: delta_t = r_t + gamma*m_t*V(s_{t+1}) - V(s_t).

    V(s_T) for the step after the buffer is `bootstrap`; a zero mask removes
    the bootstrap term on that step.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    masks = np.asarray(masks, dtype=np.float64)
    n = _check_lengths(rewards, values, masks)
    if not 0.0 < gamma <= 1.0:
        raise ConfigError(f"gamma must be in (0, 1], got {gamma}")
    next_values = np.append(values[1:], bootstrap)
    deltas = rewards + gamma * masks * next_values - values
    return deltas[:n]


def compute_gae(deltas, masks, gamma: float, gae_lambda: float) -> np.ndarray:
    """Backward recursion A_t = delta_t + gamma*lambda*m_t*A_{t+1}.

    Equals the explicit exponentially-weighted sum of TD residuals within
    each mask-delimited episode.
    """
    deltas = np.asarray(deltas, dtype=np.float64)
    masks = np.asarray(masks, dtype=np.float64)
    _check_lengths(deltas, masks)
    if not 0.0 <= gae_lambda <= 1.0:
        raise ConfigError(f"gae_lambda must be in [0, 1], got {gae_lambda}")
    out = np.empty_like(deltas)
    acc = 0.0
    decay = gamma * gae_lambda
    for t in range(len(deltas) - 1, -1, -1):
        acc = deltas[t] + decay * masks[t] * acc
        out[t] = acc
    return out


def compute_returns(rewards, masks, bootstrap: float, gamma: float) -> np.ndarray:
    """Discounted return targets: v_t = r_t + gamma*m_t*v_{t+1}, v_T = bootstrap."""
    rewards = np.asarray(rewards, dtype=np.float64)
    masks = np.asarray(masks, dtype=np.float64)
    _check_lengths(rewards, masks)
    out = np.empty_like(rewards)
    acc = float(bootstrap)
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * masks[t] * acc
        out[t] = acc
    return out


def minibatch_indices(
    buffer_size: int, num_minibatches: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Random partition of 0..buffer_size-1 into equally sized index sets."""
    if num_minibatches <= 0 or buffer_size % num_minibatches != 0:
        raise ConfigError(
            f"num_minibatches ({num_minibatches}) must divide buffer size ({buffer_size})"
        )
    perm = rng.permutation(buffer_size)
    return [np.sort(chunk) for chunk in np.split(perm, num_minibatches)]
