"""Buffer behavior and the masked advantage/return recursions vs brute force."""

import numpy as np
import pytest

from siteswarm.errors import CapacityError, ConfigError
from siteswarm.rollout import (
    RolloutBuffer,
    Transition,
    compute_deltas,
    compute_gae,
    compute_returns,
    minibatch_indices,
)


def make_transition(mask=1, reward=0.5):
    return Transition(
        obs=np.zeros((2, 4)),
        actions=[np.array([0.1, 0.2]), np.array([-0.3, 0.0])],
        rewards=np.array([reward, -reward]),
        values=np.array([0.9, 0.8]),
        log_probs=np.array([-1.1, -1.2]),
        mask=mask,
    )


# -- explicit-sum oracles (independent of the recursive implementations) --------


def episode_slices(masks):
    """Split indices into episodes: a zero mask ends an episode at that step."""
    slices, start = [], 0
    for t, m in enumerate(masks):
        if m == 0:
            slices.append((start, t + 1, True))
            start = t + 1
    if start < len(masks):
        slices.append((start, len(masks), False))
    return slices


def brute_force_gae(deltas, masks, gamma, lam):
    out = np.zeros(len(deltas))
    for lo, hi, _ in episode_slices(masks):
        for t in range(lo, hi):
            acc = 0.0
            for k in range(t, hi):
                acc += (gamma * lam) ** (k - t) * deltas[k]
            out[t] = acc
    return out


def brute_force_returns(rewards, masks, bootstrap, gamma):
    out = np.zeros(len(rewards))
    for lo, hi, terminated in episode_slices(masks):
        for t in range(lo, hi):
            acc = 0.0
            for k in range(t, hi):
                acc += gamma ** (k - t) * rewards[k]
            if not terminated:
                acc += gamma ** (hi - t) * bootstrap
            out[t] = acc
    return out


# -- buffer ---------------------------------------------------------------------


def test_append_grows_buffer():
    buf = RolloutBuffer(4)
    buf.append(make_transition())
    assert len(buf) == 1


def test_append_past_capacity_raises():
    buf = RolloutBuffer(2)
    buf.append(make_transition())
    buf.append(make_transition())
    with pytest.raises(CapacityError):
        buf.append(make_transition())


def test_appended_fields_read_back_identical():
    buf = RolloutBuffer(1)
    t = make_transition(reward=0.123456789)
    buf.append(t)
    got = buf.transitions[0]
    assert np.array_equal(got.rewards, t.rewards)
    assert np.array_equal(got.actions[1], t.actions[1])
    assert got.mask == 1
    assert buf.column("rewards", 0)[0] == 0.123456789


def test_transition_rejects_bad_mask_and_nonfinite():
    with pytest.raises(Exception):
        make_transition(mask=2)
    with pytest.raises(Exception):
        Transition(
            obs=np.zeros((1, 2)),
            actions=[np.zeros(1)],
            rewards=np.array([np.inf]),
            values=np.array([0.0]),
            log_probs=np.array([0.0]),
            mask=1,
        )


# -- deltas ------------------------------------------------------------------------


def test_deltas_single_terminal_step():
    d = compute_deltas([1.0], [0.5], bootstrap=0.0, masks=[0], gamma=0.99)
    assert d == pytest.approx([0.5])


def test_deltas_all_zero():
    d = compute_deltas([0.0, 0.0], [0.0, 0.0], 0.0, [1, 1], 0.99)
    assert np.array_equal(d, np.zeros(2))


def test_deltas_with_bootstrap():
    d = compute_deltas([1.0, 1.0], [0.0, 0.0], bootstrap=2.0, masks=[1, 1], gamma=0.99)
    assert d == pytest.approx([1.0, 2.98])


def test_deltas_zero_mask_cuts_bootstrap():
    d = compute_deltas([1.0, 1.0], [0.0, 0.0], bootstrap=2.0, masks=[1, 0], gamma=0.99)
    assert d == pytest.approx([1.0, 1.0])


def test_deltas_length_mismatch():
    with pytest.raises(Exception):
        compute_deltas([1.0], [0.5, 0.5], 0.0, [1], 0.99)


# -- gae ------------------------------------------------------------------------------


def test_gae_two_step_example():
    adv = compute_gae([1.0, 1.0], [1, 1], gamma=0.99, gae_lambda=0.95)
    assert adv == pytest.approx([1.9405, 1.0])


def test_gae_boundary_cut():
    adv = compute_gae([1.0, 1.0], [0, 1], gamma=0.99, gae_lambda=0.95)
    assert adv == pytest.approx([1.0, 1.0])


def test_gae_lambda_one_reduces_to_discounted_delta_sum():
    rng = np.random.default_rng(5)
    deltas = rng.normal(size=8)
    adv = compute_gae(deltas, np.ones(8), gamma=0.97, gae_lambda=1.0)
    expect = brute_force_gae(deltas, np.ones(8), 0.97, 1.0)
    assert adv == pytest.approx(expect, abs=1e-12)


def test_gae_rejects_bad_lambda():
    with pytest.raises(ConfigError):
        compute_gae([1.0], [1], 0.99, 1.5)


# -- returns ---------------------------------------------------------------------------


def test_returns_two_step_example():
    v = compute_returns([1.0, 1.0], [1, 1], bootstrap=2.0, gamma=0.99)
    assert v == pytest.approx([1.0 + 0.99 * (1.0 + 0.99 * 2.0), 2.98])
    assert v == pytest.approx([3.9502, 2.98])


def test_returns_zero():
    v = compute_returns([0.0, 0.0], [1, 1], 0.0, 0.99)
    assert np.array_equal(v, np.zeros(2))


def test_returns_terminal_single_step():
    v = compute_returns([5.0], [0], bootstrap=7.0, gamma=0.99)
    assert v == pytest.approx([5.0])


# -- minibatch indices --------------------------------------------------------------------


def test_minibatch_partition_2000_by_5():
    sets = minibatch_indices(2000, 5, np.random.default_rng(0))
    assert len(sets) == 5
    assert all(len(s) == 400 for s in sets)
    union = np.concatenate(sets)
    assert len(np.unique(union)) == 2000


def test_minibatch_deterministic():
    a = minibatch_indices(4, 2, np.random.default_rng(77))
    b = minibatch_indices(4, 2, np.random.default_rng(77))
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_minibatch_indivisible_raises():
    with pytest.raises(ConfigError):
        minibatch_indices(5, 2, np.random.default_rng(0))


# -- oracle equivalence over random masked sequences ----------------------------------------


def test_recursions_match_brute_force_on_random_sequences():
    """1000 random masked sequences (T<=10): recursive vs explicit sums, 1e-10."""
    rng = np.random.default_rng(314)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 11))
        rewards = rng.normal(size=n)
        values = rng.normal(size=n)
        masks = (rng.random(n) > 0.3).astype(float)
        boot = float(rng.normal())
        gamma = float(rng.uniform(0.9, 1.0))
        lam = float(rng.uniform(0.0, 1.0))
        deltas = compute_deltas(rewards, values, boot, masks, gamma)
        adv = compute_gae(deltas, masks, gamma, lam)
        ret = compute_returns(rewards, masks, boot, gamma)
        worst = max(
            worst,
            float(np.max(np.abs(adv - brute_force_gae(deltas, masks, gamma, lam)))),
            float(np.max(np.abs(ret - brute_force_returns(rewards, masks, boot, gamma)))),
        )
    assert worst < 1e-10


def test_mask_isolation_concatenated_episodes():
    """A separating zero mask makes two episodes compute independently."""
    rng = np.random.default_rng(6)
    r1, v1 = rng.normal(size=4), rng.normal(size=4)
    r2, v2 = rng.normal(size=3), rng.normal(size=3)
    gamma, lam = 0.99, 0.95
    boot = 0.7

    m1 = np.array([1, 1, 1, 0.0])
    d1 = compute_deltas(r1, v1, 0.0, m1, gamma)
    a1 = compute_gae(d1, m1, gamma, lam)
    g1 = compute_returns(r1, m1, 0.0, gamma)

    m2 = np.array([1, 1, 1.0])
    d2 = compute_deltas(r2, v2, boot, m2, gamma)
    a2 = compute_gae(d2, m2, gamma, lam)
    g2 = compute_returns(r2, m2, boot, gamma)

    r = np.concatenate([r1, r2])
    v = np.concatenate([v1, v2])
    m = np.concatenate([m1, m2])
    d = compute_deltas(r, v, boot, m, gamma)
    a = compute_gae(d, m, gamma, lam)
    g = compute_returns(r, m, boot, gamma)

    assert a == pytest.approx(np.concatenate([a1, a2]), abs=1e-12)
    assert g == pytest.approx(np.concatenate([g1, g2]), abs=1e-12)


def test_advantage_equals_return_minus_value_at_lambda_one():
    rng = np.random.default_rng(8)
    for _ in range(50):
        n = int(rng.integers(1, 12))
        rewards = rng.normal(size=n)
        values = rng.normal(size=n)
        masks = (rng.random(n) > 0.25).astype(float)
        boot = float(rng.normal())
        gamma = 0.99
        deltas = compute_deltas(rewards, values, boot, masks, gamma)
        adv = compute_gae(deltas, masks, gamma, 1.0)
        ret = compute_returns(rewards, masks, boot, gamma)
        assert adv == pytest.approx(ret - values, abs=1e-10)
