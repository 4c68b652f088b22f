"""Deterministic, seedable desk-scale control environments plus a rollout engine.

Dynamics transcribe the standard published benchmark implementations; all the
constants live in the two blocks below. Action bounds are enforced inside
``step`` and the *clipped* action feeds both the dynamics and the control-cost
term. Environments are stateless: ``step`` is a pure function of
``(state, action)``, so episodes can run concurrently.

Seeding: episode ``i`` of a rollout draws from a counter-based Philox
generator keyed with ``(master_seed, i)``, which reproduces bit-identically
across platforms. Start states: mountain car draws position uniform on
[start_low, start_high] with zero velocity; pendulum draws the angle uniform
on [-pi, pi] and then the angular velocity uniform on [-1, 1].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import netio
from .netio import DimensionError, NetworkSpec, TaskKind
from .pidpolicy import PidPolicySpec, pid_act
from .tree import ActivationTrace, ObliqueTree, infer


class UnknownEnvError(KeyError):
    """No environment registered under the requested id."""


class MountainCar:
    """Continuous mountain car: reach the right hilltop; full throttle alone stalls."""

    env_id = "mountain_car"
    obs_dim = 2
    action_dim = 1
    action_low = -1.0
    action_high = 1.0
    max_steps = 999

    power = 0.0015
    gravity = 0.0025
    min_position = -1.2
    max_position = 0.6
    max_speed = 0.07
    goal_position = 0.45
    goal_velocity = 0.0
    start_low = -0.6
    start_high = -0.4

    def reset(self, rng: np.random.Generator):
        return (rng.uniform(self.start_low, self.start_high), 0.0)

    def observe(self, state) -> np.ndarray:
        return np.array(state, dtype=np.float64)

    def step(self, state, action):
        position, velocity = state
        force = min(max(float(action[0]), self.action_low), self.action_high)
        velocity += force * self.power - self.gravity * math.cos(3 * position)
        velocity = min(max(velocity, -self.max_speed), self.max_speed)
        position += velocity
        position = min(max(position, self.min_position), self.max_position)
        if position == self.min_position and velocity < 0:
            velocity = 0.0
        done = position >= self.goal_position and velocity >= self.goal_velocity
        reward = (100.0 if done else 0.0) - 0.1 * force * force
        return (position, velocity), reward, done


class Pendulum:
    """Torque-limited pendulum swing-up; observations are (cos a, sin a, a_dot)."""

    env_id = "pendulum"
    obs_dim = 3
    action_dim = 1
    action_low = -2.0
    action_high = 2.0
    max_steps = 200

    g = 10.0
    m = 1.0
    l = 1.0
    dt = 0.05
    max_speed = 8.0

    def reset(self, rng: np.random.Generator):
        theta = rng.uniform(-math.pi, math.pi)
        theta_dot = rng.uniform(-1.0, 1.0)
        return (theta, theta_dot)

    def observe(self, state) -> np.ndarray:
        theta, theta_dot = state
        return np.array([math.cos(theta), math.sin(theta), theta_dot], dtype=np.float64)

    def step(self, state, action):
        theta, theta_dot = state
        u = min(max(float(action[0]), self.action_low), self.action_high)
        angle = _angle_normalize(theta)
        cost = angle * angle + 0.1 * theta_dot * theta_dot + 0.001 * u * u
        theta_dot = theta_dot + (
            3.0 * self.g / (2.0 * self.l) * math.sin(theta)
            + 3.0 / (self.m * self.l * self.l) * u
        ) * self.dt
        theta_dot = min(max(theta_dot, -self.max_speed), self.max_speed)
        theta = theta + theta_dot * self.dt
        return (theta, theta_dot), -cost, False


def _angle_normalize(x: float) -> float:
    return (x + math.pi) % (2 * math.pi) - math.pi


ENVS = {MountainCar.env_id: MountainCar(), Pendulum.env_id: Pendulum()}


def get_env(env_id: str):
    env = ENVS.get(str(env_id).replace("-", "_"))
    if env is None:
        raise UnknownEnvError(f"unknown environment {env_id!r}; have {sorted(ENVS)}")
    return env


def env_step(env_id: str, state, action):
    """Advance one step: returns (next_state, reward, done). Pure and deterministic."""
    return get_env(env_id).step(state, np.atleast_1d(np.asarray(action, dtype=np.float64)))


def episode_rng(seed: int, episode: int) -> np.random.Generator:
    """Philox generator for one episode, keyed by (master seed, episode index)."""
    return np.random.Generator(np.random.Philox(key=[seed, episode]))


@dataclass
class RolloutResult:
    """Per-episode rewards plus summary statistics and optional side products.

    ``trace`` is populated when the policy is a network; ``pruned_fallbacks``
    counts inference steps that landed on a pruned branch of a tree policy;
    ``clipped_actions`` counts steps whose raw action violated the env bounds.
    """

    env_id: str
    seed: int
    rewards: list[float]
    steps: int
    trace: ActivationTrace | None = None
    pruned_fallbacks: int = 0
    clipped_actions: int = 0

    @property
    def mean(self) -> float:
        return float(np.mean(self.rewards))

    @property
    def std(self) -> float:
        return float(np.std(self.rewards))

    def to_dict(self) -> dict:
        return {
            "env_id": self.env_id,
            "seed": self.seed,
            "episodes": len(self.rewards),
            "mean": self.mean,
            "std": self.std,
            "steps": self.steps,
            "pruned_fallbacks": self.pruned_fallbacks,
            "clipped_actions": self.clipped_actions,
            "rewards": self.rewards,
        }


def _policy_adapter(policy, env):
    """Return (act(obs) -> action vector, per-episode reset hook, watchers)."""
    if isinstance(policy, NetworkSpec):
        if policy.input_dim != env.obs_dim:
            raise DimensionError(
                f"policy reads {policy.input_dim} inputs, {env.env_id} emits {env.obs_dim}"
            )
        patterns: dict[str, int] = {}

        def act(obs):
            out, bits = netio.forward_with_pattern(policy, obs)
            patterns[bits] = patterns.get(bits, 0) + 1
            return out

        return act, lambda: None, {"patterns": patterns}

    if isinstance(policy, ObliqueTree):
        if policy.input_dim != env.obs_dim:
            raise DimensionError(
                f"policy reads {policy.input_dim} inputs, {env.env_id} emits {env.obs_dim}"
            )
        if policy.task != TaskKind.REGRESSION:
            raise ValueError("only regression trees can drive a continuous environment")
        counters = {"pruned": 0}

        def act(obs):
            pred = infer(policy, obs)
            if pred.pruned:
                counters["pruned"] += 1
            return pred.value

        return act, lambda: None, counters

    if isinstance(policy, PidPolicySpec):
        if policy.state_dim != env.obs_dim:
            raise DimensionError(
                f"policy reads {policy.state_dim} inputs, {env.env_id} emits {env.obs_dim}"
            )
        holder = {"state": policy.new_state()}

        def act(obs):
            action, holder["state"] = pid_act(policy, obs, holder["state"])
            return action

        def reset():
            holder["state"] = policy.new_state()

        return act, reset, {}

    raise TypeError(f"unsupported policy type: {type(policy).__name__}")


def rollout(policy, env_id: str, episodes: int, seed: int) -> RolloutResult:
    """Run seeded episodes of ``policy`` and aggregate rewards.

    Actions are clipped to the environment bounds (clip events are counted).
    Network policies also produce an activation trace.
    """
    env = get_env(env_id)
    act, reset_hook, extras = _policy_adapter(policy, env)

    rewards: list[float] = []
    total_steps = 0
    clipped = 0
    for ep in range(episodes):
        rng = episode_rng(seed, ep)
        state = env.reset(rng)
        reset_hook()
        ep_reward = 0.0
        for _ in range(env.max_steps):
            obs = env.observe(state)
            action = np.atleast_1d(np.asarray(act(obs), dtype=np.float64))
            if not np.isfinite(action).all():
                raise ValueError(f"policy produced a non-finite action at state {state!r}")
            if (action < env.action_low).any() or (action > env.action_high).any():
                clipped += 1
            state, reward, done = env.step(state, action)
            ep_reward += reward
            total_steps += 1
            if done:
                break
        rewards.append(ep_reward)

    trace = None
    if isinstance(policy, NetworkSpec):
        trace = ActivationTrace(
            pattern_counts=dict(extras["patterns"]),
            network_hash=netio.network_hash(policy),
            total_visits=sum(extras["patterns"].values()),
        )
    return RolloutResult(
        env_id=env.env_id,
        seed=seed,
        rewards=rewards,
        steps=total_steps,
        trace=trace,
        pruned_fallbacks=extras.get("pruned", 0),
        clipped_actions=clipped,
    )


def collect_trace(net: NetworkSpec, env_id: str, episodes: int, seed: int) -> ActivationTrace:
    """Roll the network out and return the multiset of activation patterns seen."""
    result = rollout(net, env_id, episodes, seed)
    assert result.trace is not None
    return result.trace


def save_rollout(result: RolloutResult, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=1)
        fh.write("\n")
