"""Discretized PID controller policies with learned, state-dependent gains.

A gain source (an oblique tree or a network) maps the current state to a flat
theta vector laid out as (theta_P | theta_I | theta_D) blocks per action
dimension, each block state-dim wide. The policy combines the blocks with the
PID feature vectors computed from the stable point and a bounded history of
previous states.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import netio
from .netio import DimensionError, NetworkSpec, TaskKind
from .tree import ObliqueTree, infer, tree_from_dict, tree_to_dict


@dataclass
class PidState:
    """Ring buffer of the last ``maxlen`` observed states, oldest first."""

    history: deque = field(default_factory=deque)

    @classmethod
    def empty(cls, maxlen: int) -> "PidState":
        return cls(history=deque(maxlen=maxlen))

    def append(self, s: np.ndarray) -> None:
        self.history.append(np.array(s, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.history)


def pid_features(eps, s, state: PidState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Proportional, integral, and derivative feature vectors.

    P = eps - s; I sums (eps - s') over the history; D is the most recent
    historical state minus s. With an empty history I is zero and D falls back
    to s - s = 0, so the features are total and continuous from the first step.
    """
    eps = np.asarray(eps, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if eps.shape != s.shape:
        raise DimensionError(f"state shape {s.shape} != stable point shape {eps.shape}")
    p = eps - s
    i = np.zeros_like(s)
    for past in state.history:
        if past.shape != s.shape:
            raise DimensionError("history entry shape does not match the state")
        i += eps - past
    last = state.history[-1] if len(state.history) else s
    d = last - s
    return p, i, d


@dataclass(frozen=True)
class PidPolicySpec:
    """Stable point, history length, and the gain-producing model.

    The gain source must output ``3 * action_dim * state_dim`` values,
    interpreted per action dimension as consecutive (theta_P, theta_I,
    theta_D) blocks of one coefficient per state dimension.
    """

    epsilon: np.ndarray
    theta_source: ObliqueTree | NetworkSpec
    history_len: int = 5
    action_dim: int = 1

    def __post_init__(self):
        eps = np.asarray(self.epsilon, dtype=np.float64)
        object.__setattr__(self, "epsilon", eps)
        if self.history_len < 1:
            raise ValueError("history_len must be >= 1")
        s_dim = eps.shape[0]
        src = self.theta_source
        if isinstance(src, ObliqueTree):
            if src.task != TaskKind.REGRESSION:
                raise ValueError("gain tree must be a regression tree")
            in_dim, n_out = src.input_dim, src.n_outputs
        else:
            in_dim, n_out = src.input_dim, src.n_outputs
        if in_dim != s_dim:
            raise DimensionError(f"gain source reads {in_dim} inputs, state has {s_dim}")
        if n_out != 3 * self.action_dim * s_dim:
            raise DimensionError(
                f"gain source outputs {n_out} values, need "
                f"3 * {self.action_dim} * {s_dim} = {3 * self.action_dim * s_dim}"
            )

    @property
    def state_dim(self) -> int:
        return self.epsilon.shape[0]

    def theta_tree(self) -> ObliqueTree:
        if not isinstance(self.theta_source, ObliqueTree):
            raise TypeError("this policy's gain source is a network, not a tree")
        return self.theta_source

    def new_state(self) -> PidState:
        return PidState.empty(self.history_len)


def _theta(spec: PidPolicySpec, s: np.ndarray) -> np.ndarray:
    if isinstance(spec.theta_source, ObliqueTree):
        return infer(spec.theta_source, s).value
    return netio.forward(spec.theta_source, s)


def pid_act(spec: PidPolicySpec, s, state: PidState) -> tuple[np.ndarray, PidState]:
    """One control step: evaluate gains at ``s``, combine with PID features,
    then push ``s`` onto the history (evicting the oldest beyond the limit)."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (spec.state_dim,):
        raise DimensionError(f"expected state of shape ({spec.state_dim},), got {s.shape}")
    p, i, d = pid_features(spec.epsilon, s, state)
    theta = _theta(spec, s).reshape(spec.action_dim, 3, spec.state_dim)
    action = theta[:, 0] @ p + theta[:, 1] @ i + theta[:, 2] @ d
    state.append(s)
    return action, state


# ---------------------------------------------------------------------------
# Policy files


def policy_to_dict(spec: PidPolicySpec) -> dict:
    if not isinstance(spec.theta_source, ObliqueTree):
        raise TypeError("only tree-backed PID policies can be serialized")
    return {
        "kind": "pid",
        "epsilon": spec.epsilon.tolist(),
        "history_len": spec.history_len,
        "theta_tree": tree_to_dict(spec.theta_source),
    }


def policy_from_dict(obj: dict) -> PidPolicySpec:
    if obj.get("kind") != "pid":
        raise ValueError(f"not a PID policy file (kind={obj.get('kind')!r})")
    tree = tree_from_dict(obj["theta_tree"])
    eps = np.array(obj["epsilon"], dtype=np.float64)
    s_dim = eps.shape[0]
    if tree.n_outputs % (3 * s_dim) != 0:
        raise DimensionError(
            f"gain tree outputs {tree.n_outputs} values; not a multiple of 3 * {s_dim}"
        )
    return PidPolicySpec(
        epsilon=eps,
        theta_source=tree,
        history_len=int(obj.get("history_len", 5)),
        action_dim=tree.n_outputs // (3 * s_dim),
    )


def save_policy(spec: PidPolicySpec, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(policy_to_dict(spec), fh, indent=1)
        fh.write("\n")


def load_policy(path: str | Path) -> PidPolicySpec:
    with open(path, "r", encoding="utf-8") as fh:
        return policy_from_dict(json.load(fh))
