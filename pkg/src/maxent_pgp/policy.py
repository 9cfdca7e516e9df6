"""Direct tabular softmax policies over a box-constrained parameter matrix."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass(frozen=True)
class SoftmaxPolicy:
    theta: np.ndarray
    box_radius: float

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.ndim != 2:
            raise ConfigError("theta must be a (n_states, n_actions) matrix")
        if not self.box_radius > 0:
            raise ConfigError("box_radius must be positive")
        if np.any(np.abs(theta) > self.box_radius * (1 + 1e-12)):
            raise ConfigError("theta has entries outside [-R, R]")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def n_states(self) -> int:
        return self.theta.shape[0]

    @property
    def n_actions(self) -> int:
        return self.theta.shape[1]

    def log_probs(self) -> np.ndarray:
        return _log_softmax(self.theta)

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs())

    def with_theta(self, theta: np.ndarray) -> "SoftmaxPolicy":
        return SoftmaxPolicy(theta, self.box_radius)

    def to_json(self) -> str:
        return json.dumps({
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "R": self.box_radius,
            "theta": [float(x) for x in self.theta.ravel()],
        })

    @classmethod
    def from_json(cls, text: str) -> "SoftmaxPolicy":
        rec = json.loads(text)
        theta = np.array(rec["theta"], dtype=float).reshape(rec["n_states"], rec["n_actions"])
        return cls(theta, float(rec["R"]))


def uniform_policy(n_states: int, n_actions: int, box_radius: float = 10.0) -> SoftmaxPolicy:
    return SoftmaxPolicy(np.zeros((n_states, n_actions)), box_radius)


def action_probs(policy: SoftmaxPolicy, state: int) -> np.ndarray:
    return np.exp(_log_softmax(policy.theta[state]))


def score(policy: SoftmaxPolicy, state: int, action: int) -> np.ndarray:
    """Gradient of log pi(action | state) with respect to theta."""
    g = np.zeros_like(policy.theta)
    g[state] = -action_probs(policy, state)
    g[state, action] += 1.0
    return g


def project_box(theta: np.ndarray, R: float) -> np.ndarray:
    return np.clip(theta, -R, R)


def embed_policy(pi_star: np.ndarray, epsilon: float, prescale: bool = False) -> SoftmaxPolicy:
    """Represent the epsilon-mixture of ``pi_star`` with uniform as a softmax policy.

    The mixture is within 2 * eps * (1 - 1/|A|) of ``pi_star`` in l1 per state.
    With ``prescale`` the mixing weight is shrunk so that gap is at most ``epsilon``.
    ``epsilon = 0`` is accepted for strictly positive tables (exact log embedding).
    """
    pi_star = np.asarray(pi_star, dtype=float)
    n_actions = pi_star.shape[1]
    if epsilon == 0.0:
        if np.any(pi_star <= 0):
            raise ConfigError("epsilon = 0 needs a strictly positive policy table")
    elif not 0.0 < epsilon < 1.0:
        raise ConfigError(f"epsilon must lie in (0, 1), got {epsilon}")
    if np.any(pi_star < 0) or np.max(np.abs(pi_star.sum(axis=1) - 1.0)) > 1e-10:
        raise ConfigError("pi_star rows must be probability vectors")
    mix = epsilon
    if prescale and n_actions > 1:
        mix = epsilon / (2.0 * (1.0 - 1.0 / n_actions))
        mix = min(mix, epsilon)
    pi_eps = (1.0 - mix) * pi_star + mix / n_actions
    theta = np.log(pi_eps)
    R = float(np.max(np.abs(theta)))
    return SoftmaxPolicy(theta, R if R > 0 else 1.0)


def theta_diameter(R: float, n_states: int, n_actions: int) -> float:
    return float(2.0 * R * np.sqrt(n_states * n_actions))


def greedy_actions(policy: SoftmaxPolicy) -> np.ndarray:
    # np.argmax breaks ties toward the lowest index.
    return np.argmax(policy.theta, axis=1)
