"""Finite MDPs, trajectory sampling and exact/truncated occupancy measures.

Every occupancy quantity carries the (1 - gamma) normalization, so the exact
occupancy has mass 1 and the H-step truncation has mass 1 - gamma**H.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

EXACT = "exact"
TRUNCATED = "truncated"
MC_ESTIMATE = "mc_estimate"


@dataclass(frozen=True)
class TabularMdp:
    transitions: np.ndarray  # (S, A, S)
    init_dist: np.ndarray  # (S,)
    discount: float
    absorbing: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        P = np.asarray(self.transitions, dtype=float)
        mu0 = np.asarray(self.init_dist, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ConfigError(f"transitions must have shape (S, A, S), got {P.shape}")
        if mu0.shape != (P.shape[0],):
            raise ConfigError("init_dist length must equal n_states")
        if not 0.0 < self.discount < 1.0:
            raise ConfigError(f"discount must lie in (0, 1), got {self.discount}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise ConfigError("every transition row must be a probability vector")
        if np.any(mu0 < 0) or abs(mu0.sum() - 1.0) > 1e-12:
            raise ConfigError("init_dist must be a probability vector")
        for s in self.absorbing:
            if not np.all(P[s, :, s] == 1.0):
                raise ConfigError(f"absorbing state {s} does not self-loop under every action")
        P.setflags(write=False)
        mu0.setflags(write=False)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "init_dist", mu0)
        object.__setattr__(self, "absorbing", frozenset(int(s) for s in self.absorbing))

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def size(self) -> int:
        return self.n_states * self.n_actions


@dataclass(frozen=True)
class OccupancyMeasure:
    """Flat state-action vector (row-major over (s, a)) with provenance."""

    values: np.ndarray
    kind: str
    discount: float
    horizon: int | None = None
    batch: int | None = None

    def table(self, n_actions: int) -> np.ndarray:
        return self.values.reshape(-1, n_actions)


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    seed_provenance: tuple = ()

    @property
    def horizon(self) -> int:
        return len(self.states)

    @property
    def steps(self) -> list[tuple[int, int]]:
        return [(int(s), int(a)) for s, a in zip(self.states, self.actions)]


def check_dims(mdp: TabularMdp, policy) -> None:
    if policy.theta.shape != (mdp.n_states, mdp.n_actions):
        raise ConfigError(
            f"policy shape {policy.theta.shape} does not match MDP "
            f"({mdp.n_states}, {mdp.n_actions})"
        )


def policy_transition_matrix(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    return np.einsum("sa,sat->st", pi, mdp.transitions)


class _RowSampler:
    """Inverse-CDF sampling from many categorical rows with one searchsorted call.

    Row i's CDF is shifted by i, so the concatenation is sorted and a draw u for
    row i is located by searching i + u.
    """

    def __init__(self, probs: np.ndarray):
        probs = probs.reshape(-1, probs.shape[-1])
        self.width = probs.shape[1]
        offsets = np.arange(probs.shape[0], dtype=float)[:, None]
        self.flat = (np.cumsum(probs, axis=1) + offsets).ravel()

    def __call__(self, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self.flat, rows + u, side="right") - rows * self.width
        return np.minimum(pos, self.width - 1)


def rollout_from_uniforms(mdp: TabularMdp, pi: np.ndarray, uniforms: np.ndarray):
    """Roll out a batch of trajectories driven by pre-drawn uniforms.

    ``uniforms`` has shape (B, 2H + 1): column 0 draws the initial state, then
    columns (2t + 1, 2t + 2) draw the action and next state at step t. Each row
    depends only on its own uniforms, so the batch can be assembled in any order.
    """
    uniforms = np.atleast_2d(uniforms)
    batch, width = uniforms.shape
    horizon = (width - 1) // 2
    A = mdp.n_actions
    init = _RowSampler(mdp.init_dist[None, :])
    act = _RowSampler(pi)
    nxt = _RowSampler(mdp.transitions)
    states = np.empty((batch, horizon), dtype=np.int64)
    actions = np.empty((batch, horizon), dtype=np.int64)
    s = init(np.zeros(batch, dtype=np.int64), uniforms[:, 0])
    for t in range(horizon):
        a = act(s, uniforms[:, 2 * t + 1])
        states[:, t] = s
        actions[:, t] = a
        s = nxt(s * A + a, uniforms[:, 2 * t + 2])
    return states, actions


def sample_trajectory(mdp: TabularMdp, policy, horizon: int, rng: np.random.Generator) -> Trajectory:
    if horizon < 1:
        raise ConfigError("horizon must be >= 1")
    check_dims(mdp, policy)
    u = rng.random((1, 2 * horizon + 1))
    states, actions = rollout_from_uniforms(mdp, policy.probs(), u)
    return Trajectory(states[0], actions[0])


def exact_state_occupancy(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    """Solve d = (1 - gamma) mu0 + gamma P_pi^T d by a dense LU solve."""
    gamma = mdp.discount
    P_pi = policy_transition_matrix(mdp, pi)
    A = np.eye(mdp.n_states) - gamma * P_pi.T
    d = np.linalg.solve(A, (1.0 - gamma) * mdp.init_dist)
    assert np.all(np.isfinite(d)), "occupancy solve did not produce a finite result"
    return d


def exact_occupancy(mdp: TabularMdp, policy) -> OccupancyMeasure:
    check_dims(mdp, policy)
    pi = policy.probs()
    d = exact_state_occupancy(mdp, pi)
    lam = np.clip(d[:, None] * pi, 0.0, None).ravel()
    return OccupancyMeasure(lam, EXACT, mdp.discount)


def truncated_occupancy(mdp: TabularMdp, policy, horizon: int) -> OccupancyMeasure:
    if horizon < 1:
        raise ConfigError("horizon must be >= 1")
    check_dims(mdp, policy)
    gamma = mdp.discount
    pi = policy.probs()
    P_pi = policy_transition_matrix(mdp, pi)
    rho = mdp.init_dist.copy()
    d = np.zeros(mdp.n_states)
    weight = 1.0 - gamma
    for _ in range(horizon):
        d += weight * rho
        rho = rho @ P_pi
        weight *= gamma
    return OccupancyMeasure((d[:, None] * pi).ravel(), TRUNCATED, gamma, horizon=horizon)


def occupancy_diameter(mdp: TabularMdp) -> float:
    # Any two nonnegative vectors of mass 1 are at most sqrt(2) apart; a single
    # state-action pair makes the polytope a point.
    return 0.0 if mdp.size == 1 else float(np.sqrt(2.0))


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float,
               concentration: float = 1.0) -> TabularMdp:
    P = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    mu0 = rng.dirichlet(np.ones(n_states))
    mu0 /= mu0.sum()
    return TabularMdp(P, mu0, gamma)
