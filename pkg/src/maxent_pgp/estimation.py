"""Monte-Carlo occupancy estimates, the split-batch REINFORCE estimator and its bound constants."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ConfigError
from .mdp import MC_ESTIMATE, OccupancyMeasure, TabularMdp, Trajectory, check_dims, rollout_from_uniforms


class TrajectoryStreams:
    """Counter-based random substreams, one per (iteration, trajectory index).

    A trajectory's uniforms depend only on (seed, stream, iteration, index), so
    batches can be generated in any order or in parallel with identical results.
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0:
            raise ConfigError("seed must be nonnegative")
        self.seed = int(seed)
        self.stream = int(stream)

    def generator(self, iteration: int, index: int) -> np.random.Generator:
        key = self.seed + (self.stream << 64)
        return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, index, iteration]))

    def uniforms(self, iteration: int, indices, horizon: int) -> np.ndarray:
        rows = [self.generator(iteration, int(i)).random(2 * horizon + 1) for i in indices]
        return np.stack(rows)


@dataclass
class TrajectoryBatch:
    states: np.ndarray  # (B, H)
    actions: np.ndarray  # (B, H)
    iteration: int = 0

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1]

    def subset(self, rows) -> "TrajectoryBatch":
        return TrajectoryBatch(self.states[rows], self.actions[rows], self.iteration)

    def trajectory(self, b: int) -> Trajectory:
        return Trajectory(self.states[b], self.actions[b], (self.iteration, b))

    @classmethod
    def from_trajectories(cls, trajs) -> "TrajectoryBatch":
        trajs = list(trajs)
        if not trajs:
            raise ConfigError("empty trajectory batch")
        if len({t.horizon for t in trajs}) != 1:
            raise ConfigError("trajectories in a batch must share one horizon")
        return cls(np.stack([t.states for t in trajs]), np.stack([t.actions for t in trajs]))


def sample_batch(mdp: TabularMdp, policy, horizon: int, batch: int, streams: TrajectoryStreams,
                 iteration: int, order=None) -> TrajectoryBatch:
    """Sample ``batch`` trajectories; ``order`` permutes generation order only."""
    check_dims(mdp, policy)
    if horizon < 1:
        raise ConfigError("horizon must be >= 1")
    indices = np.arange(batch) if order is None else np.asarray(order)
    u = np.empty((batch, 2 * horizon + 1))
    u[indices] = streams.uniforms(iteration, indices, horizon)
    states, actions = rollout_from_uniforms(mdp, policy.probs(), u)
    return TrajectoryBatch(states, actions, iteration)


def _as_batch(trajectories) -> TrajectoryBatch:
    if isinstance(trajectories, TrajectoryBatch):
        if trajectories.size == 0:
            raise ConfigError("empty trajectory batch")
        return trajectories
    if isinstance(trajectories, Trajectory):
        return TrajectoryBatch.from_trajectories([trajectories])
    return TrajectoryBatch.from_trajectories(trajectories)


def mc_occupancy(trajectories, gamma: float, n_states: int, n_actions: int) -> OccupancyMeasure:
    batch = _as_batch(trajectories)
    B, H = batch.states.shape
    weights = (1.0 - gamma) * gamma ** np.arange(H) / B
    flat = (batch.states * n_actions + batch.actions).ravel()
    values = np.bincount(flat, weights=np.tile(weights, B), minlength=n_states * n_actions)
    return OccupancyMeasure(values, MC_ESTIMATE, gamma, horizon=H, batch=B)


def reinforce_terms(pi: np.ndarray, batch: TrajectoryBatch, pseudo_reward: np.ndarray,
                    gamma: float) -> np.ndarray:
    """Per-trajectory REINFORCE gradients, shape (B, S, A).

    Each term is (1 - gamma) * sum_t G_t * grad log pi(a_t | s_t) with reward-to-go
    G_t = sum_{k >= t} gamma^k r(s_k, a_k); the (1 - gamma) factor matches the
    normalized occupancy convention so the expectation is grad <lambda_H, r>.
    """
    S, A = pi.shape
    B, H = batch.states.shape
    r = np.asarray(pseudo_reward, dtype=float).reshape(S, A)
    disc = (1.0 - gamma) * gamma ** np.arange(H)
    rewards = r[batch.states, batch.actions] * disc
    to_go = np.cumsum(rewards[:, ::-1], axis=1)[:, ::-1]
    out = np.zeros((B, S, A))
    rows = np.repeat(np.arange(B), H)
    s_flat = batch.states.ravel()
    np.add.at(out, (rows, s_flat, batch.actions.ravel()), to_go.ravel())
    state_w = np.zeros((B, S))
    np.add.at(state_w, (rows, s_flat), to_go.ravel())
    out -= state_w[:, :, None] * pi[None]
    return out


def reinforce_grad(policy, trajectory, pseudo_reward: np.ndarray, gamma: float) -> np.ndarray:
    batch = _as_batch(trajectory)
    terms = reinforce_terms(policy.probs(), batch, pseudo_reward, gamma)
    return terms[0] if batch.size == 1 else terms


def ordered_mean(terms: np.ndarray) -> np.ndarray:
    """Mean over the leading axis with a fixed left-to-right summation order."""
    acc = np.zeros(terms.shape[1:])
    for t in terms:
        acc += t
    return acc / terms.shape[0]


@dataclass
class SmoothnessConstants:
    ell_lambda: float
    L_lambda: float
    L_lambda_inf: float
    gamma: float
    n_states: int
    n_actions: int
    D_theta: float = 0.0
    D_lambda: float = float(np.sqrt(2.0))
    beta: float = 0.0
    R_UB: float = 0.0
    ell_psi: float = 1.0
    L_psi: float = 0.0

    def with_beta(self, beta: float) -> "SmoothnessConstants":
        return replace(self, beta=beta)

    # unpenalized forms
    def D_H(self, H: int) -> float:
        g, lp = self.gamma, self.ell_psi
        sq = (6 * lp**2 * self.L_lambda**2 / (1 - g) ** 6
              + 16 * lp**2 * self.ell_lambda**2 * ((H + 1) ** 2 / (1 - g) ** 2 + 1 / (1 - g) ** 4))
        return float(np.sqrt(sq))

    @property
    def D_ghat(self) -> float:
        g = self.gamma
        return 2 * self.ell_psi * self.L_lambda_inf * self.n_states * self.n_actions / (1 - g) ** 2

    def sigma2_H(self, H: int) -> float:
        return H * self.ell_lambda * self.ell_psi / (1 - self.gamma)

    @property
    def ell_F_theta(self) -> float:
        return 2 * self.ell_psi * self.ell_lambda / (1 - self.gamma) ** 2

    @property
    def L_F_theta(self) -> float:
        g, lp = self.gamma, self.ell_psi
        return (4 * self.L_lambda_inf * lp**2 / (1 - g) ** 2
                + 8 * lp**2 * self.ell_lambda / (1 - g) ** 3
                + 2 * self.ell_lambda * (self.L_psi + lp**2) / (1 - g) ** 2)

    @property
    def occupancy_lipschitz(self) -> float:
        return 2 * self.ell_psi / (1 - self.gamma) ** 2

    # penalized forms; the parameter-space diameter D_theta enters as printed
    @property
    def ell_P_lambda(self) -> float:
        return self.ell_lambda + 2 * self.D_theta * self.beta * self.ell_lambda

    @property
    def L_P_lambda(self) -> float:
        return self.L_lambda + 2 * self.beta * (self.R_UB * self.L_lambda + self.ell_lambda**2)

    @property
    def L_P_lambda_inf(self) -> float:
        return self.L_lambda_inf + self.beta * (self.R_UB * self.ell_lambda + 2 * self.ell_lambda**2)

    @property
    def ell_P_theta(self) -> float:
        b, lam, L = self.beta, self.ell_lambda, self.L_lambda
        return 2 * self.ell_psi * (L + 2 * b * lam * (self.D_theta * L + lam)) / (1 - self.gamma) ** 2

    @property
    def L_P_theta(self) -> float:
        g, lp, b, lam = self.gamma, self.ell_psi, self.beta, self.ell_lambda
        ell_pen = lam + 2 * self.D_theta * b * lam
        first = 4 * (1 - g) * (self.L_lambda_inf + b * (self.D_theta * lam + 2 * lam**2)) * lp**2
        return ((first + 8 * lp**2 * ell_pen) / (1 - g) ** 3
                + 2 * (1 - g) * ell_pen * (self.L_psi + lp**2) / (1 - g) ** 3)

    def D_P_H(self, H: int) -> float:
        g, lp, b, lam, L = self.gamma, self.ell_psi, self.beta, self.ell_lambda, self.L_lambda
        ell_pen = lam + 2 * self.D_theta * b * lam
        sq = (6 * lp**2 * (L + 2 * b * lam * (self.D_theta * L + lam)) ** 2 / (1 - g) ** 6
              + 16 * lp**2 * ell_pen**2 * ((H + 1) ** 2 / (1 - g) ** 2 + 1 / (1 - g) ** 4))
        return float(np.sqrt(sq))

    @property
    def D_P_ghat(self) -> float:
        g, b, lam = self.gamma, self.beta, self.ell_lambda
        return (2 * self.ell_psi * (self.L_lambda_inf + b * (self.D_theta * lam + 2 * lam**2))
                / (1 - g) ** 2 * self.n_states * self.n_actions)

    def sigma2_P_H(self, H: int) -> float:
        return H * self.ell_P_lambda * self.ell_psi / (1 - self.gamma)


def bias_variance_bounds(constants: SmoothnessConstants, H: int, I1: int, I2: int) -> tuple[float, float]:
    g = constants.gamma
    if constants.beta > 0:
        bias = constants.D_P_H(H) * g**H + constants.D_P_ghat / np.sqrt(I1)
        var = constants.sigma2_P_H(H) / I2
    else:
        bias = constants.D_H(H) * g**H + constants.D_ghat / np.sqrt(I1)
        var = constants.sigma2_H(H) / I2
    return float(bias), float(var)


@dataclass
class GradientEstimate:
    grad: np.ndarray
    horizon: int
    batch_split: tuple[int, int]
    lambda_hat: OccupancyMeasure
    pseudo_reward: np.ndarray
    bias_bound: float = float("nan")
    variance_bound: float = float("nan")
    empirical_variance: float = float("nan")
    extras: dict = field(default_factory=dict)


def split_sizes(B: int, ratio: float = 0.5) -> tuple[int, int]:
    if B < 2 or B % 2:
        raise ConfigError(f"batch size must be even and >= 2, got {B}")
    n1 = int(round(B * ratio))
    if not 0 < n1 < B:
        raise ConfigError("split ratio leaves one index set empty")
    return n1, B - n1


def estimate_from_batch(policy, mdp: TabularMdp, grad_lambda_fn: Callable, batch: TrajectoryBatch,
                        constants: SmoothnessConstants | None = None, ratio: float = 0.5) -> GradientEstimate:
    """Split-batch estimator on an already sampled batch (first part -> lambda_hat)."""
    n1, n2 = split_sizes(batch.size, ratio)
    lam_hat = mc_occupancy(batch.subset(slice(0, n1)), mdp.discount, mdp.n_states, mdp.n_actions)
    reward = np.asarray(grad_lambda_fn(lam_hat), dtype=float)
    terms = reinforce_terms(policy.probs(), batch.subset(slice(n1, None)), reward, mdp.discount)
    grad = ordered_mean(terms)
    emp_var = float(np.sum((terms - grad) ** 2) / max(n2 - 1, 1) / n2)
    bias = var = float("nan")
    if constants is not None:
        bias, var = bias_variance_bounds(constants, batch.horizon, n1, n2)
    return GradientEstimate(grad, batch.horizon, (n1, n2), lam_hat, reward, bias, var, emp_var)


def grad_estimate(policy, mdp: TabularMdp, grad_lambda_fn: Callable, H: int, B: int,
                  streams: TrajectoryStreams, iteration: int = 0,
                  constants: SmoothnessConstants | None = None, ratio: float = 0.5) -> GradientEstimate:
    split_sizes(B, ratio)
    batch = sample_batch(mdp, policy, H, B, streams, iteration)
    return estimate_from_batch(policy, mdp, grad_lambda_fn, batch, constants, ratio)
