"""Penalized policy-gradient method for constrained maximum-entropy exploration."""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DomainError
from .estimation import (SmoothnessConstants, TrajectoryStreams, estimate_from_batch, sample_batch,
                         split_sizes)
from .mdp import TabularMdp, exact_occupancy
from .objectives import DEFAULT_FLOOR, constraint_grad, constraint_value, entropy, entropy_grad
from .policy import SoftmaxPolicy, project_box

QUADRATIC = "quadratic"
EXACT_PENALTY = "exact"

LOG_COLUMNS = ("iter", "entropy", "constraint", "violation", "penalty", "grad_norm", "wall_ms")


@dataclass(frozen=True)
class PenaltyConfig:
    beta: float
    kind: str = QUADRATIC

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise ConfigError(f"beta must be finite and >= 0, got {self.beta}")
        if self.kind not in (QUADRATIC, EXACT_PENALTY):
            raise ConfigError(f"penalty kind must be '{QUADRATIC}' or '{EXACT_PENALTY}'")


def penalty_fn(x: float, kind: str) -> float:
    pos = max(x, 0.0)
    return pos * pos if kind == QUADRATIC else pos


def penalty_slope(x: float, kind: str) -> float:
    """Derivative of the penalty; the exact penalty takes 0 at the kink."""
    if x <= 0:
        return 0.0
    return 2.0 * x if kind == QUADRATIC else 1.0


def penalty_value(entropy_val: float, constraint_val: float, cfg: PenaltyConfig) -> float:
    return -entropy_val + cfg.beta * penalty_fn(constraint_val, cfg.kind)


def penalty_pseudo_reward(lambda_hat, spec, cfg: PenaltyConfig, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """lambda-gradient of -H + beta * L(R), used as the reward in the score estimator."""
    g = entropy_grad(lambda_hat, floor)
    if cfg.beta == 0 or spec is None:
        return g
    slope = penalty_slope(constraint_value(spec, lambda_hat), cfg.kind)
    if slope == 0.0:
        return g
    return g + cfg.beta * slope * constraint_grad(spec, lambda_hat)


def exact_penalty_objective(mdp: TabularMdp, policy: SoftmaxPolicy, spec, cfg: PenaltyConfig,
                            floor: float = DEFAULT_FLOOR) -> float:
    lam = exact_occupancy(mdp, policy)
    c = constraint_value(spec, lam) if spec is not None else 0.0
    return penalty_value(entropy(lam, floor), c, cfg)


@dataclass
class PgpRunConfig:
    iterations: int
    step_size: float
    batch: int
    horizon: int
    penalty: PenaltyConfig
    seed: int = 0
    eval_every: int = 1
    floor: float = DEFAULT_FLOOR
    split_ratio: float = 0.5
    record_wall_time: bool = False

    def __post_init__(self):
        if not self.step_size > 0:
            raise ConfigError("step_size must be positive")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        split_sizes(self.batch, self.split_ratio)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunRecord:
    columns: tuple = LOG_COLUMNS
    rows: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def append(self, **values) -> None:
        if self.rows and values["iter"] <= self.rows[-1]["iter"]:
            raise ValueError("log rows must have strictly increasing iteration")
        self.rows.append(values)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def final(self) -> dict:
        return self.rows[-1]

    def to_csv(self) -> str:
        lines = [",".join(self.columns)]
        for r in self.rows:
            lines.append(",".join(_fmt(r[c]) for c in self.columns))
        return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


class DivergenceError(RuntimeError):
    def __init__(self, message: str, record: RunRecord):
        super().__init__(message)
        self.record = record


def evaluate_row(mdp, policy, spec, penalty: PenaltyConfig, floor: float) -> dict:
    lam = exact_occupancy(mdp, policy)
    ent = entropy(lam, floor)
    c = constraint_value(spec, lam) if spec is not None else 0.0
    return {
        "entropy": ent,
        "constraint": c,
        "violation": max(c, 0.0),
        "penalty": penalty_value(ent, c, penalty),
    }


def pgp_run(mdp: TabularMdp, policy0: SoftmaxPolicy, spec, cfg: PgpRunConfig,
            constants: SmoothnessConstants | None = None, stream: int = 0):
    """Projected stochastic gradient descent on the penalized objective.

    Returns the last iterate and a RunRecord evaluated with exact occupancies.
    """
    streams = TrajectoryStreams(cfg.seed, stream)
    record = RunRecord()

    def pseudo_reward(lam_hat):
        return penalty_pseudo_reward(lam_hat, spec, cfg.penalty, cfg.floor)

    return _descent_loop(mdp, policy0, spec, cfg, streams, record, pseudo_reward, constants)


def _descent_loop(mdp, policy0, spec, cfg: PgpRunConfig, streams, record, pseudo_reward, constants):
    R = policy0.box_radius
    theta = policy0.theta.copy()
    start = time.perf_counter()
    grad_norm = 0.0

    def log(k, pol):
        row = evaluate_row(mdp, pol, spec, cfg.penalty, cfg.floor)
        wall = (time.perf_counter() - start) * 1e3 if cfg.record_wall_time else 0.0
        record.append(iter=k, **row, grad_norm=grad_norm, wall_ms=wall)

    policy = policy0
    log(0, policy)
    for k in range(cfg.iterations):
        batch = sample_batch(mdp, policy, cfg.horizon, cfg.batch, streams, k)
        est = estimate_from_batch(policy, mdp, pseudo_reward, batch, constants, cfg.split_ratio)
        if not np.all(np.isfinite(est.grad)):
            record.diagnostics.update(iteration=k, reason="non-finite gradient estimate")
            raise DivergenceError(f"non-finite gradient at iteration {k}", record)
        grad_norm = float(np.linalg.norm(est.grad))
        theta = project_box(theta - cfg.step_size * est.grad, R)
        policy = policy.with_theta(theta)
        if (k + 1) % cfg.eval_every == 0 or k + 1 == cfg.iterations:
            log(k + 1, policy)
    return policy, record


def dual_beta(epsilon: float, nu_star: float) -> float:
    return (nu_star + 1.0) * (nu_star + math.sqrt(nu_star**2 + 2.0)) / epsilon


@dataclass
class ParamRecommendation:
    beta: float
    step_size: float
    horizon: int
    batch: int
    iterations: int
    I1: int
    I2: int
    C_beta: float

    def run_config(self, seed: int = 0, eval_every: int = 1) -> PgpRunConfig:
        return PgpRunConfig(self.iterations, self.step_size, self.batch, self.horizon,
                            PenaltyConfig(self.beta), seed=seed, eval_every=eval_every)


def recommend_params(epsilon: float, nu_star: float, constants: SmoothnessConstants,
                     mu_lambda: float = 1.0, delta0: float | None = None,
                     D_U: float | None = None) -> ParamRecommendation:
    """Parameter schedule guaranteeing an epsilon-accurate last iterate.

    ``mu_lambda`` is the Lipschitz constant of the local occupancy-to-parameter
    inverse and ``delta0`` the initial penalty gap; both must be supplied by the
    caller for a sharp iteration count (defaults are coarse placeholders).
    """
    if not 0 < epsilon < 1:
        raise ConfigError("epsilon must lie in (0, 1)")
    if nu_star < 0:
        raise ConfigError("nu_star must be >= 0")
    beta = dual_beta(epsilon, nu_star)
    c = constants.with_beta(beta)
    step = 1.0 / c.L_P_theta
    C = c.D_P_H(0)  # D_P_H(H) / (1 + H) is largest at H = 0
    g = c.gamma
    H = 1
    while math.log(C) + math.log1p(H) + H * math.log(g) > math.log(epsilon / 2):
        H += 1
    I1 = math.ceil(c.sigma2_P_H(H) / epsilon**2)
    I2 = math.ceil(4 * c.D_P_ghat**2 / epsilon**2)
    batch = 2 * max(I1, I2)
    D_U = c.D_lambda if D_U is None else D_U
    if delta0 is None:
        delta0 = math.log(c.n_states * c.n_actions) + beta * c.R_UB**2
    delta0 = max(delta0, epsilon)
    N = math.ceil(3 * D_U**2 * mu_lambda**2 * c.L_P_theta / epsilon * math.log(3 * delta0 / epsilon))
    return ParamRecommendation(beta, step, H, batch, N, I1, I2, C)


class GuaranteeTranslation(NamedTuple):
    violation: float
    gap_slack: float  # objective gap F1 - F* is at least -gap_slack


def translate_guarantee(eps_pen: float, beta: float, nu_star: float, kind: str = QUADRATIC) -> GuaranteeTranslation:
    """Turn a penalty optimality gap into constraint-violation and objective bounds.

    ``eps_pen`` bounds F1 - F* + (beta / 2) L(F2). For the quadratic penalty that gap
    is at least -nu*^2 / (2 beta), so slightly negative values are accepted.
    """
    if beta <= 0 or nu_star < 0:
        raise DomainError("need beta > 0 and nu_star >= 0")
    if kind == QUADRATIC:
        disc = nu_star**2 + 2 * beta * eps_pen
        if disc < -1e-12 * max(1.0, nu_star**2):
            raise DomainError(f"gap {eps_pen} is below the attainable minimum -nu*^2/(2 beta)")
        v = (nu_star + math.sqrt(max(disc, 0.0))) / beta
    elif kind == EXACT_PENALTY:
        if beta <= 2 * nu_star:
            raise DomainError("exact penalty translation requires beta > 2 nu_star")
        if eps_pen < 0:
            raise DomainError("the exact penalty gap is nonnegative once beta >= 2 nu*")
        v = eps_pen / (beta / 2 - nu_star)
    else:
        raise ConfigError(f"unknown penalty kind {kind}")
    return GuaranteeTranslation(v, nu_star * v)
