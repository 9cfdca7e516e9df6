"""Comparison methods: projected primal-dual policy gradient and unconstrained entropy ascent."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import ConfigError
from .estimation import TrajectoryStreams, estimate_from_batch, sample_batch, split_sizes
from .mdp import TabularMdp
from .objectives import DEFAULT_FLOOR, constraint_grad, constraint_value, entropy_grad
from .pgp import (LOG_COLUMNS, QUADRATIC, DivergenceError, PenaltyConfig, PgpRunConfig, RunRecord,
                  evaluate_row, pgp_run)
from .policy import SoftmaxPolicy, project_box

PDPG_COLUMNS = LOG_COLUMNS + ("nu",)


@dataclass(frozen=True)
class PdpgConfig:
    primal_lr: float
    dual_lr: float
    iterations: int
    batch: int
    horizon: int
    momentum: float = 1.0  # weight of the newest constraint estimate; 1 disables averaging
    seed: int = 0
    eval_every: int = 1
    floor: float = DEFAULT_FLOOR
    split_ratio: float = 0.5
    record_wall_time: bool = False

    def __post_init__(self):
        if not (self.primal_lr > 0 and self.dual_lr > 0):
            raise ConfigError("primal_lr and dual_lr must be positive")
        if not 0 < self.momentum <= 1:
            raise ConfigError("momentum must lie in (0, 1]")
        if self.horizon < 1 or self.iterations < 0 or self.eval_every < 1:
            raise ConfigError("horizon, iterations and eval_every must be positive")
        split_sizes(self.batch, self.split_ratio)

    def to_dict(self) -> dict:
        return asdict(self)


def pdpg_run(mdp: TabularMdp, policy0: SoftmaxPolicy, spec, cfg: PdpgConfig, stream: int = 0):
    """Ascent on H - nu * R in theta, projected ascent on nu with the sampled constraint value.

    Returns (last policy, dual trace nu_0..nu_N, RunRecord). The ``penalty`` column
    holds the Lagrangian -H + nu * R at the logged iterate.
    """
    streams = TrajectoryStreams(cfg.seed, stream)
    record = RunRecord(columns=PDPG_COLUMNS)
    R = policy0.box_radius
    theta = policy0.theta.copy()
    nu, avg_constraint = 0.0, 0.0
    trace = [nu]
    grad_norm = 0.0
    start = time.perf_counter()
    no_penalty = PenaltyConfig(0.0, QUADRATIC)
    sampled = {}

    def pseudo_reward(lam_hat):
        # lambda-gradient of -(H - nu R); the sampled constraint value also feeds the dual step
        sampled["R"] = constraint_value(spec, lam_hat)
        g = entropy_grad(lam_hat, cfg.floor)
        return g + nu * constraint_grad(spec, lam_hat) if nu > 0 else g

    def log(k, pol):
        row = evaluate_row(mdp, pol, spec, no_penalty, cfg.floor)
        row["penalty"] = -row["entropy"] + nu * row["constraint"]
        wall = (time.perf_counter() - start) * 1e3 if cfg.record_wall_time else 0.0
        record.append(iter=k, **row, grad_norm=grad_norm, wall_ms=wall, nu=nu)

    policy = policy0
    log(0, policy)
    for k in range(cfg.iterations):
        batch = sample_batch(mdp, policy, cfg.horizon, cfg.batch, streams, k)
        est = estimate_from_batch(policy, mdp, pseudo_reward, batch, None, cfg.split_ratio)
        if not np.all(np.isfinite(est.grad)):
            record.diagnostics.update(iteration=k, reason="non-finite gradient estimate")
            raise DivergenceError(f"non-finite gradient at iteration {k}", record)
        grad_norm = float(np.linalg.norm(est.grad))
        theta = project_box(theta - cfg.primal_lr * est.grad, R)
        policy = policy.with_theta(theta)
        avg_constraint = cfg.momentum * sampled["R"] + (1 - cfg.momentum) * avg_constraint
        nu = max(nu + cfg.dual_lr * avg_constraint, 0.0)
        trace.append(nu)
        if (k + 1) % cfg.eval_every == 0 or k + 1 == cfg.iterations:
            log(k + 1, policy)
    return policy, np.array(trace), record


def unconstrained_me_run(mdp: TabularMdp, policy0: SoftmaxPolicy, cfg: PgpRunConfig, stream: int = 0,
                         monitor=None):
    """Entropy ascent with no constraint: the penalized method with beta = 0.

    ``monitor`` is a constraint that is only logged; with beta = 0 it never enters the update.
    """
    cfg = replace(cfg, penalty=PenaltyConfig(0.0, cfg.penalty.kind))
    return pgp_run(mdp, policy0, monitor, cfg, stream=stream)


def sign_changes(values) -> int:
    """Number of strict sign flips in a sequence, skipping exact zeros."""
    s = np.sign(np.asarray(values, dtype=float))
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))
