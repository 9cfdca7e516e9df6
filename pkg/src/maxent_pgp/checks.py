"""Finite-difference gradient checks against the analytic gradients used by the estimators."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import exact_occupancy, random_mdp
from .objectives import (KLRefConstraint, LinearConstraint, NormRefConstraint, constraint_grad,
                         constraint_value, entropy, entropy_grad)
from .oracle import exact_policy_gradient, finite_diff_grad
from .pgp import PenaltyConfig, penalty_pseudo_reward, penalty_value
from .policy import SoftmaxPolicy


def relative_error(analytic, numeric) -> float:
    a, n = np.ravel(analytic), np.ravel(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(n), np.linalg.norm(a), 1e-12))


@dataclass
class CheckReport:
    tolerance: float
    errors: dict = field(default_factory=dict)

    def add(self, name: str, err: float) -> None:
        self.errors.setdefault(name, []).append(err)

    def worst(self) -> dict:
        return {k: max(v) for k, v in self.errors.items()}

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.worst().values())


def _interior_point(rng, n):
    return 0.5 * rng.dirichlet(np.ones(n)) + 0.5 / n


def gradient_check_suite(n_points: int = 200, seed: int = 0, tolerance: float = 1e-5,
                         n_states: int = 4, n_actions: int = 3, step: float = 1e-5) -> CheckReport:
    rng = np.random.default_rng(seed)
    report = CheckReport(tolerance)
    n = n_states * n_actions
    for _ in range(n_points):
        mdp = random_mdp(rng, n_states, n_actions, float(rng.choice([0.9, 0.99])))
        policy = SoftmaxPolicy(rng.normal(size=(n_states, n_actions)), 10.0)
        theta = policy.theta

        def occ(th):
            return exact_occupancy(mdp, policy.with_theta(th)).values

        r = rng.normal(size=n)
        report.add("exact_policy_gradient", relative_error(
            exact_policy_gradient(mdp, policy, r), finite_diff_grad(lambda th: occ(th) @ r, theta, step)))

        lam = _interior_point(rng, n)
        report.add("entropy_grad", relative_error(
            -entropy_grad(lam), finite_diff_grad(entropy, lam, step * 1e-2)))

        ref = _interior_point(rng, n)
        specs = {
            "constraint_grad/linear": LinearConstraint(rng.normal(size=n), 0.1),
            "constraint_grad/kl_ref": KLRefConstraint(ref, 0.1),
            "constraint_grad/norm_ref": NormRefConstraint(ref, 0.05),
        }
        for name, spec in specs.items():
            report.add(name, relative_error(
                constraint_grad(spec, lam),
                finite_diff_grad(lambda x, spec=spec: constraint_value(spec, x), lam, step * 1e-2)))

        # composition: theta-gradient of -H + beta L(R) through the occupancy map
        spec = specs["constraint_grad/linear"]
        cfg = PenaltyConfig(float(rng.uniform(0.1, 5.0)))
        lam_theta = occ(theta)
        pseudo = penalty_pseudo_reward(lam_theta, spec, cfg)

        def penalized(th):
            x = occ(th)
            return penalty_value(entropy(x), constraint_value(spec, x), cfg)

        report.add("penalty_pseudo_reward", relative_error(
            exact_policy_gradient(mdp, policy, pseudo), finite_diff_grad(penalized, theta, step)))
    return report
