"""Exact references: occupancy Jacobians, exact policy gradients, a Frank-Wolfe optimum
solver over the occupancy polytope and finite-difference utilities."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .errors import ConfigError
from .mdp import EXACT, OccupancyMeasure, TabularMdp, check_dims, exact_state_occupancy, policy_transition_matrix
from .objectives import DEFAULT_FLOOR, constraint_grad, constraint_value, entropy, entropy_grad
from .policy import SoftmaxPolicy

MAX_ORACLE_SIZE = 4096


def _guard(mdp: TabularMdp):
    if mdp.size > MAX_ORACLE_SIZE:
        raise ConfigError(f"oracle limited to |S||A| <= {MAX_ORACLE_SIZE}, got {mdp.size}")


def _policy_jacobian(pi: np.ndarray) -> np.ndarray:
    """d pi(a|s) / d theta(s, b) = pi(a|s) (1[a=b] - pi(b|s)), shape (S, A, A)."""
    return pi[:, :, None] * (np.eye(pi.shape[1])[None] - pi[:, None, :])


def _transition_jacobian(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    """d P_pi[s, :] / d theta(s, b), shape (S, A, S): pi(b|s) (P[s, b, :] - P_pi[s, :])."""
    P_pi = policy_transition_matrix(mdp, pi)
    return pi[:, :, None] * (mdp.transitions - P_pi[:, None, :])


def occupancy_jacobian(mdp: TabularMdp, policy: SoftmaxPolicy, horizon: int | None = None) -> np.ndarray:
    """Jacobian of the flat occupancy vector with respect to flat theta, shape (SA, SA).

    With ``horizon`` the truncated occupancy is differentiated by forward
    propagation of state-distribution derivatives; otherwise the stationary
    linear system is differentiated directly.
    """
    _guard(mdp)
    check_dims(mdp, policy)
    S, A = mdp.n_states, mdp.n_actions
    gamma = mdp.discount
    pi = policy.probs()
    dP = _transition_jacobian(mdp, pi)  # (S, A, S'): row s' of P_pi moved by theta[s, b]
    P_pi = policy_transition_matrix(mdp, pi)
    if horizon is None:
        d = exact_state_occupancy(mdp, pi)
        # d = (1-g) mu0 + g P_pi^T d  =>  (I - g P_pi^T) dd = g (dP_pi)^T d
        rhs = np.zeros((S, S * A))
        rhs_vals = gamma * d[:, None, None] * dP  # contribution to d(s') from theta[s, b]
        rhs[:, :] = rhs_vals.transpose(2, 0, 1).reshape(S, S * A)
        dd = np.linalg.solve(np.eye(S) - gamma * P_pi.T, rhs)
    else:
        rho = mdp.init_dist.copy()
        drho = np.zeros((S, S * A))
        d = np.zeros(S)
        dd = np.zeros((S, S * A))
        w = 1.0 - gamma
        for _ in range(horizon):
            d += w * rho
            dd += w * drho
            push = (rho[:, None, None] * dP).transpose(2, 0, 1).reshape(S, S * A)
            drho = P_pi.T @ drho + push
            rho = rho @ P_pi
            w *= gamma
    # lambda(s, a) = d(s) pi(a|s)
    J = (dd[:, None, :] * pi[:, :, None]).reshape(S * A, S * A)
    dpi = _policy_jacobian(pi)  # (S, A, A)
    for s in range(S):
        J[s * A:(s + 1) * A, s * A:(s + 1) * A] += d[s] * dpi[s]
    return J


def exact_policy_gradient(mdp: TabularMdp, policy: SoftmaxPolicy, reward: np.ndarray,
                          horizon: int | None = None) -> np.ndarray:
    """Exact gradient of theta -> <lambda(theta), reward> (or of lambda_H with ``horizon``)."""
    J = occupancy_jacobian(mdp, policy, horizon)
    return (J.T @ np.asarray(reward, dtype=float).ravel()).reshape(policy.theta.shape)


def advantage_policy_gradient(mdp: TabularMdp, policy: SoftmaxPolicy, reward: np.ndarray) -> np.ndarray:
    """Same quantity as exact_policy_gradient via values and advantages.

    For the direct softmax, d<lambda, r>/d theta(s, a) = d(s) pi(a|s) (Q(s, a) - V(s)).
    """
    pi = policy.probs()
    r = np.asarray(reward, dtype=float).reshape(pi.shape)
    P_pi = policy_transition_matrix(mdp, pi)
    r_pi = np.sum(pi * r, axis=1)
    V = np.linalg.solve(np.eye(mdp.n_states) - mdp.discount * P_pi, r_pi)
    Q = r + mdp.discount * mdp.transitions @ V
    d = exact_state_occupancy(mdp, pi)
    return d[:, None] * pi * (Q - V[:, None])


def finite_diff_grad(f: Callable[[np.ndarray], float], theta: np.ndarray, step: float = 1e-6) -> np.ndarray:
    if not step > 0:
        raise ConfigError("finite-difference step must be positive")
    theta = np.asarray(theta, dtype=float)
    g = np.zeros_like(theta)
    flat = g.reshape(-1)
    for i in range(theta.size):
        e = np.zeros(theta.size)
        e[i] = step
        e = e.reshape(theta.shape)
        flat[i] = (f(theta + e) - f(theta - e)) / (2 * step)
    return g


# ---------------------------------------------------------------------------
# Frank-Wolfe over the occupancy polytope


def solve_mdp(mdp: TabularMdp, reward: np.ndarray, max_iter: int = 1000) -> np.ndarray:
    """Deterministic optimal policy (action per state) for ``reward`` by policy iteration."""
    S, A = mdp.n_states, mdp.n_actions
    r = np.asarray(reward, dtype=float).reshape(S, A)
    acts = np.argmax(r, axis=1)
    idx = np.arange(S)
    for _ in range(max_iter):
        P_pi = mdp.transitions[idx, acts]
        V = np.linalg.solve(np.eye(S) - mdp.discount * P_pi, r[idx, acts])
        Q = r + mdp.discount * mdp.transitions @ V
        best = Q.max(axis=1)
        # only switch on strict improvement so ties cannot cycle
        improve = best > Q[idx, acts] + 1e-12 * (1 + np.abs(best))
        if not improve.any():
            return acts
        acts = np.where(improve, np.argmax(Q, axis=1), acts)
    raise RuntimeError("policy iteration did not converge")


def deterministic_occupancy(mdp: TabularMdp, acts: np.ndarray) -> np.ndarray:
    pi = np.zeros((mdp.n_states, mdp.n_actions))
    pi[np.arange(mdp.n_states), acts] = 1.0
    d = exact_state_occupancy(mdp, pi)
    return (d[:, None] * pi).ravel()


@dataclass
class OptimumCertificate:
    F_star: float
    lambda_star: OccupancyMeasure
    nu_star: float
    feasibility: float
    stationarity: float
    duality_gap: float
    usable: bool
    info: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "F_star": self.F_star,
            "nu_star": self.nu_star,
            "feasibility": self.feasibility,
            "stationarity": self.stationarity,
            "duality_gap": self.duality_gap,
            "usable": self.usable,
            "lambda_star": [float(x) for x in self.lambda_star.values],
            "discount": self.lambda_star.discount,
            "info": self.info,
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "OptimumCertificate":
        rec = json.loads(text)
        lam = OccupancyMeasure(np.array(rec["lambda_star"]), EXACT, rec["discount"])
        return cls(rec["F_star"], lam, rec["nu_star"], rec["feasibility"], rec["stationarity"],
                   rec["duality_gap"], rec["usable"], rec.get("info", {}))


def _fw_objective(spec, mu, floor):
    def value(x):
        pen = 0.0
        if spec is not None and mu > 0:
            pen = mu * max(constraint_value(spec, x), 0.0) ** 2
        return -entropy(x, floor) + pen

    def grad(x):
        g = entropy_grad(x, floor)
        if spec is not None and mu > 0:
            r = constraint_value(spec, x)
            if r > 0:
                g = g + 2 * mu * r * constraint_grad(spec, x)
        return g

    return value, grad


def _simplex_correction(value, grad, V: np.ndarray, w0: np.ndarray) -> np.ndarray:
    """Minimize value(V^T w) over the probability simplex (fully corrective step)."""
    if V.shape[0] == 1:
        return np.ones(1)
    res = minimize(lambda w: value(V.T @ w), w0, jac=lambda w: V @ grad(V.T @ w), method="SLSQP",
                   bounds=[(0.0, 1.0)] * len(w0),
                   constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1.0, "jac": lambda w: np.ones_like(w)}],
                   options={"ftol": 1e-15, "maxiter": 500})
    w = np.clip(res.x, 0.0, None)
    w = w / w.sum()
    return w if value(V.T @ w) <= value(V.T @ w0) else w0


def frank_wolfe(mdp: TabularMdp, value, grad, x0_acts=None, tol: float = 1e-4, max_iter: int = 2000,
                atoms=None):
    """Fully corrective Frank-Wolfe over the occupancy polytope.

    Vertices are occupancies of deterministic policies found by an exact MDP solve on
    the negated gradient; after each new vertex the weights of all active vertices are
    re-optimized. Returns (x, active atoms dict, final FW gap, iterations).
    """
    if atoms is None:
        acts = solve_mdp(mdp, np.zeros(mdp.size)) if x0_acts is None else x0_acts
        atoms = {tuple(acts): [deterministic_occupancy(mdp, acts), 1.0]}
    keys = list(atoms)
    V = np.array([atoms[k][0] for k in keys])
    w = np.array([atoms[k][1] for k in keys], dtype=float)
    w /= w.sum()
    w = _simplex_correction(value, grad, V, w)
    x = V.T @ w
    gap = np.inf
    it = 0
    for it in range(max_iter):
        g = grad(x)
        fw_acts = solve_mdp(mdp, -g)
        fw_key = tuple(fw_acts)
        vertex = deterministic_occupancy(mdp, fw_acts)
        gap = float(-g @ (vertex - x))
        if gap <= tol:
            break
        if fw_key not in keys:
            keys.append(fw_key)
            V = np.vstack([V, vertex])
            w = np.append(w, 0.0)
        # seed the correction with the best simple step toward the new vertex
        idx = keys.index(fw_key)
        e = np.zeros_like(w)
        e[idx] = 1.0
        res = minimize_scalar(lambda t: value(V.T @ ((1 - t) * w + t * e)), bounds=(0.0, 1.0), method="bounded")
        w = (1 - res.x) * w + res.x * e
        w = _simplex_correction(value, grad, V, w)
        keep = w > 1e-13
        keys = [k for k, kp in zip(keys, keep) if kp]
        V, w = V[keep], w[keep] / w[keep].sum()
        x = V.T @ w
    else:
        it = max_iter
    atoms = {k: [v, float(wi)] for k, v, wi in zip(keys, V, w)}
    return x, atoms, gap, it


def solve_constrained_optimum(mdp: TabularMdp, spec=None, penalty_for_fw: float = 10.0,
                              tolerance: float = 1e-4, floor: float = DEFAULT_FLOOR,
                              ramp: float = 10.0, stages: int = 6, max_iter: int = 20000) -> OptimumCertificate:
    """Maximize the floored entropy subject to R(lambda) <= 0 via a ramped quadratic penalty.

    Each stage solves min -H + mu [R]_+^2 by Frank-Wolfe; mu grows by ``ramp``.
    The multiplier estimate is 2 mu [R(lambda)]_+ at the last stage.
    """
    _guard(mdp)
    mu = penalty_for_fw if spec is not None else 0.0
    atoms = None
    history = []
    n_stages = stages if spec is not None else 1
    for stage in range(n_stages):
        value, grad = _fw_objective(spec, mu, floor)
        x, atoms, gap, iters = frank_wolfe(mdp, value, grad, tol=tolerance, max_iter=max_iter, atoms=atoms)
        viol = max(constraint_value(spec, x), 0.0) if spec is not None else 0.0
        history.append({"mu": mu, "fw_gap": gap, "iterations": iters, "violation": viol})
        if spec is None or viol <= 1e-6 * max(1.0, abs(spec.c_max) if hasattr(spec, "c_max") else 1.0):
            break
        mu *= ramp
    nu = 2 * mu * viol if spec is not None else 0.0
    F = entropy(x, floor)
    # stationarity of the Lagrangian -H + nu R, measured by its FW gap over the polytope
    g_lag = entropy_grad(x, floor) + (nu * constraint_grad(spec, x) if spec is not None else 0.0)
    lag_acts = solve_mdp(mdp, -g_lag)
    stat = float(-g_lag @ (deterministic_occupancy(mdp, lag_acts) - x))
    comp = abs(nu * constraint_value(spec, x)) if spec is not None else 0.0
    usable = gap <= tolerance and viol <= 1e-6 + tolerance
    lam = OccupancyMeasure(x, EXACT, mdp.discount)
    return OptimumCertificate(F, lam, nu, viol, stat, gap, bool(usable),
                              {"stages": history, "complementary_slackness": comp, "final_mu": mu})


def dual_function(mdp: TabularMdp, spec, nu: float, floor: float = DEFAULT_FLOOR, tol: float = 1e-6):
    """d(nu) = min over the polytope of -H(lambda) + nu R(lambda), with its FW gap."""
    def value(x):
        return -entropy(x, floor) + nu * constraint_value(spec, x)

    def grad(x):
        return entropy_grad(x, floor) + nu * constraint_grad(spec, x)

    x, _, gap, _ = frank_wolfe(mdp, value, grad, tol=tol)
    return value(x) - gap, value(x)
