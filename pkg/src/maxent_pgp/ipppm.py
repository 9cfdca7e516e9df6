"""Inexact proximal point penalty method for hidden-convex constrained problems.

Problems have the form min F1(theta) s.t. F2(theta) <= 0 with F_i = H_i(c(theta)),
where c is an invertible, bi-Lipschitz reparametrization and H_i are convex.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError
from .pgp import EXACT_PENALTY, QUADRATIC, PenaltyConfig, penalty_fn, penalty_slope

GRADIENT_DESCENT = "gd"
SUBGRADIENT = "subgradient"


@dataclass(frozen=True)
class PenaltyTermConstants:
    """Weak-convexity modulus, gradient bound and (if smooth) smoothness of L o F2."""

    rho_phi: float
    G_phi: float
    L_phi: float | None = None


def compose_penalty_constants(f_props: dict, kind: str, smooth: bool | None = None) -> PenaltyTermConstants:
    """Constants of the penalty term g = L o f from those of f.

    ``f_props`` holds rho (weak convexity), G_f (gradient bound), D_theta (domain
    diameter), F_UB (bound on |f|) and, for smooth f, L.
    """
    rho, G, D = f_props["rho"], f_props["G_f"], f_props.get("D_theta", 0.0)
    smooth = ("L" in f_props) if smooth is None else smooth
    if kind == EXACT_PENALTY:
        return PenaltyTermConstants(rho, G, None)
    if kind != QUADRATIC:
        raise ConfigError(f"unknown penalty kind {kind}")
    if smooth:
        if f_props.get("L") is None:
            raise ConfigError("smooth quadratic constants need the smoothness L of f")
        L = f_props["L"]
        return PenaltyTermConstants(2 * G * D * min(rho, L), 2 * D * G**2,
                                    2 * (f_props["F_UB"] * L + G**2))
    return PenaltyTermConstants(2 * G * D * rho, 2 * D * G**2, None)


@dataclass
class Certificate:
    F_star: float
    nu_star: float
    u_star: np.ndarray
    theta_star: np.ndarray


@dataclass
class HiddenConvexProblem:
    """Separable synthetic family: c(theta)_i = theta_i + s sin(theta_i),
    H1(u) = sum_i w_i (u_i - u0_i)^2, H2(u) = <a, u> - b, over the box [-r, r]^n."""

    u0: np.ndarray
    a: np.ndarray
    b: float
    weights: np.ndarray
    box: float = 1.5
    wiggle: float = 0.5
    known_opt: Certificate | None = None

    @property
    def dim(self) -> int:
        return self.u0.size

    @property
    def mu_c(self) -> float:
        return 1.0 - self.wiggle

    @property
    def mu_H(self) -> float:
        return 2.0 * float(self.weights.min())

    @property
    def D_theta(self) -> float:
        return 2 * self.box * math.sqrt(self.dim)

    @property
    def D_U(self) -> float:
        return 2 * (self.box + self.wiggle) * math.sqrt(self.dim)

    def c(self, theta):
        return theta + self.wiggle * np.sin(theta)

    def c_prime(self, theta):
        return 1.0 + self.wiggle * np.cos(theta)

    def c_inv(self, u, tol: float = 1e-14) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        lo, hi = u - self.wiggle - 1e-12, u + self.wiggle + 1e-12
        while np.max(hi - lo) > tol:
            mid = 0.5 * (lo + hi)
            below = self.c(mid) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def H1(self, u) -> float:
        return float(np.sum(self.weights * (u - self.u0) ** 2))

    def H2(self, u) -> float:
        return float(self.a @ u - self.b)

    def F1(self, theta) -> float:
        return self.H1(self.c(theta))

    def F2(self, theta) -> float:
        return self.H2(self.c(theta))

    def grad_F1(self, theta) -> np.ndarray:
        return 2 * self.weights * (self.c(theta) - self.u0) * self.c_prime(theta)

    def grad_F2(self, theta) -> np.ndarray:
        return self.a * self.c_prime(theta)

    def project(self, theta) -> np.ndarray:
        return np.clip(theta, -self.box, self.box)

    def properties(self) -> dict:
        """Weak convexity, gradient bounds and smoothness of F1, F2 over the box."""
        s, r = self.wiggle, self.box
        u_abs = r + s * abs(math.sin(r)) if r < math.pi / 2 else r + s
        dev = np.abs(u_abs) + np.abs(self.u0)
        sin_max = math.sin(min(r, math.pi / 2))
        cp_max = 1 + s
        cp_min = 1 + s * math.cos(min(r, math.pi))
        # second derivative of w (c - u0)^2 is 2w(c'^2 + (c - u0) c'')
        hess_lo = 2 * self.weights * (cp_min**2 - dev * s * sin_max)
        hess_hi = 2 * self.weights * (cp_max**2 + dev * s * sin_max)
        rho1 = float(max(0.0, -hess_lo.min()))
        L1 = float(max(hess_hi.max(), -hess_lo.min()))
        G1 = float(np.linalg.norm(2 * self.weights * dev * cp_max))
        diag2 = np.abs(self.a) * s * sin_max
        F_UB2 = float(np.abs(self.a) @ np.full(self.dim, u_abs) + abs(self.b))
        return {
            "F1": {"rho": rho1, "G_f": G1, "L": L1, "D_theta": self.D_theta},
            "F2": {"rho": float(diag2.max()), "G_f": float(np.linalg.norm(self.a) * cp_max),
                   "L": float(diag2.max()), "F_UB": F_UB2, "D_theta": self.D_theta},
        }


def solve_u_space(u0, a, b, weights) -> tuple[float, float, np.ndarray]:
    """Closed-form KKT solution of min sum w (u - u0)^2 s.t. <a, u> <= b."""
    excess = float(a @ u0 - b)
    if excess <= 0:
        return 0.0, 0.0, u0.copy()
    if np.any((weights == 0) & (a != 0)):
        raise ConfigError("constraint direction must be covered by positive weights")
    safe_w = np.where(weights > 0, weights, 1.0)
    nu = 2 * excess / float(np.sum(np.where(weights > 0, a**2 / safe_w, 0.0)))
    u = u0 - nu * np.where(weights > 0, a / (2 * safe_w), 0.0)
    return float(np.sum(weights * (u - u0) ** 2)), nu, u


def synthetic_problem(u0=(0.6, 0.6), a=(1.0, 1.0), b=0.6, weights=None, box=1.5,
                      wiggle=0.5) -> HiddenConvexProblem:
    u0 = np.asarray(u0, dtype=float)
    a = np.asarray(a, dtype=float)
    weights = np.ones_like(u0) if weights is None else np.asarray(weights, dtype=float)
    prob = HiddenConvexProblem(u0, a, float(b), weights, box, wiggle)
    F, nu, u = solve_u_space(u0, a, float(b), weights)
    theta = prob.c_inv(u)
    if np.any(np.abs(theta) > box):
        raise ConfigError("constrained optimum lies outside the parameter box")
    prob.known_opt = Certificate(F, nu, u, theta)
    return prob


# ---------------------------------------------------------------------------
# inner solvers


@dataclass
class InnerResult:
    theta: np.ndarray
    iterations: int
    converged: bool


def inner_gd(grad: Callable, theta_start, eps_in: float, cap: int, L: float, mu: float,
             project: Callable | None = None) -> InnerResult:
    """Gradient descent with step 1/L, stopped once ||grad||^2 / (2 mu) <= eps_in."""
    theta = np.asarray(theta_start, dtype=float).copy()
    for it in range(cap + 1):
        g = grad(theta)
        if g @ g / (2 * mu) <= eps_in:
            return InnerResult(theta, it, True)
        if it == cap:
            break
        theta = theta - g / L
        if project is not None:
            theta = project(theta)
    return InnerResult(theta, cap, False)


def subgradient_budget(G: float, mu: float, eps_in: float) -> int:
    return math.ceil(4 * G**2 / (mu * eps_in))


def inner_subgradient(subgrad: Callable, theta_start, eps_in: float, cap: int, mu: float, G: float,
                      project: Callable | None = None) -> InnerResult:
    """Strongly convex subgradient method, steps 2 / (mu (k + 1)), k-weighted averaging.

    Runs the iteration budget 4 G^2 / (mu eps_in); if that exceeds ``cap`` the
    result is flagged as not converged.
    """
    budget = subgradient_budget(G, mu, eps_in)
    T = min(budget, cap)
    theta = np.asarray(theta_start, dtype=float).copy()
    avg = np.zeros_like(theta)
    weight_sum = 0.0
    for k in range(1, T + 1):
        avg += k * theta
        weight_sum += k
        theta = theta - (2.0 / (mu * (k + 1))) * subgrad(theta)
        if project is not None:
            theta = project(theta)
    out = theta if T == 0 else avg / weight_sum
    return InnerResult(out, T, budget <= cap)


# ---------------------------------------------------------------------------
# outer loop


@dataclass
class IpppmConfig:
    outer: int
    eps_in: float
    rho_hat: float
    penalty: PenaltyConfig
    inner: str = GRADIENT_DESCENT
    inner_cap: int = 100000
    stop_gap: float | None = None  # stop once the theorem-form gap drops below this

    def __post_init__(self):
        if self.eps_in <= 0:
            raise ConfigError("eps_in must be positive")
        if self.inner not in (GRADIENT_DESCENT, SUBGRADIENT):
            raise ConfigError(f"inner solver must be '{GRADIENT_DESCENT}' or '{SUBGRADIENT}'")


@dataclass
class IpppmRecord:
    columns: tuple = ("k", "F1", "F2", "violation", "opt_gap", "inner_iters")
    rows: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        lines = [",".join(self.columns)]
        for r in self.rows:
            lines.append(",".join(str(r[c]) if c in ("k", "inner_iters") else repr(float(r[c]))
                                  for c in self.columns))
        return "\n".join(lines) + "\n"


def penalty_opt_gap(problem: HiddenConvexProblem, theta, beta: float, kind: str = QUADRATIC,
                    weight: str = "full") -> float:
    """F1 - F* + w * beta * L(F2); ``weight`` 'full' uses w = 1, 'half' uses w = 1/2."""
    if problem.known_opt is None:
        raise ConfigError("problem has no optimum certificate")
    w = {"full": 1.0, "half": 0.5}[weight]
    return problem.F1(theta) - problem.known_opt.F_star + w * beta * penalty_fn(problem.F2(theta), kind)


def composed_modulus(problem: HiddenConvexProblem, penalty: PenaltyConfig):
    props = problem.properties()
    term = compose_penalty_constants(props["F2"], penalty.kind)
    rho_phi = props["F1"]["rho"] + penalty.beta * term.rho_phi
    return rho_phi, term, props


def ipppm_run(problem: HiddenConvexProblem, cfg: IpppmConfig, theta0):
    rho_phi, term, props = composed_modulus(problem, cfg.penalty)
    if not cfg.rho_hat > rho_phi:
        raise ConfigError(f"rho_hat = {cfg.rho_hat} must exceed the composed modulus {rho_phi}")
    beta, kind = cfg.penalty.beta, cfg.penalty.kind
    mu_in = cfg.rho_hat - rho_phi
    f1 = props["F1"]
    theta = problem.project(np.asarray(theta0, dtype=float))
    record = IpppmRecord(info={"rho_phi": rho_phi, "mu_inner": mu_in})

    def log(k, it):
        f2 = problem.F2(theta)
        gap = penalty_opt_gap(problem, theta, beta, kind, "half") if problem.known_opt else float("nan")
        record.rows.append({"k": k, "F1": problem.F1(theta), "F2": f2, "violation": max(f2, 0.0),
                            "opt_gap": gap, "inner_iters": it})
        return gap

    gap = log(0, 0)
    for k in range(cfg.outer):
        if cfg.stop_gap is not None and gap <= cfg.stop_gap:
            break
        center = theta.copy()

        def grad(x, center=center):
            g = problem.grad_F1(x) + cfg.rho_hat * (x - center)
            f2 = problem.F2(x)
            slope = penalty_slope(f2, kind)
            if slope:
                g = g + beta * slope * problem.grad_F2(x)
            return g

        if cfg.inner == GRADIENT_DESCENT:
            L_in = f1["L"] + cfg.rho_hat + beta * (term.L_phi if term.L_phi is not None else 0.0)
            res = inner_gd(grad, theta, cfg.eps_in, cfg.inner_cap, L_in, mu_in, problem.project)
        else:
            G_in = f1["G_f"] + cfg.rho_hat * problem.D_theta + beta * term.G_phi
            res = inner_subgradient(grad, theta, cfg.eps_in, cfg.inner_cap, mu_in, G_in, problem.project)
        if not res.converged:
            record.flags.append(k)
        theta = res.theta
        gap = log(k + 1, res.iterations)
    return theta, record


def strongly_convex_outer_bound(rho_hat: float, mu_c: float, mu_H: float, delta0: float,
                                beta: float, V0: float, eps: float) -> int:
    alpha = mu_c**2 * mu_H / (rho_hat + mu_c**2 * mu_H)
    return math.ceil(math.log(2 * (delta0 + beta / 2 * V0) / eps) / alpha)
