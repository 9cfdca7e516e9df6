"""Floored entropy and constraint functionals over occupancy vectors, with lambda-gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .mdp import OccupancyMeasure

DEFAULT_FLOOR = 1e-6


def _vals(lam) -> np.ndarray:
    if isinstance(lam, OccupancyMeasure):
        return lam.values
    return np.asarray(lam, dtype=float)


@dataclass(frozen=True)
class SmoothedEntropy:
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        if not self.floor > 0:
            raise ConfigError("entropy floor must be positive")

    def value(self, lam) -> float:
        return entropy(lam, self.floor)

    def grad(self, lam) -> np.ndarray:
        return entropy_grad(lam, self.floor)


def entropy(lam, floor: float = DEFAULT_FLOOR) -> float:
    x = _vals(lam)
    return float(-np.sum(x * np.log(np.maximum(x, floor))))


def entropy_grad(lam, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """Gradient of the negative entropy, log(max(lam, floor)) + 1.

    Below the floor the log is frozen, so this is the gradient of the smoothed
    surrogate -sum(lam * log(max(lam, floor))) everywhere off the kink.
    """
    x = _vals(lam)
    return np.log(np.maximum(x, floor)) + 1.0


@dataclass(frozen=True)
class LinearConstraint:
    cost: np.ndarray
    c_max: float = 0.0

    def __post_init__(self):
        c = np.array(self.cost, dtype=float).ravel()
        if not np.all(np.isfinite(c)):
            raise ConfigError("linear cost must be finite")
        object.__setattr__(self, "cost", c)


@dataclass(frozen=True)
class KLRefConstraint:
    lambda_ref: np.ndarray
    r_max: float
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        ref = np.maximum(_vals(self.lambda_ref).ravel(), self.floor)
        if np.any(ref <= 0):
            raise ConfigError("reference occupancy has zero entries after flooring")
        object.__setattr__(self, "lambda_ref", ref)


@dataclass(frozen=True)
class NormRefConstraint:
    lambda_ref: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        if self.b < 0:
            raise ConfigError("norm budget b must be nonnegative")
        object.__setattr__(self, "lambda_ref", _vals(self.lambda_ref).ravel().copy())


ConstraintSpec = LinearConstraint | KLRefConstraint | NormRefConstraint


def _check_size(spec, x):
    ref = spec.cost if isinstance(spec, LinearConstraint) else spec.lambda_ref
    if ref.shape != x.shape:
        raise ConfigError(f"constraint has length {ref.size}, occupancy has {x.size}")


def constraint_value(spec: ConstraintSpec, lam) -> float:
    x = _vals(lam)
    _check_size(spec, x)
    if isinstance(spec, LinearConstraint):
        return float(spec.cost @ x - spec.c_max)
    if isinstance(spec, KLRefConstraint):
        kl = np.sum(x * (np.log(np.maximum(x, spec.floor)) - np.log(spec.lambda_ref)))
        return float(kl - spec.r_max)
    if isinstance(spec, NormRefConstraint):
        return float(np.linalg.norm(x - spec.lambda_ref) - spec.b)
    raise ConfigError(f"unknown constraint type {type(spec).__name__}")


def constraint_grad(spec: ConstraintSpec, lam, return_flag: bool = False):
    """Gradient of the constraint in lambda.

    With ``return_flag`` also returns True when a nonsmooth point was hit and a
    subgradient was substituted (NormRef at lambda = lambda_ref gives zero).
    """
    x = _vals(lam)
    _check_size(spec, x)
    kink = False
    if isinstance(spec, LinearConstraint):
        g = spec.cost.copy()
    elif isinstance(spec, KLRefConstraint):
        g = np.log(np.maximum(x, spec.floor)) - np.log(spec.lambda_ref) + 1.0
    elif isinstance(spec, NormRefConstraint):
        diff = x - spec.lambda_ref
        norm = np.linalg.norm(diff)
        if norm == 0.0:
            g, kink = np.zeros_like(x), True
        else:
            g = diff / norm
    else:
        raise ConfigError(f"unknown constraint type {type(spec).__name__}")
    return (g, kink) if return_flag else g


def constraint_scale(spec: ConstraintSpec) -> float:
    """Natural magnitude of a constraint, used to express violation tolerances."""
    if isinstance(spec, LinearConstraint):
        return float(np.max(np.abs(spec.cost)))
    return 1.0


@dataclass(frozen=True)
class LambdaConstants:
    ell: float  # sup-norm bound on the lambda-gradient
    L: float  # l2 smoothness
    L_inf: float  # smoothness with respect to l1 on the input side
    smooth: bool = True


def entropy_constants(floor: float = DEFAULT_FLOOR) -> LambdaConstants:
    return LambdaConstants(abs(np.log(floor)) + 1.0, 1.0 / floor, 1.0 / floor)


def smoothness_constants(spec: ConstraintSpec | SmoothedEntropy | None, floor: float = DEFAULT_FLOOR) -> LambdaConstants:
    if spec is None or isinstance(spec, SmoothedEntropy):
        return entropy_constants(floor if spec is None else spec.floor)
    if isinstance(spec, LinearConstraint):
        return LambdaConstants(float(np.max(np.abs(spec.cost))), 0.0, 0.0)
    if isinstance(spec, KLRefConstraint):
        ell = abs(np.log(1.0 / (spec.floor * spec.lambda_ref.min()))) + 1.0
        return LambdaConstants(float(ell), 1.0 / spec.floor, 1.0 / spec.floor)
    if isinstance(spec, NormRefConstraint):
        return LambdaConstants(1.0, np.inf, np.inf, smooth=False)
    raise ConfigError(f"unknown constraint type {type(spec).__name__}")
