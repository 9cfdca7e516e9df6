"""Penalized policy gradients for constrained maximum-entropy exploration in finite MDPs."""
from .mdp import (OccupancyMeasure, TabularMdp, Trajectory, exact_occupancy, occupancy_diameter,
                  sample_trajectory, truncated_occupancy)
from .policy import SoftmaxPolicy, action_probs, embed_policy, project_box, score, theta_diameter

__all__ = [
    "OccupancyMeasure", "TabularMdp", "Trajectory", "exact_occupancy", "occupancy_diameter",
    "sample_trajectory", "truncated_occupancy", "SoftmaxPolicy", "action_probs", "embed_policy",
    "project_box", "score", "theta_diameter",
]
