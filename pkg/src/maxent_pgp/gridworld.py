"""ASCII gridworlds (FrozenLake style) and the reference right-then-down policy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .mdp import OccupancyMeasure, TabularMdp, exact_occupancy
from .objectives import LinearConstraint
from .policy import SoftmaxPolicy, embed_policy

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}
SAFE_CHARS = {" ", ".", "F"}

DEFAULT_MAP = (
    "S     ",
    "      ",
    "  HH  ",
    "  HH  ",
    "      ",
    "     G",
)

# per-state cost (hole, other). With "hole_penalty", <c, lambda> <= 0 limits hole
# visits; "sign_flipped" has the opposite signs and rewards them instead.
COST_PROFILES = {
    "hole_penalty": (50.0, -0.001),
    "sign_flipped": (-50.0, 0.001),
    "relaxed": (2.0, -0.001),
    "relaxed_sign_flipped": (-2.0, 0.001),
}


@dataclass(frozen=True)
class GridworldSpec:
    ascii_map: tuple = DEFAULT_MAP
    slip_prob: float = 0.0
    cost_profile: str = "hole_penalty"
    discount: float = 0.99

    def __post_init__(self):
        object.__setattr__(self, "ascii_map", tuple(self.ascii_map))
        if not 0.0 <= self.slip_prob < 1.0:
            raise ConfigError("slip_prob must lie in [0, 1)")
        if self.cost_profile not in COST_PROFILES:
            raise ConfigError(f"unknown cost profile '{self.cost_profile}', "
                              f"choose from {sorted(COST_PROFILES)}")


@dataclass(frozen=True)
class Grid:
    n_rows: int
    n_cols: int
    start: int
    holes: tuple
    terminals: tuple

    def cell(self, s: int) -> tuple[int, int]:
        return divmod(s, self.n_cols)

    @property
    def n_states(self) -> int:
        return self.n_rows * self.n_cols


def parse_map(rows) -> Grid:
    rows = list(rows)
    if not rows:
        raise ConfigError("empty map")
    width = len(rows[0])
    starts, holes, terminals = [], [], []
    for r, line in enumerate(rows):
        if len(line) != width:
            raise ConfigError(f"map row {r} has length {len(line)}, expected {width}")
        for c, ch in enumerate(line):
            s = r * width + c
            if ch == "S":
                starts.append(s)
            elif ch == "H":
                holes.append(s)
            elif ch == "G":
                terminals.append(s)
            elif ch not in SAFE_CHARS:
                raise ConfigError(f"unknown map character {ch!r} at row {r}, col {c}")
    if len(starts) != 1:
        raise ConfigError(f"map needs exactly one 'S', found {len(starts)}")
    return Grid(len(rows), width, starts[0], tuple(holes), tuple(terminals))


def _step(grid: Grid, s: int, a: int) -> int:
    r, c = grid.cell(s)
    dr, dc = MOVES[a]
    r = min(max(r + dr, 0), grid.n_rows - 1)
    c = min(max(c + dc, 0), grid.n_cols - 1)
    return r * grid.n_cols + c


def build_transitions(grid: Grid, slip_prob: float = 0.0) -> np.ndarray:
    """Walls clamp; with probability slip_prob a uniformly random move replaces the intended one."""
    S, A = grid.n_states, 4
    P = np.zeros((S, A, S))
    for s in range(S):
        if s in grid.terminals:
            P[s, :, s] = 1.0
            continue
        for a in range(A):
            P[s, a, _step(grid, s, a)] += 1.0 - slip_prob
            for b in range(A):
                P[s, a, _step(grid, s, b)] += slip_prob / A
    return P


def state_costs(grid: Grid, profile: str) -> np.ndarray:
    hole, other = COST_PROFILES[profile]
    c = np.full(grid.n_states, other)
    c[list(grid.holes)] = hole
    return c


def build_frozenlake(spec: GridworldSpec = GridworldSpec()) -> tuple[TabularMdp, LinearConstraint]:
    grid = parse_map(spec.ascii_map)
    P = build_transitions(grid, spec.slip_prob)
    mu0 = np.zeros(grid.n_states)
    mu0[grid.start] = 1.0
    mdp = TabularMdp(P, mu0, spec.discount, frozenset(grid.terminals))
    cost = np.repeat(state_costs(grid, spec.cost_profile), 4)
    return mdp, LinearConstraint(cost, 0.0)


def reference_actions(grid: Grid) -> np.ndarray:
    """Right along the top row, then down the last column."""
    acts = np.empty(grid.n_states, dtype=int)
    for s in range(grid.n_states):
        r, c = grid.cell(s)
        acts[s] = RIGHT if (r == 0 and c < grid.n_cols - 1) else DOWN
    return acts


def reference_trajectory_policy(spec: GridworldSpec = GridworldSpec(), epsilon: float = 1e-3
                                ) -> tuple[SoftmaxPolicy, OccupancyMeasure]:
    grid = parse_map(spec.ascii_map)
    mdp, _ = build_frozenlake(spec)
    table = np.zeros((grid.n_states, 4))
    table[np.arange(grid.n_states), reference_actions(grid)] = 1.0
    policy = embed_policy(table, epsilon)
    return policy, exact_occupancy(mdp, policy)
