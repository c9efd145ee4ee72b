"""Benchmark domains: the four-rooms gridworld and Car-on-the-Hill."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

LAYOUT = """\
wwwwwwwwwwwww
w     w     w
w     w     w
w           w
w     w     w
w     w     w
ww wwww     w
w     www www
w     w     w
w     w     w
w           w
w     w     w
wwwwwwwwwwwww
"""

# up, down, left, right
DIRECTIONS = np.array([(-1, 0), (1, 0), (0, -1), (0, 1)])


def _parse_layout(text: str):
    grid = np.array([[c == "w" for c in line] for line in text.splitlines()])
    free = [(r, c) for r in range(grid.shape[0]) for c in range(grid.shape[1]) if not grid[r, c]]
    return grid, free


_WALLS, _FREE = _parse_layout(LAYOUT)
_CELL_ID = {rc: i for i, rc in enumerate(_FREE)}


def _room_cells(r0, r1, c0, c1):
    return tuple(_CELL_ID[(r, c)] for r in range(r0, r1 + 1) for c in range(c0, c1 + 1) if (r, c) in _CELL_ID)


UPPER_LEFT = _room_cells(1, 5, 1, 5)
LOWER_RIGHT = _room_cells(8, 11, 7, 11)
HALLWAYS = tuple(_CELL_ID[rc] for rc in [(3, 6), (10, 6), (6, 2), (7, 9)])


def _next_cells() -> np.ndarray:
    nxt = np.zeros((len(_FREE), 4), dtype=int)
    for i, (r, c) in enumerate(_FREE):
        for a, (dr, dc) in enumerate(DIRECTIONS):
            nxt[i, a] = _CELL_ID.get((r + dr, c + dc), i)
    return nxt


_NEXT = _next_cells()


@dataclass(frozen=True)
class FourRoomsEnv:
    goal: int = _CELL_ID[(11, 11)]
    slip_prob: float = 1.0 / 3.0
    gamma: float = 0.99
    start_region: tuple = UPPER_LEFT

    n_states = len(_FREE)
    n_actions = 4

    def __post_init__(self):
        if not 0 <= self.goal < self.n_states:
            raise ValueError(f"goal {self.goal} is not a free cell")
        if not 0.0 <= self.slip_prob <= 1.0:
            raise ValueError("slip_prob must lie in [0, 1]")

    @staticmethod
    def cell(rc) -> int:
        return _CELL_ID[tuple(rc)]

    @staticmethod
    def coords(s: int) -> tuple:
        return _FREE[s]

    @property
    def next_cell(self) -> np.ndarray:
        return _NEXT

    def reset(self, rng) -> int:
        return int(rng.choice(self.start_region))

    def step(self, s: int, a: int, rng):
        return fourrooms_step(self, s, a, rng)

    def default_reward(self, s: int, a: int, s_next: int) -> float:
        return 0.0 if s_next == self.goal else -1.0

    def transition_matrix(self) -> np.ndarray:
        """``P[s, a, s']`` including the slip model; the goal is absorbing."""
        S, A = self.n_states, self.n_actions
        P = np.zeros((S, A, S))
        for s in range(S):
            for a in range(A):
                P[s, a, _NEXT[s, a]] += 1.0 - self.slip_prob
                for d in range(4):
                    P[s, a, _NEXT[s, d]] += self.slip_prob / 4.0
        P[self.goal] = 0.0
        P[self.goal, :, self.goal] = 1.0
        return P

    def expected_default_reward(self) -> np.ndarray:
        """``R[s, a] = E[r | s, a]`` under the slip model."""
        P = self.transition_matrix()
        R = -1.0 + P[:, :, self.goal]
        R[self.goal] = 0.0
        return R


def fourrooms_step(env: FourRoomsEnv, s: int, a: int, rng):
    if rng.random() < env.slip_prob:
        a = int(rng.integers(4))
    s_next = int(_NEXT[s, a])
    if s_next == env.goal:
        return s_next, 0.0, True
    return s_next, -1.0, False


def make_transfer_goal(env: FourRoomsEnv, rng) -> FourRoomsEnv:
    """Copy of ``env`` whose goal is drawn uniformly from the lower-right room."""
    return replace(env, goal=int(rng.choice(LOWER_RIGHT)))


# ---------------------------------------------------------------------------
# Car on the hill


def hill_height(p):
    p = np.asarray(p, dtype=float)
    return np.where(p < 0, p * p + p, p / np.sqrt(1.0 + 5.0 * p * p))


def hill_slope(p):
    p = np.asarray(p, dtype=float)
    return np.where(p < 0, 2.0 * p + 1.0, (1.0 + 5.0 * p * p) ** -1.5)


def hill_curvature(p):
    p = np.asarray(p, dtype=float)
    return np.where(p < 0, 2.0, -15.0 * p * (1.0 + 5.0 * p * p) ** -2.5)


def car_acceleration(p, v, a, mass=1.0, g=9.81, slope=None, curvature=None):
    h1 = hill_slope(p) if slope is None else slope
    h2 = hill_curvature(p) if curvature is None else curvature
    q = 1.0 + h1 * h1
    return a / (mass * q) - g * h1 / q - v * v * h1 * h2 / q


def car_reward(s_next) -> float:
    p, v = float(s_next[0]), float(s_next[1])
    if p < -1.0 or abs(v) > 3.0:
        return -1.0
    if p > 1.0 and abs(v) <= 3.0:
        return 1.0
    return 0.0


def car_reward_batch(P, V) -> np.ndarray:
    P = np.asarray(P, float)
    V = np.asarray(V, float)
    out = np.zeros(np.broadcast(P, V).shape)
    out[(P > 1.0) & (np.abs(V) <= 3.0)] = 1.0
    out[(P < -1.0) | (np.abs(V) > 3.0)] = -1.0
    return out


@dataclass(frozen=True)
class CarOnHillEnv:
    p_bounds: tuple = (-1.0, 1.0)
    v_bounds: tuple = (-3.0, 3.0)
    a_bounds: tuple = (-4.0, 4.0)
    gamma: float = 0.95
    p0: float = -0.5
    v0: float = 0.0
    integration_dt: float = 0.001
    decision_dt: float = 0.1
    mass: float = 1.0
    g: float = 9.81

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    @property
    def start(self) -> tuple:
        return (self.p0, self.v0)

    @property
    def state_low(self) -> np.ndarray:
        return np.array([self.p_bounds[0], self.v_bounds[0]])

    @property
    def state_high(self) -> np.ndarray:
        return np.array([self.p_bounds[1], self.v_bounds[1]])

    def reset(self, rng=None) -> tuple:
        return self.start

    def step(self, s, a, rng=None):
        return car_step(self, s, a)

    def is_terminal(self, p, v):
        return (p < self.p_bounds[0]) | (p > self.p_bounds[1]) | (np.abs(v) > self.v_bounds[1])


def car_step_batch(env: CarOnHillEnv, P, V, A):
    """Vectorised forward-Euler integration over one decision interval."""
    P = np.array(P, dtype=float, copy=True)
    V = np.array(V, dtype=float, copy=True)
    A = np.clip(np.asarray(A, dtype=float), *env.a_bounds)
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(V)) and np.all(np.isfinite(A))):
        raise FloatingPointError("non-finite car state or action")
    n_sub = int(round(env.decision_dt / env.integration_dt))
    dt = env.integration_dt
    for _ in range(n_sub):
        acc = car_acceleration(P, V, A, env.mass, env.g)
        P, V = P + dt * V, V + dt * acc
    done = env.is_terminal(P, V)
    return P, V, car_reward_batch(P, V), done


def car_step(env: CarOnHillEnv, s, a):
    a = float(np.asarray(a, float).ravel()[0])
    P, V, r, done = car_step_batch(env, [float(s[0])], [float(s[1])], [a])
    return (float(P[0]), float(V[0])), float(r[0]), bool(done[0])
