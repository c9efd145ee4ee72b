"""Data model for option MDPs: spaces, trajectories and option sets.

States and actions are stored as plain Python values: an ``int`` for a
tabular id, or a tuple of floats for a continuous point.  Scalar continuous
actions are stored as 1-tuples so every continuous value has the same shape.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class TrajectoryError(ValueError):
    pass


class RewardUndefined(KeyError):
    """Raised by reward functions that have no value at a queried triple."""


# ---------------------------------------------------------------------------
# spaces


@dataclass(frozen=True)
class Discrete:
    n: int

    def contains(self, x) -> bool:
        return isinstance(x, (int, np.integer)) and 0 <= int(x) < self.n

    @property
    def dim(self) -> int:
        return 1


@dataclass(frozen=True)
class Box:
    low: tuple
    high: tuple

    def contains(self, x) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (len(self.low),):
            return False
        return bool(np.all(x >= np.asarray(self.low)) and np.all(x <= np.asarray(self.high)))

    @property
    def dim(self) -> int:
        return len(self.low)

    @property
    def width(self) -> np.ndarray:
        return np.asarray(self.high, float) - np.asarray(self.low, float)


def as_point(x):
    """Canonical storage form: int stays int, anything else becomes a float tuple."""
    if isinstance(x, (int, np.integer)):
        return int(x)
    return tuple(float(v) for v in np.atleast_1d(np.asarray(x, dtype=float)))


def as_array(x) -> np.ndarray:
    if isinstance(x, (int, np.integer)):
        return np.array([float(x)])
    return np.asarray(x, dtype=float)


def point_key(x, resolution=None):
    """Hashable lookup key.  Continuous points are rounded to ``resolution``."""
    if isinstance(x, (int, np.integer)):
        return int(x)
    if resolution is None:
        return tuple(x)
    res = np.broadcast_to(np.asarray(resolution, float), (len(x),))
    return tuple(int(math.floor(v / r + 0.5)) for v, r in zip(x, res))


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class Step:
    option: int
    state: object
    action: object
    term: bool


@dataclass(frozen=True)
class Trajectory:
    steps: tuple
    terminal_state: object
    episode_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise TrajectoryError("trajectory has no steps")
        if not self.steps[0].term:
            raise TrajectoryError("b_0 must be 1: the first option is always freshly selected")

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    @property
    def options(self) -> list[int]:
        return [st.option for st in self.steps]

    @property
    def states(self) -> list:
        return [st.state for st in self.steps]

    @property
    def actions(self) -> list:
        return [st.action for st in self.steps]

    @property
    def terms(self) -> list[bool]:
        return [st.term for st in self.steps]


def make_trajectory(options, states, actions, terms, terminal_state, episode_id=0) -> Trajectory:
    steps = tuple(
        Step(int(o), as_point(s), as_point(a), bool(b))
        for o, s, a, b in zip(options, states, actions, terms)
    )
    return Trajectory(steps, as_point(terminal_state), int(episode_id))


def discounted_return(traj: Trajectory, reward: Callable, gamma: float) -> float:
    """Sum of ``gamma**t * reward(s_t, option_t, a_t)`` over the trajectory."""
    total = 0.0
    disc = 1.0
    for t, st in enumerate(traj.steps):
        try:
            r = reward(st.state, st.option, st.action)
        except (KeyError, IndexError) as exc:
            raise RewardUndefined(f"reward undefined at step {t}: {exc}") from exc
        if r is None or not math.isfinite(r):
            raise RewardUndefined(f"reward undefined at step {t}")
        total += disc * r
        disc *= gamma
    return total


# ---------------------------------------------------------------------------
# option sets


@dataclass(frozen=True)
class TabularOptionPolicy:
    """Policy over options given as a table ``probs[state, option]``."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        if np.any(t < 0) or np.any(t > 1) or np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("policy-over-options rows must be distributions")
        object.__setattr__(self, "table", t)

    @property
    def n_options(self) -> int:
        return self.table.shape[1]

    def probs(self, s) -> np.ndarray:
        return self.table[int(s)]

    def sample(self, s, rng) -> int:
        return int(rng.choice(self.n_options, p=self.probs(s)))


@dataclass(frozen=True)
class DeterministicOptionPolicy:
    """Policy over options as a deterministic map ``state -> option``."""

    select: Callable
    n_options: int

    def probs(self, s) -> np.ndarray:
        p = np.zeros(self.n_options)
        p[int(self.select(s))] = 1.0
        return p

    def sample(self, s, rng) -> int:
        return int(self.select(s))


@dataclass(frozen=True)
class OptionSpec:
    policy: object
    termination: object
    initiation: Callable | None = None

    def can_start(self, s) -> bool:
        return self.initiation is None or bool(self.initiation(s))


@dataclass(frozen=True)
class OptionSet:
    options: tuple
    policy_over_options: object
    state_space: object = None
    action_space: object = None

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))
        if self.policy_over_options.n_options != len(self.options):
            raise ValueError("policy-over-options size does not match number of options")

    def __len__(self) -> int:
        return len(self.options)

    @property
    def n_options(self) -> int:
        return len(self.options)

    def theta_sizes(self) -> list[int]:
        return [o.policy.n_params for o in self.options]

    def vartheta_sizes(self) -> list[int]:
        return [o.termination.n_params for o in self.options]


@dataclass(frozen=True)
class Violation:
    t: int
    kind: str
    message: str


def validate_trajectory(traj: Trajectory, opts: OptionSet) -> list[Violation]:
    """Collect every inconsistency in ``traj``; an empty list means valid."""
    out: list[Violation] = []
    n = opts.n_options
    prev = None
    for t, st in enumerate(traj.steps):
        if not (0 <= st.option < n):
            out.append(Violation(t, "option_range", f"option {st.option} not in [0, {n})"))
        if t == 0 and not st.term:
            out.append(Violation(t, "term_flag", "b_0 must be 1"))
        if t > 0 and not st.term and st.option != prev:
            out.append(Violation(t, "term_flag", f"option changed {prev}->{st.option} without termination"))
        if opts.state_space is not None and not opts.state_space.contains(st.state):
            out.append(Violation(t, "state_bounds", f"state {st.state} outside state space"))
        if opts.action_space is not None and not opts.action_space.contains(st.action):
            out.append(Violation(t, "action_bounds", f"action {st.action} outside action space"))
        prev = st.option
    if opts.state_space is not None and not opts.state_space.contains(traj.terminal_state):
        out.append(Violation(len(traj), "state_bounds", "terminal state outside state space"))
    return out


# ---------------------------------------------------------------------------
# demonstration CSV


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    txt = f"{float(v):.17g}"
    if not any(ch in txt for ch in ".eni"):
        txt += ".0"
    return txt


def _dims(x) -> int:
    return 1 if isinstance(x, int) else len(x)


def write_demos(path, demos: Sequence[Trajectory]) -> None:
    if not demos:
        raise TrajectoryError("no trajectories to write")
    ds = _dims(demos[0].steps[0].state)
    da = _dims(demos[0].steps[0].action)
    header = ["episode", "t", "option", "term_flag"] + [f"s{i}" for i in range(ds)] + [f"a{i}" for i in range(da)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for tr in demos:
            for t, st in enumerate(tr.steps):
                s = [st.state] if isinstance(st.state, int) else list(st.state)
                a = [st.action] if isinstance(st.action, int) else list(st.action)
                w.writerow([tr.episode_id, t, st.option, int(st.term)] + [_fmt(v) for v in s] + [_fmt(v) for v in a])
            s = [tr.terminal_state] if isinstance(tr.terminal_state, int) else list(tr.terminal_state)
            w.writerow([tr.episode_id, -1, "", ""] + [_fmt(v) for v in s] + [""] * da)


class DemoParseError(ValueError):
    def __init__(self, row: int, msg: str):
        super().__init__(f"row {row}: {msg}")
        self.row = row


def _parse_values(cells, row):
    vals = []
    for c in cells:
        try:
            if any(ch in c for ch in ".eEni"):
                vals.append(float(c))
            else:
                vals.append(int(c))
        except ValueError:
            raise DemoParseError(row, f"bad numeric value {c!r}") from None
    if len(vals) == 1 and isinstance(vals[0], int):
        return vals[0]
    return tuple(float(v) for v in vals)


def read_demos(path) -> list[Trajectory]:
    """Parse a demonstration CSV.  Errors carry the 1-based file row number."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DemoParseError(1, "empty file")
    header = rows[0]
    if header[:4] != ["episode", "t", "option", "term_flag"]:
        raise DemoParseError(1, "unexpected header")
    s_cols = [i for i, h in enumerate(header) if h.startswith("s")]
    a_cols = [i for i, h in enumerate(header) if h.startswith("a")]
    demos: list[Trajectory] = []
    cur: list = []
    cur_ep = None
    for rno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DemoParseError(rno, f"expected {len(header)} columns, got {len(row)}")
        try:
            ep, t = int(row[0]), int(row[1])
        except ValueError:
            raise DemoParseError(rno, "episode/t must be integers") from None
        if cur_ep is not None and ep != cur_ep:
            raise DemoParseError(rno, f"episode {cur_ep} has no terminal row")
        cur_ep = ep
        state = _parse_values([row[i] for i in s_cols], rno)
        if t == -1:
            if not cur:
                raise DemoParseError(rno, "terminal row without steps")
            try:
                demos.append(Trajectory(tuple(cur), state, ep))
            except TrajectoryError as exc:
                raise DemoParseError(rno, str(exc)) from None
            cur, cur_ep = [], None
            continue
        if t != len(cur):
            raise DemoParseError(rno, f"expected t={len(cur)}, got {t}")
        try:
            opt, term = int(row[2]), int(row[3])
        except ValueError:
            raise DemoParseError(rno, "option/term_flag must be integers") from None
        action = _parse_values([row[i] for i in a_cols], rno)
        if not isinstance(action, int):
            action = tuple(action) if isinstance(action, tuple) else (float(action),)
        cur.append(Step(opt, state, action, bool(term)))
    if cur:
        raise DemoParseError(len(rows), "file ends inside an episode")
    return demos
