"""Maximum-entropy IRL with state-indicator features (tabular baseline)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp


class SoftValueError(FloatingPointError):
    pass


@dataclass
class SoftVI:
    V: np.ndarray
    Q: np.ndarray
    policy: np.ndarray
    diffs: list


def soft_value_iteration(r_state, P, gamma, terminal=(), tol=1e-10, max_iter=100_000) -> SoftVI:
    """Soft Bellman iteration ``V(s) = log sum_a exp(r(s) + gamma E[V(s') | s, a])``.

    Terminal states collect their reward and stop; ``diffs`` holds the
    max-norm change of every sweep.
    """
    r = np.asarray(r_state, float)
    S, A, _ = P.shape
    term = np.zeros(S, bool)
    term[list(terminal)] = True
    V = np.zeros(S)
    diffs = []
    for _ in range(max_iter):
        Q = r[:, None] + gamma * (P @ V)
        Q[term] = r[term, None]
        V_new = logsumexp(Q, axis=1)
        V_new[term] = r[term]
        if not np.all(np.isfinite(V_new)):
            raise SoftValueError("non-finite soft values")
        d = float(np.max(np.abs(V_new - V)))
        diffs.append(d)
        V = V_new
        if d < tol:
            break
    Q = r[:, None] + gamma * (P @ V)
    Q[term] = r[term, None]
    pi = np.exp(Q - logsumexp(Q, axis=1, keepdims=True))
    return SoftVI(V, Q, pi, diffs)


def expected_visits(policy, P, p0, horizon, terminal=()) -> np.ndarray:
    """Expected state-visit counts over ``horizon`` steps; terminal states absorb and stop."""
    S = P.shape[0]
    keep = np.ones(S)
    keep[list(terminal)] = 0.0
    T = np.einsum("sa,sat->st", policy, P) * keep[:, None]
    D = np.asarray(p0, float).copy()
    total = D.copy()
    for _ in range(horizon - 1):
        D = D @ T
        total += D
    return total


def empirical_visits(demos, n_states, terminal=()) -> tuple:
    """Mean per-demo state counts (terminal arrivals included) and start distribution."""
    counts = np.zeros(n_states)
    p0 = np.zeros(n_states)
    term = set(terminal)
    for tr in demos:
        p0[int(tr.steps[0].state)] += 1
        for st in tr.steps:
            counts[int(st.state)] += 1
        if tr.terminal_state is not None and int(tr.terminal_state) in term:
            counts[int(tr.terminal_state)] += 1
    return counts / len(demos), p0 / len(demos)


def demo_log_likelihood(demos, policy) -> float:
    return float(sum(np.log(policy[int(st.state), int(st.action)]) for tr in demos for st in tr.steps))


@dataclass
class MaxEntResult:
    reward: np.ndarray
    grad_norms: list = field(default_factory=list)
    log_likelihood: float = float("nan")


def maxent_irl(demos, P, gamma, terminal=(), lr=0.1, iters=200, horizon=400, tol=1e-4) -> MaxEntResult:
    """Gradient ascent on the max-entropy likelihood with one indicator feature per state."""
    S = P.shape[0]
    f_emp, p0 = empirical_visits(demos, S, terminal)
    w = np.zeros(S)
    norms = []
    sv = None
    for _ in range(iters):
        sv = soft_value_iteration(w, P, gamma, terminal)
        grad = f_emp - expected_visits(sv.policy, P, p0, horizon, terminal)
        gn = float(np.max(np.abs(grad)))
        norms.append(gn)
        if gn < tol:
            break
        w = w + lr * grad
    sv = soft_value_iteration(w, P, gamma, terminal)
    return MaxEntResult(w, norms, demo_log_likelihood(demos, sv.policy))


def save_state_reward(path, reward) -> None:
    with open(path, "w") as f:
        f.write("cell,reward\n")
        for s, v in enumerate(np.asarray(reward, float)):
            f.write(f"{s},{float(v)!r}\n")


def load_state_reward(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    order = np.argsort(data[:, 0])
    return data[order, 1]
