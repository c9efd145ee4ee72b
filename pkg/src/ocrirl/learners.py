"""Forward-RL learners used to score rewards: tabular SARSA, fitted Q-iteration."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envs import CarOnHillEnv, FourRoomsEnv, car_step_batch


class RegressorError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# SARSA


@dataclass
class SarsaConfig:
    episodes: int = 2000
    lr: float = 0.1
    temp_start: float = 1.0
    temp_end: float = 0.05
    max_steps: int = 1000
    seed: int = 0


def temperature_schedule(cfg: SarsaConfig) -> np.ndarray:
    """Geometric annealing from ``temp_start`` to ``temp_end`` over the episodes."""
    if cfg.episodes == 1:
        return np.array([cfg.temp_start])
    return cfg.temp_start * (cfg.temp_end / cfg.temp_start) ** (np.arange(cfg.episodes) / (cfg.episodes - 1))


def _boltzmann(q, temp, u):
    m = max(q)
    w = [math.exp((x - m) / temp) for x in q]
    tot = sum(w)
    acc = 0.0
    for i, x in enumerate(w):
        acc += x
        if u * tot < acc:
            return i
    return len(q) - 1


def sarsa_train(env: FourRoomsEnv, reward, cfg: SarsaConfig | None = None):
    """SARSA with Boltzmann exploration on ``reward``.

    ``reward`` is an array ``R[s, a]`` or a callable ``r(s, a, s_next)``.
    The returned curve holds each episode's undiscounted return under the
    environment's default reward, so curves from different rewards compare.
    """
    cfg = cfg or SarsaConfig()
    rng = np.random.default_rng(cfg.seed)
    S, A = env.n_states, env.n_actions
    Q = np.zeros((S, A))
    Ql = Q.tolist()
    table = reward.tolist() if isinstance(reward, np.ndarray) else None
    temps = temperature_schedule(cfg)
    nxt = env.next_cell.tolist()
    goal, slip, gamma, lr = env.goal, env.slip_prob, env.gamma, cfg.lr
    starts = list(env.start_region)
    curve = np.zeros(cfg.episodes)
    for ep in range(cfg.episodes):
        temp = float(temps[ep])
        u = rng.random((cfg.max_steps + 1, 3)).tolist()
        s = starts[int(u[0][2] * len(starts))]
        a = _boltzmann(Ql[s], temp, u[0][0])
        ret = 0.0
        for t in range(cfg.max_steps):
            us, ud, ua = u[t + 1]
            d = int(ud * 4) if us < slip else a
            s2 = nxt[s][d]
            done = s2 == goal
            ret += 0.0 if done else -1.0
            r = table[s][a] if table is not None else reward(s, a, s2)
            if done:
                Ql[s][a] += lr * (r - Ql[s][a])
                break
            a2 = _boltzmann(Ql[s2], temp, ua)
            Ql[s][a] += lr * (r + gamma * Ql[s2][a2] - Ql[s][a])
            s, a = s2, a2
        curve[ep] = ret
    Q = np.array(Ql)
    return Q, curve


def greedy_policy(Q: np.ndarray) -> np.ndarray:
    return np.argmax(Q, axis=1)


# ---------------------------------------------------------------------------
# regressors for FQI


@dataclass
class ExtraTreesRegressorSpec:
    n_estimators: int = 50
    min_samples_leaf: int = 2
    seed: int = 0

    def fit(self, X, y):
        from sklearn.ensemble import ExtraTreesRegressor

        m = ExtraTreesRegressor(n_estimators=self.n_estimators, min_samples_leaf=self.min_samples_leaf,
                                random_state=self.seed, n_jobs=1)
        m.fit(X, y)
        return m.predict


@dataclass
class KnnRegressorSpec:
    """Distance-weighted k-NN on inputs scaled by ``scale``."""

    k: int = 10
    scale: tuple | None = None

    def fit(self, X, y):
        from scipy.spatial import cKDTree

        X = np.asarray(X, float)
        scale = np.ones(X.shape[1]) if self.scale is None else np.asarray(self.scale, float)
        tree = cKDTree(X / scale)
        y = np.asarray(y, float)
        k = min(self.k, len(y))

        def predict(Z):
            d, idx = tree.query(np.asarray(Z, float) / scale, k=k)
            if k == 1:
                d, idx = d[:, None], idx[:, None]
            w = 1.0 / (d + 1e-9)
            return np.sum(w * y[idx], axis=1) / np.sum(w, axis=1)

        return predict


@dataclass
class TabularAverageSpec:
    """Exact averaging per discrete input row; FQI with it is value iteration on the sample MDP."""

    def fit(self, X, y):
        X = np.asarray(X)
        keys, inv = np.unique(X, axis=0, return_inverse=True)
        inv = inv.ravel()
        means = np.bincount(inv, weights=y) / np.bincount(inv)
        lookup = {tuple(k): m for k, m in zip(keys.tolist(), means)}

        def predict(Z):
            return np.array([lookup.get(tuple(z), 0.0) for z in np.asarray(Z).tolist()])

        return predict


def fqi_fit(X, R, Xnext, done, actions, gamma, iterations, regressor, callback=None):
    """Fitted Q-iteration.  ``X`` rows are (state..., action); returns the last predictor.

    ``callback(n, q)`` is invoked after fitting ``Q_n`` for ``n = 0..iterations``.
    """
    X = np.asarray(X, float)
    R = np.asarray(R, float)
    Xnext = np.asarray(Xnext, float)
    notdone = ~np.asarray(done, bool)
    actions = np.asarray(actions, float)
    if len(X) == 0:
        raise ValueError("empty transition set")
    try:
        q = regressor.fit(X, R)
    except Exception as exc:  # noqa: BLE001 - regressor back-ends raise anything
        raise RegressorError(f"regressor failed: {exc}") from exc
    if callback:
        callback(0, q)
    nn = len(Xnext)
    for n in range(1, iterations + 1):
        if gamma == 0.0:
            target = R
        else:
            batch = np.vstack([np.column_stack([Xnext, np.full(nn, a)]) for a in actions])
            qn = q(batch).reshape(len(actions), nn).max(axis=0)
            if not np.all(np.isfinite(qn)):
                raise RegressorError(f"non-finite Q values at iteration {n}")
            target = R + gamma * notdone * qn
        try:
            q = regressor.fit(X, target)
        except Exception as exc:  # noqa: BLE001
            raise RegressorError(f"regressor failed at iteration {n}: {exc}") from exc
        if callback:
            callback(n, q)
    return q


def greedy_from_q(q, actions):
    """Deterministic batch policy ``S -> argmax_a q(s, a)`` (first maximiser on ties)."""
    actions = np.asarray(actions, float)

    def policy(S):
        S = np.atleast_2d(np.asarray(S, float))
        vals = np.column_stack([q(np.column_stack([S, np.full(len(S), a)])) for a in actions])
        return actions[np.argmax(vals, axis=1)]

    return policy


def car_transitions(env: CarOnHillEnv, n, seed, actions=None, episode_len=None):
    """Uniform-random exploration transitions ``(X, Xnext, done)``.

    Starts are uniform over the state box; with ``episode_len`` the random
    walk continues from each start for that many steps (or until exit).
    """
    rng = np.random.default_rng(seed)
    lo, hi = env.state_low, env.state_high
    if episode_len is None:
        S = rng.uniform(lo, hi, (n, 2))
        A = rng.choice(actions, n) if actions is not None else rng.uniform(*env.a_bounds, n)
        P2, V2, _, done = car_step_batch(env, S[:, 0], S[:, 1], A)
        return np.column_stack([S, A]), np.column_stack([P2, V2]), done
    X, Xn, D = [], [], []
    n_ep = int(math.ceil(n / episode_len))
    S = rng.uniform(lo, hi, (n_ep, 2))
    alive = np.ones(n_ep, bool)
    for _ in range(episode_len):
        A = rng.choice(actions, n_ep) if actions is not None else rng.uniform(*env.a_bounds, n_ep)
        P2, V2, _, done = car_step_batch(env, S[:, 0], S[:, 1], A)
        X.append(np.column_stack([S, A])[alive])
        Xn.append(np.column_stack([P2, V2])[alive])
        D.append(done[alive])
        alive &= ~done
        S = np.column_stack([P2, V2])
    X, Xn, D = np.vstack(X), np.vstack(Xn), np.concatenate(D)
    return X[:n], Xn[:n], D[:n]


@dataclass
class FqiConfig:
    iterations: int = 50
    n_actions: int = 11
    n_transitions: int = 10000
    regressor: str = "extra_trees"
    n_estimators: int = 50
    min_samples_leaf: int = 2
    knn_k: int = 10
    horizon: int = 100
    seed: int = 0


def make_regressor(cfg: FqiConfig, env: CarOnHillEnv | None = None):
    if cfg.regressor == "extra_trees":
        return ExtraTreesRegressorSpec(cfg.n_estimators, cfg.min_samples_leaf, cfg.seed)
    if cfg.regressor == "knn":
        scale = None
        if env is not None:
            scale = (env.p_bounds[1] - env.p_bounds[0], env.v_bounds[1] - env.v_bounds[0],
                     env.a_bounds[1] - env.a_bounds[0])
        return KnnRegressorSpec(cfg.knn_k, scale)
    raise ValueError(f"unknown regressor {cfg.regressor!r}")


def fqi_train(env: CarOnHillEnv, transitions, reward, cfg: FqiConfig | None = None, evaluate=True):
    """FQI on ``reward(S, A, Snext) -> r`` (batched) over a fixed transition set.

    Returns ``(q, policy, curve)`` where ``curve[n]`` is the default-reward
    discounted return of the greedy policy after ``n`` iterations, started
    from the environment's initial state.
    """
    cfg = cfg or FqiConfig()
    X, Xn, done = transitions
    R = np.asarray(reward(X[:, :2], X[:, 2], Xn), float)
    actions = np.linspace(env.a_bounds[0], env.a_bounds[1], cfg.n_actions)
    curve = []

    def cb(n, q):
        if evaluate:
            ret, _ = car_rollout(env, greedy_from_q(q, actions), cfg.horizon)
            curve.append(ret)

    q = fqi_fit(X, R, Xn, done, actions, env.gamma, cfg.iterations, make_regressor(cfg, env), cb)
    return q, greedy_from_q(q, actions), np.array(curve)


# ---------------------------------------------------------------------------
# evaluation


def car_rollout(env: CarOnHillEnv, policy, horizon=100, start=None):
    """Roll a batch policy from ``start``; returns (discounted default return, states)."""
    s = np.asarray(env.start if start is None else start, float)
    states = [s.copy()]
    ret, disc = 0.0, 1.0
    for _ in range(horizon):
        a = float(np.asarray(policy(s[None, :])).ravel()[0])
        P, V, r, done = car_step_batch(env, [s[0]], [s[1]], [a])
        s = np.array([P[0], V[0]])
        states.append(s.copy())
        ret += disc * float(r[0])
        disc *= env.gamma
        if done[0]:
            break
    return ret, np.array(states)


def car_success(states) -> bool:
    p, v = states[-1]
    return bool(p > 1.0 and abs(v) <= 3.0)


def evaluate_policy(env, policy, n_episodes: int, seed: int, horizon: int = 1000):
    """Mean and standard error of default-reward discounted returns.

    ``policy`` is either a callable ``s -> a`` (deterministic) or an object
    with ``sample(s, rng)``.  Episodes use independent streams from ``seed``.
    """
    rets = []
    for i in range(n_episodes):
        rng = np.random.default_rng([seed, i])
        s = env.reset(rng)
        ret, disc = 0.0, 1.0
        for _ in range(horizon):
            a = policy.sample(s, rng) if hasattr(policy, "sample") else policy(s)
            s, r, done = env.step(s, a, rng)
            ret += disc * r
            disc *= env.gamma
            if done:
                break
        rets.append(ret)
    rets = np.asarray(rets)
    se = float(rets.std(ddof=1) / np.sqrt(len(rets))) if len(rets) > 1 else 0.0
    return float(rets.mean()), se
