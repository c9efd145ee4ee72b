"""Expert option sets and demonstrations for both domains, plus behavioral cloning."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, softmax

from .envs import CarOnHillEnv, FourRoomsEnv, car_step_batch
from .mdp import (Box, DeterministicOptionPolicy, Discrete, OptionSet, OptionSpec,
                  TabularOptionPolicy, Trajectory, as_array, make_trajectory)
from .policies import (BoltzmannTabularPolicy, EpsilonMixture, GaussianRbfPolicy,
                       GridTablePolicy, HardTermination, OneHotFeatures, SigmoidTermination,
                       rbf_grid)


class ConvergenceError(RuntimeError):
    def __init__(self, msg, curve=None):
        super().__init__(msg)
        self.curve = curve


class FitError(ValueError):
    pass


@dataclass
class ExpertConfig:
    n_options: int = 4
    n_demos: int = 50
    epsilon: float = 0.0
    seed: int = 0
    horizon: int = 500

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.n_options < 1 or self.n_demos < 1 or self.horizon < 1:
            raise ValueError("counts must be positive")


# ---------------------------------------------------------------------------
# option-critic (tabular)


@dataclass
class OptionCriticConfig:
    n_options: int = 4
    episodes: int = 1500
    max_steps: int = 1000
    lr_critic: float = 0.5
    lr_intra: float = 0.25
    lr_term: float = 0.25
    temperature: float = 3.0
    option_temperature: float = 0.1
    option_epsilon: float = 0.05
    deliberation_cost: float = 0.01
    min_return: float = -60.0
    seed: int = 0


def option_critic_train(env: FourRoomsEnv, cfg: OptionCriticConfig | None = None) -> OptionSet:
    """Learn options with the intra-option policy gradient and termination gradient.

    Critic: intra-option Q-learning of ``Q_Omega`` and ``Q_U``.  The
    returned policy-over-options is Boltzmann in ``Q_Omega``.
    """
    cfg = cfg or OptionCriticConfig()
    rng = np.random.default_rng(cfg.seed)
    S, A, O = env.n_states, env.n_actions, cfg.n_options
    theta = np.zeros((O, S, A))
    vartheta = np.zeros((O, S))
    q_omega = np.zeros((S, O))
    q_u = np.zeros((S, O, A))
    tau = cfg.temperature
    curve = []

    def pick_option(s):
        if rng.random() < cfg.option_epsilon:
            return int(rng.integers(O))
        q = q_omega[s]
        return int(rng.choice(np.flatnonzero(q == q.max())))

    for ep in range(cfg.episodes):
        s = env.reset(rng)
        w = pick_option(s)
        ret = 0.0
        for t in range(cfg.max_steps):
            pi = softmax(theta[w, s] / tau)
            a = int(rng.choice(A, p=pi))
            s2, r, done = env.step(s, a, rng)
            ret += r
            beta2 = expit(vartheta[w, s2])
            target = r
            if not done:
                target += env.gamma * ((1 - beta2) * q_omega[s2, w] + beta2 * q_omega[s2].max())
            q_u[s, w, a] += cfg.lr_critic * (target - q_u[s, w, a])
            q_omega[s, w] += cfg.lr_critic * (target - q_omega[s, w])

            # intra-option policy gradient with Q_Omega baseline
            adv = q_u[s, w, a] - q_omega[s, w]
            grad = -pi / tau
            grad[a] += 1.0 / tau
            theta[w, s] += cfg.lr_intra * grad * adv

            # termination gradient
            if not done:
                a_omega = q_omega[s2, w] - q_omega[s2].max() + cfg.deliberation_cost
                vartheta[w, s2] -= cfg.lr_term * beta2 * (1 - beta2) * a_omega
            if done:
                break
            if rng.random() < beta2:
                w = pick_option(s2)
            s = s2
        curve.append(ret)

    final = float(np.mean(curve[-100:]))
    if final < cfg.min_return:
        raise ConvergenceError(f"option-critic did not converge (mean return {final:.1f})", curve)

    options = []
    feats = OneHotFeatures(S)
    for w in range(O):
        options.append(OptionSpec(BoltzmannTabularPolicy(theta[w], tau),
                                  SigmoidTermination(vartheta[w], feats)))
    pi_omega = softmax(q_omega / cfg.option_temperature, axis=1)
    pi_omega = pi_omega / pi_omega.sum(axis=1, keepdims=True)
    return OptionSet(options, TabularOptionPolicy(pi_omega), Discrete(S), Discrete(A))


def greedy_steps_to_goal(env: FourRoomsEnv, opts: OptionSet, starts, rng, max_steps=500) -> np.ndarray:
    """Steps to goal under greedy options/actions with sampled terminations."""
    out = []
    for s0 in starts:
        s = int(s0)
        w = int(np.argmax(opts.policy_over_options.probs(s)))
        for t in range(1, max_steps + 1):
            a = int(np.argmax(opts.options[w].policy.probs(s)))
            s, _, done = env.step(s, a, rng)
            if done:
                break
            if rng.random() < opts.options[w].termination.prob(s):
                w = int(np.argmax(opts.policy_over_options.probs(s)))
        else:
            t = max_steps + 1
        out.append(t)
    return np.array(out)


def value_iteration_steps(env: FourRoomsEnv, tol=1e-10) -> np.ndarray:
    """Expected steps-to-goal of the optimal flat policy (exact model)."""
    P = env.transition_matrix()
    steps = np.zeros(env.n_states)
    while True:
        q = 1.0 + P @ steps
        q[env.goal] = 0.0
        new = q.min(axis=1)
        if np.max(np.abs(new - steps)) < tol:
            return new
        steps = new


# ---------------------------------------------------------------------------
# Car-on-the-Hill hand-crafted options


@dataclass
class CarOptionConfig:
    subgoal_p: float = -0.25
    subgoal_v: float = 1.8
    actions: tuple = (-4.0, 4.0)
    n_transitions: int = 20000
    iterations: int = 40
    grid: int = 101
    horizon: int = 100
    seed: int = 0
    n_estimators: int = 50
    min_samples_leaf: int = 2


def subgoal1_reached(s, cfg: CarOptionConfig) -> bool:
    return bool(s[0] >= cfg.subgoal_p and s[1] >= cfg.subgoal_v)


def car_option_select(cfg: CarOptionConfig):
    """Deterministic policy-over-options: option 1 once the subgoal-1 region is reached."""
    def select(s):
        return 1 if subgoal1_reached(s, cfg) else 0
    return select


def _sub_reward(env, cfg, subgoal, P, V):
    out = np.zeros(P.shape)
    fail = (P < env.p_bounds[0]) | (np.abs(V) > env.v_bounds[1])
    if subgoal == 1:
        win = (P >= cfg.subgoal_p) & (V >= cfg.subgoal_v) & ~fail
    else:
        win = (P > env.p_bounds[1]) & ~fail
    out[win] = 1.0
    out[fail] = -1.0
    return out, win | fail | (P > env.p_bounds[1])


def fqi_suboption_train(env: CarOnHillEnv, subgoal: int, cfg: CarOptionConfig | None = None) -> GridTablePolicy:
    """Deterministic sub-option policy from fitted Q-iteration on the subgoal MDP."""
    from .learners import ExtraTreesRegressorSpec, fqi_fit

    cfg = cfg or CarOptionConfig()
    if subgoal not in (1, 2):
        raise ValueError("subgoal must be 1 or 2")
    rng = np.random.default_rng(cfg.seed + 1000 * subgoal)
    n = cfg.n_transitions
    P = rng.uniform(*env.p_bounds, n)
    V = rng.uniform(*env.v_bounds, n)
    A = rng.choice(np.asarray(cfg.actions), n)
    P2, V2, _, _ = car_step_batch(env, P, V, A)
    R, done = _sub_reward(env, cfg, subgoal, P2, V2)
    X = np.column_stack([P, V, A])
    Xn = np.column_stack([P2, V2])
    q = fqi_fit(X, R, Xn, done, np.asarray(cfg.actions), env.gamma, cfg.iterations,
                ExtraTreesRegressorSpec(cfg.n_estimators, cfg.min_samples_leaf, cfg.seed))
    if q is None:
        raise ConvergenceError("FQI diverged")
    gp = np.linspace(*env.p_bounds, cfg.grid)
    gv = np.linspace(*env.v_bounds, cfg.grid)
    GP, GV = np.meshgrid(gp, gv, indexing="ij")
    S = np.column_stack([GP.ravel(), GV.ravel()])
    vals = np.column_stack([q(np.column_stack([S, np.full(len(S), a)])) for a in cfg.actions])
    if not np.all(np.isfinite(vals)):
        raise ConvergenceError("FQI produced non-finite values")
    table = np.asarray(cfg.actions)[np.argmax(vals, axis=1)].reshape(GP.shape)
    return GridTablePolicy(table, env.state_low, env.state_high)


def car_expert_options(env: CarOnHillEnv, cfg: CarOptionConfig | None = None, policies=None) -> OptionSet:
    """Hand-crafted two-option expert with hard terminations (demo-time form)."""
    cfg = cfg or CarOptionConfig()
    if policies is None:
        policies = [fqi_suboption_train(env, 1, cfg), fqi_suboption_train(env, 2, cfg)]
    opts = [
        OptionSpec(policies[0], HardTermination(lambda s: subgoal1_reached(s, cfg))),
        OptionSpec(policies[1], HardTermination(lambda s: False)),
    ]
    return OptionSet(opts, DeterministicOptionPolicy(car_option_select(cfg), 2),
                     Box(tuple(env.state_low), tuple(env.state_high)), Box((env.a_bounds[0],), (env.a_bounds[1],)))


# ---------------------------------------------------------------------------
# rollouts


def _mixed(policy, epsilon, env):
    if epsilon <= 0:
        return policy
    if isinstance(env, FourRoomsEnv):
        return EpsilonMixture(policy, epsilon, n_actions=env.n_actions)
    return EpsilonMixture(policy, epsilon, low=env.a_bounds[0], high=env.a_bounds[1])


def rollout_one(env, opts: OptionSet, epsilon: float, rng, horizon: int, episode_id=0, start=None) -> Trajectory:
    """Call-and-return execution of ``opts`` with epsilon-mixed intra-option policies."""
    pols = [_mixed(o.policy, epsilon, env) for o in opts.options]
    s = env.reset(rng) if start is None else start
    w = opts.policy_over_options.sample(s, rng)
    options, states, actions, terms = [], [], [], []
    b = True
    for t in range(horizon):
        a = pols[w].sample(s, rng)
        options.append(w)
        states.append(s)
        actions.append(a)
        terms.append(b)
        s2, _, done = env.step(s, a, rng)
        s = s2
        if done:
            break
        b = bool(opts.options[w].termination.sample(s, rng))
        if b:
            w = opts.policy_over_options.sample(s, rng)
    return make_trajectory(options, states, actions, terms, s, episode_id)


def rollout_expert(env, opts: OptionSet, epsilon: float, n: int, seed: int, horizon: int = 500) -> list[Trajectory]:
    """``n`` demonstrations; episode ``i`` uses its own stream derived from ``(seed, i)``."""
    return [rollout_one(env, opts, epsilon, np.random.default_rng([seed, i]), horizon, i) for i in range(n)]


# ---------------------------------------------------------------------------
# fitting parametrized experts


@dataclass
class FitConfig:
    n_per_dim: int = 9
    delta: float | None = None
    ridge: float = 1e-3
    logistic_l2: float = 1e-2
    sigma2: float = 0.01


def _ridge(Phi, y, ridge):
    G = Phi.T @ Phi + ridge * np.eye(Phi.shape[1])
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > 1e14:
        raise FitError(f"design matrix is singular (cond={cond:.3g}); use a larger ridge")
    return np.linalg.solve(G, Phi.T @ y)


def fit_gaussian_rbf(S, A, feats, ridge, sigma2=0.01, a_bounds=(-4.0, 4.0)) -> GaussianRbfPolicy:
    S = np.asarray(S, float)
    if len(S) == 0:
        raise FitError("no samples to fit")
    Phi = feats.batch(S)
    theta = _ridge(Phi, np.asarray(A, float).ravel(), ridge)
    return GaussianRbfPolicy(theta, feats, sigma2, a_bounds[0], a_bounds[1])


def fit_sigmoid(S, b, feats, l2) -> SigmoidTermination:
    """L2-regularised logistic regression of ``b`` on ``feats(S)`` (no intercept)."""
    X = feats.batch(np.asarray(S, float)) if hasattr(feats, "batch") else np.array([feats(s) for s in S])
    y = np.asarray(b, float)
    n = max(len(y), 1)

    def f(w):
        z = X @ w
        ll = np.sum(np.logaddexp(0, z) - y * z) / n + 0.5 * l2 * w @ w
        g = X.T @ (expit(z) - y) / n + l2 * w
        return ll, g

    res = minimize(f, np.zeros(X.shape[1]), jac=True, method="L-BFGS-B", options={"maxiter": 2000})
    return SigmoidTermination(res.x, feats)


def fit_expert_params(demos, env: CarOnHillEnv, cfg: FitConfig | None = None, n_options=2,
                      pi_omega=None) -> OptionSet:
    """Gaussian-RBF intra-option policies and sigmoid terminations fitted to demos."""
    cfg = cfg or FitConfig()
    feats = rbf_grid(env.state_low, env.state_high, cfg.n_per_dim, cfg.delta)
    by_opt_s = {w: [] for w in range(n_options)}
    by_opt_a = {w: [] for w in range(n_options)}
    term_s = {w: [] for w in range(n_options)}
    term_b = {w: [] for w in range(n_options)}
    for tr in demos:
        prev = None
        for t, st in enumerate(tr.steps):
            if t > 0:
                term_s[prev].append(st.state)
                term_b[prev].append(st.term)
            by_opt_s[st.option].append(st.state)
            by_opt_a[st.option].append(as_array(st.action)[0])
            prev = st.option
    options = []
    for w in range(n_options):
        if not by_opt_s[w]:
            raise FitError(f"no demonstrations cover option {w}")
        pol = fit_gaussian_rbf(by_opt_s[w], by_opt_a[w], feats, cfg.ridge, cfg.sigma2, env.a_bounds)
        if term_s[w]:
            term = fit_sigmoid(term_s[w], term_b[w], feats, cfg.logistic_l2)
        else:
            term = SigmoidTermination(np.zeros(feats.dim), feats)
        options.append(OptionSpec(pol, term))
    if pi_omega is None:
        pi_omega = DeterministicOptionPolicy(car_option_select(CarOptionConfig()), n_options)
    return OptionSet(options, pi_omega, Box(tuple(env.state_low), tuple(env.state_high)),
                     Box((env.a_bounds[0],), (env.a_bounds[1],)))


def bc_fit(demos, env: CarOnHillEnv, cfg: FitConfig | None = None) -> GaussianRbfPolicy:
    """Single flat Gaussian-RBF policy fitted to every (s, a) pair, options ignored."""
    cfg = cfg or FitConfig()
    if not demos:
        raise FitError("no demonstrations")
    feats = rbf_grid(env.state_low, env.state_high, cfg.n_per_dim, cfg.delta)
    S = [st.state for tr in demos for st in tr.steps]
    A = [as_array(st.action)[0] for tr in demos for st in tr.steps]
    return fit_gaussian_rbf(S, A, feats, cfg.ridge, cfg.sigma2, env.a_bounds)
