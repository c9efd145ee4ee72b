"""End-to-end pipelines shared by the CLI and the acceptance suite."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .envs import CarOnHillEnv, FourRoomsEnv, car_reward_batch, make_transfer_goal
from .experts import (CarOptionConfig, FitConfig, OptionCriticConfig, car_expert_options, car_option_select,
                      fit_expert_params, fqi_suboption_train, option_critic_train, rollout_expert)
from .extend import blend_transfer_reward, default_bandwidths, knn_models_from_recovery, merge_batch, merge_tabular
from .irl import Recovery
from .learners import FqiConfig, SarsaConfig, car_rollout, car_success, car_transitions, fqi_train, sarsa_train


def fan_out(fn, args_list, jobs=1) -> list:
    """Map ``fn`` over ``args_list``; results come back in input order."""
    if jobs <= 1 or len(args_list) <= 1:
        return [fn(*a) for a in args_list]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*args_list)))


def checkpoint_means(curves, checkpoints, window=100) -> np.ndarray:
    """Mean over runs of the ``window``-episode average ending at each checkpoint."""
    curves = np.atleast_2d(curves)
    return np.array([curves[:, c - window:c].mean() for c in checkpoints])


def mean_stderr(curves):
    curves = np.atleast_2d(np.asarray(curves, float))
    n = curves.shape[0]
    se = curves.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(curves.shape[1])
    return curves.mean(axis=0), se


# ---------------------------------------------------------------------------
# FourRooms


class TabularReward:
    """``r(s, a, s_next) = R[s, a]`` as a picklable callable."""

    def __init__(self, R):
        self.R = np.asarray(R, float)

    def __call__(self, s, a, s_next):
        return float(self.R[s, a])


class DefaultFourRoomsReward:
    def __init__(self, goal):
        self.goal = goal

    def __call__(self, s, a, s_next):
        return 0.0 if s_next == self.goal else -1.0


@dataclass
class FourRoomsExpert:
    env: FourRoomsEnv
    opts: object
    demos: list


def fourrooms_expert(oc_cfg: OptionCriticConfig, n_demos=50, horizon=500, seed=0, env=None) -> FourRoomsExpert:
    env = env or FourRoomsEnv()
    opts = option_critic_train(env, oc_cfg)
    demos = rollout_expert(env, opts, 0.0, n_demos, seed, horizon)
    return FourRoomsExpert(env, opts, demos)


def fourrooms_flat_reward(rec: Recovery, opts, env: FourRoomsEnv, fill="mean") -> np.ndarray:
    """Merged tabular reward ``R[s, a]`` weighted by the policy over options."""
    R_opt = rec.reward.tabular(env.n_states, env.n_actions, opts.n_options, fill)
    return merge_tabular(R_opt, opts.policy_over_options.table)


def _sarsa_run(env, reward, cfg):
    return sarsa_train(env, reward, cfg)[1]


def sarsa_repetitions(env, reward, cfg: SarsaConfig, reps: int, seed: int, jobs=1) -> np.ndarray:
    """Curves ``[reps, episodes]``; repetition ``i`` uses seed ``seed + i``."""
    args = []
    for i in range(reps):
        c = SarsaConfig(**{**cfg.__dict__, "seed": seed + i})
        args.append((env, reward, c))
    return np.array(fan_out(_sarsa_run, args, jobs))


def _transfer_run(env, R_rec, alpha, cfg, rep_seed):
    env_t = make_transfer_goal(env, np.random.default_rng([rep_seed, 7919]))
    reward = blend_transfer_reward(DefaultFourRoomsReward(env_t.goal), TabularReward(R_rec), alpha)
    return sarsa_train(env_t, reward, cfg)[1]


def transfer_repetitions(env, R_rec, alpha, cfg: SarsaConfig, reps: int, seed: int, jobs=1) -> np.ndarray:
    """Random-goal transfer curves; repetition ``i`` draws its goal from ``(seed + i)``."""
    args = []
    for i in range(reps):
        c = SarsaConfig(**{**cfg.__dict__, "seed": seed + i})
        args.append((env, R_rec, alpha, c, seed + i))
    return np.array(fan_out(_transfer_run, args, jobs))


# ---------------------------------------------------------------------------
# Car on the hill


class CarRecoveredReward:
    """Batched merged reward: KNN-extended reward of the option ``pi_Omega`` selects."""

    def __init__(self, models, option_cfg: CarOptionConfig):
        self.models = models
        self.option_cfg = option_cfg

    def __call__(self, S, A, S_next):
        return merge_batch(self.models, car_option_select(self.option_cfg), S, A)


def car_default_reward(S, A, S_next):
    S_next = np.atleast_2d(S_next)
    return car_reward_batch(S_next[:, 0], S_next[:, 1])


@dataclass
class CarExpert:
    env: CarOnHillEnv
    demo_opts: object
    option_cfg: CarOptionConfig
    policies: list = field(default_factory=list)


def car_expert(option_cfg: CarOptionConfig | None = None, env=None, policies=None) -> CarExpert:
    env = env or CarOnHillEnv()
    option_cfg = option_cfg or CarOptionConfig()
    if policies is None:
        policies = [fqi_suboption_train(env, 1, option_cfg), fqi_suboption_train(env, 2, option_cfg)]
    return CarExpert(env, car_expert_options(env, option_cfg, policies), option_cfg, policies)


def car_demos(expert: CarExpert, epsilon, n_demos=20, seed=0, horizon=100):
    return rollout_expert(expert.env, expert.demo_opts, epsilon, n_demos, seed, horizon)


def car_fit(demos, expert: CarExpert, fit_cfg: FitConfig | None = None):
    from .mdp import DeterministicOptionPolicy

    pi = DeterministicOptionPolicy(car_option_select(expert.option_cfg), 2)
    return fit_expert_params(demos, expert.env, fit_cfg, 2, pi)


def car_recovered_reward(rec: Recovery, expert: CarExpert, k=5, sigma_s=None, sigma_a=None) -> CarRecoveredReward:
    env = expert.env
    ds, da = default_bandwidths(env.state_low, env.state_high, [env.a_bounds[0]], [env.a_bounds[1]])
    models = knn_models_from_recovery(rec.reward, 2, k, sigma_s or ds, sigma_a or da)
    return CarRecoveredReward(models, expert.option_cfg)


def _fqi_run(env, reward, cfg: FqiConfig):
    tr = car_transitions(env, cfg.n_transitions, cfg.seed, np.linspace(*env.a_bounds, cfg.n_actions))
    q, policy, curve = fqi_train(env, tr, reward, cfg)
    _, states = car_rollout(env, policy, cfg.horizon)
    return curve, states


def fqi_repetitions(env, reward, cfg: FqiConfig, reps: int, seed: int, jobs=1):
    """FQI curves ``[reps, iterations + 1]`` and final greedy rollouts; transitions seeded per repetition."""
    args = [(env, reward, FqiConfig(**{**cfg.__dict__, "seed": seed + i})) for i in range(reps)]
    out = fan_out(_fqi_run, args, jobs)
    return np.array([o[0] for o in out]), [o[1] for o in out]


def first_positive(curve) -> int | None:
    """First iteration index whose value is strictly positive."""
    hits = np.flatnonzero(np.asarray(curve) > 0)
    return int(hits[0]) if hits.size else None


def policy_success_rate(env, policy, n_episodes, rng, horizon=100, sample=False):
    """Fraction of episodes reaching the goal, and their mean discounted default return.

    With ``sample`` the policy's ``sample(s, rng)`` is used, otherwise its
    deterministic batch call.
    """
    wins, rets = 0, []
    for _ in range(n_episodes):
        if sample:
            def act(S):
                return np.array([policy.sample(S[0], rng)[0]])
        else:
            act = policy
        ret, states = car_rollout(env, act, horizon)
        wins += car_success(states)
        rets.append(ret)
    return wins / n_episodes, float(np.mean(rets))
