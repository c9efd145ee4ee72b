"""Extending recovered rewards off the visited triples and merging option-wise rewards."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import as_array


class ExtendError(ValueError):
    pass


@dataclass
class KnnRewardModel:
    """Gaussian-kernel k-NN regression over state-action pairs.

    ``states`` is ``[n, ds]``, ``actions`` is ``[n, da]``.  Support order is
    significant: distance ties go to the earlier support point.
    """

    states: np.ndarray
    actions: np.ndarray
    values: np.ndarray
    k: int = 5
    sigma_s: float = 1.0
    sigma_a: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, float).ravel()
        if len(self.values) == 0:
            raise ExtendError("empty support")
        self.states = np.atleast_2d(np.asarray(self.states, float))
        self.actions = np.asarray(self.actions, float).reshape(len(self.states), -1)
        if len(self.values) != len(self.states):
            raise ExtendError("support states and values differ in length")
        if not 1 <= self.k <= len(self.values):
            raise ExtendError(f"k={self.k} outside [1, {len(self.values)}]")
        if self.sigma_s <= 0 or self.sigma_a <= 0:
            raise ExtendError("kernel bandwidths must be positive")

    @property
    def size(self) -> int:
        return len(self.values)

    def sq_dist(self, S, A) -> np.ndarray:
        """Kernel exponent ``|s-s'|^2 / 2 sigma_s^2 + |a-a'|^2 / 2 sigma_a^2`` for every support point."""
        S = np.atleast_2d(np.asarray(S, float))
        A = np.asarray(A, float).reshape(len(S), -1)
        ds = ((S[:, None, :] - self.states[None]) ** 2).sum(-1) / (2 * self.sigma_s ** 2)
        da = ((A[:, None, :] - self.actions[None]) ** 2).sum(-1) / (2 * self.sigma_a ** 2)
        return ds + da

    def predict(self, S, A, chunk=2048) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, float))
        A = np.asarray(A, float).reshape(len(S), -1)
        if not (np.all(np.isfinite(S)) and np.all(np.isfinite(A))):
            raise ExtendError("non-finite query")
        out = np.empty(len(S))
        for i in range(0, len(S), chunk):
            d = self.sq_dist(S[i:i + chunk], A[i:i + chunk])
            idx = np.argsort(d, axis=1, kind="stable")[:, :self.k]
            dk = np.take_along_axis(d, idx, axis=1)
            # shift by the nearest distance so far-away queries do not underflow
            w = np.exp(-(dk - dk[:, :1]))
            out[i:i + chunk] = (w * self.values[idx]).sum(1) / w.sum(1)
        return out

    def __call__(self, s, a) -> float:
        return float(self.predict([as_array(s)], [as_array(a)])[0])


def knn_extend(model: KnnRewardModel, s, a) -> float:
    return model(s, a)


def default_bandwidths(state_low, state_high, action_low, action_high, frac=0.1):
    diag = float(np.linalg.norm(np.asarray(state_high, float) - np.asarray(state_low, float)))
    arange = float(np.linalg.norm(np.asarray(action_high, float) - np.asarray(action_low, float)))
    return frac * diag, frac * arange


def knn_models_from_recovery(reward, n_options, k=5, sigma_s=1.0, sigma_a=1.0) -> dict:
    """One KNN model per option built from a recovered reward's visited support."""
    models = {}
    for w in range(n_options):
        S, A, v = reward.per_option_support(w)
        if len(v) == 0:
            continue
        models[w] = KnnRewardModel(np.array([as_array(s) for s in S]), np.array([as_array(a) for a in A]),
                                   v, min(k, len(v)), sigma_s, sigma_a)
    return models


# ---------------------------------------------------------------------------
# merging and blending


def merge_option_rewards(per_option: dict, opts):
    """Flat reward ``r(s, a) = sum_w pi_Omega(w|s) r_w(s, a)``.

    Options with zero probability at ``s`` are skipped, so a deterministic
    policy-over-options reduces to the selected option's reward.
    """
    pi_omega = opts.policy_over_options

    def reward(s, a):
        p = pi_omega.probs(s)
        tot = 0.0
        for w, pw in enumerate(p):
            if pw == 0:
                continue
            if w not in per_option:
                raise ExtendError(f"option {w} has probability {pw:g} at {s} but no reward")
            tot += pw * per_option[w](s, a)
        return tot

    return reward


def merge_tabular(R_opt: np.ndarray, pi_omega: np.ndarray) -> np.ndarray:
    """``R[s, a] = sum_w pi_Omega[s, w] R_opt[w, s, a]`` for tabular rewards."""
    return np.einsum("sw,wsa->sa", np.asarray(pi_omega, float), np.asarray(R_opt, float))


def merge_batch(models: dict, select, S, A) -> np.ndarray:
    """Batched deterministic merge: ``select(s)`` names the option whose KNN model scores ``(s, a)``."""
    S = np.atleast_2d(np.asarray(S, float))
    A = np.asarray(A, float).reshape(len(S), -1)
    sel = np.array([select(s) for s in S], dtype=int)
    out = np.zeros(len(S))
    for w in np.unique(sel):
        if w not in models:
            raise ExtendError(f"option {w} selected but has no reward model")
        m = sel == w
        out[m] = models[w].predict(S[m], A[m])
    return out


def blend_transfer_reward(r_default, r_recovered, alpha: float):
    """Pointwise ``(1 - alpha) r_default + alpha r_recovered``; arrays or callables."""
    if not 0.0 <= alpha <= 1.0:
        raise ExtendError(f"alpha={alpha} outside [0, 1]")
    if callable(r_default) or callable(r_recovered):
        def reward(*args):
            d = r_default(*args) if callable(r_default) else r_default
            r = r_recovered(*args) if callable(r_recovered) else r_recovered
            return (1.0 - alpha) * d + alpha * r
        return reward
    return (1.0 - alpha) * np.asarray(r_default, float) + alpha * np.asarray(r_recovered, float)


# ---------------------------------------------------------------------------
# serialization


def save_knn(path, model: KnnRewardModel) -> None:
    ds, da = model.states.shape[1], model.actions.shape[1]
    with open(path, "w") as f:
        f.write(f"# k={model.k};sigma_s={model.sigma_s!r};sigma_a={model.sigma_a!r}\n")
        f.write(",".join([f"s{i}" for i in range(ds)] + [f"a{i}" for i in range(da)] + ["value"]) + "\n")
        for s, a, v in zip(model.states, model.actions, model.values):
            f.write(",".join(repr(float(x)) for x in [*s, *a, v]) + "\n")


def load_knn(path) -> KnnRewardModel:
    with open(path) as f:
        head = f.readline()
        if not head.startswith("#"):
            raise ExtendError(f"{path}: missing hyperparameter header")
        meta = dict(kv.split("=", 1) for kv in head[1:].strip().split(";"))
        cols = f.readline().strip().split(",")
        rows = [line.strip().split(",") for line in f if line.strip()]
    try:
        data = np.array(rows, float).reshape(-1, len(cols))
        ds = sum(c.startswith("s") for c in cols)
        return KnnRewardModel(data[:, :ds], data[:, ds:-1], data[:, -1], int(meta["k"]),
                              float(meta["sigma_s"]), float(meta["sigma_a"]))
    except (KeyError, ValueError) as exc:
        raise ExtendError(f"{path}: malformed KNN model ({exc})") from exc
