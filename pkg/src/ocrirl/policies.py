"""Parametrized intra-option policies and termination functions.

Every family exposes closed-form probabilities, log-gradients and
log-Hessians.  Gradients are returned as dense vectors over the family's own
parameters; ``score_block``/``hessian_block`` give the sparse form
``(indices, values)`` used when assembling large constraint matrices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .mdp import as_array


class DomainError(ValueError):
    pass


class SaturationError(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# feature maps


@dataclass(frozen=True)
class OneHotFeatures:
    n: int

    @property
    def dim(self) -> int:
        return self.n

    def __call__(self, s) -> np.ndarray:
        s = int(s)
        if not 0 <= s < self.n:
            raise DomainError(f"state {s} outside [0, {self.n})")
        f = np.zeros(self.n)
        f[s] = 1.0
        return f


@dataclass(frozen=True)
class RbfFeatures:
    """Gaussian bumps ``exp(-delta * |(s - c_k) / scale|^2)`` on a grid of centers.

    Distances are measured after dividing by ``scale`` so one bandwidth fits
    boxes whose sides differ in length.
    """

    centers: np.ndarray
    delta: float
    scale: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.centers)

    def __call__(self, s) -> np.ndarray:
        x = as_array(s) / self.scale
        d2 = np.sum((self.centers / self.scale - x) ** 2, axis=1)
        return np.exp(-self.delta * d2)

    def batch(self, S) -> np.ndarray:
        S = np.asarray(S, float) / self.scale
        C = self.centers / self.scale
        d2 = np.sum(S ** 2, 1)[:, None] - 2 * S @ C.T + np.sum(C ** 2, 1)[None, :]
        return np.exp(-self.delta * np.maximum(d2, 0.0))


def rbf_grid(low, high, n_per_dim=9, delta=None) -> RbfFeatures:
    """Uniform grid of centers over a box.

    With ``delta=None`` neighbouring centers overlap at ``exp(-1)``: distances
    are taken in units of the box width, so the spacing is ``1/(n-1)``.
    """
    low = np.asarray(low, float)
    high = np.asarray(high, float)
    axes = [np.linspace(lo, hi, n_per_dim) for lo, hi in zip(low, high)]
    centers = np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(low), -1).T
    if delta is None:
        delta = float((n_per_dim - 1) ** 2)
    return RbfFeatures(centers, float(delta), high - low)


# ---------------------------------------------------------------------------
# Boltzmann (softmax) tabular policy


@dataclass(frozen=True)
class BoltzmannTabularPolicy:
    theta: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        if self.theta.ndim != 2:
            raise ValueError("theta must be [n_states, n_actions]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    family = "boltzmann_tabular"

    @property
    def n_states(self) -> int:
        return self.theta.shape[0]

    @property
    def n_actions(self) -> int:
        return self.theta.shape[1]

    @property
    def n_params(self) -> int:
        return self.theta.size

    def _check(self, s, a=None):
        if not (isinstance(s, (int, np.integer)) and 0 <= s < self.n_states):
            raise DomainError(f"state {s!r} outside [0, {self.n_states})")
        if a is not None and not (isinstance(a, (int, np.integer)) and 0 <= a < self.n_actions):
            raise DomainError(f"action {a!r} outside [0, {self.n_actions})")

    def probs(self, s) -> np.ndarray:
        self._check(s)
        z = self.theta[s] / self.temperature
        return np.exp(z - logsumexp(z))

    def prob(self, s, a) -> float:
        self._check(s, a)
        return float(self.probs(s)[a])

    def log_prob(self, s, a) -> float:
        self._check(s, a)
        z = self.theta[s] / self.temperature
        return float(z[a] - logsumexp(z))

    def sample(self, s, rng) -> int:
        return int(rng.choice(self.n_actions, p=self.probs(s)))

    def score_block(self, s, a):
        pi = self.probs(s)
        self._check(s, a)
        g = -pi / self.temperature
        g[a] += 1.0 / self.temperature
        idx = s * self.n_actions + np.arange(self.n_actions)
        return idx, g

    def hessian_block(self, s, a):
        pi = self.probs(s)
        H = -(np.diag(pi) - np.outer(pi, pi)) / self.temperature ** 2
        idx = s * self.n_actions + np.arange(self.n_actions)
        return idx, H

    def log_grad(self, s, a) -> np.ndarray:
        idx, g = self.score_block(s, a)
        out = np.zeros(self.n_params)
        out[idx] = g
        return out

    def log_hessian(self, s, a) -> np.ndarray:
        self._check(s, a)
        idx, H = self.hessian_block(s, a)
        out = np.zeros((self.n_params, self.n_params))
        out[np.ix_(idx, idx)] = H
        return out

    def with_params(self, flat) -> "BoltzmannTabularPolicy":
        return BoltzmannTabularPolicy(np.asarray(flat, float).reshape(self.theta.shape), self.temperature)

    @property
    def params(self) -> np.ndarray:
        return self.theta.ravel()


# ---------------------------------------------------------------------------
# Gaussian policy with RBF mean


@dataclass(frozen=True)
class GaussianRbfPolicy:
    theta: np.ndarray
    features: RbfFeatures
    sigma2: float = 0.01
    action_low: float = -np.inf
    action_high: float = np.inf

    family = "gaussian_rbf"

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float).ravel())
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.theta.shape != (self.features.dim,):
            raise ValueError("theta length must equal the number of RBF centers")

    @property
    def n_params(self) -> int:
        return self.theta.size

    def _action(self, a) -> float:
        a = float(np.asarray(a, float).ravel()[0])
        if not self.action_low <= a <= self.action_high:
            raise DomainError(f"action {a} outside [{self.action_low}, {self.action_high}]")
        return a

    def mean(self, s) -> float:
        return float(self.features(s) @ self.theta)

    def mean_batch(self, S) -> np.ndarray:
        return self.features.batch(S) @ self.theta

    def prob(self, s, a) -> float:
        r = self._action(a) - self.mean(s)
        return float(np.exp(-0.5 * r * r / self.sigma2) / np.sqrt(2 * np.pi * self.sigma2))

    def log_prob(self, s, a) -> float:
        r = self._action(a) - self.mean(s)
        return float(-0.5 * r * r / self.sigma2 - 0.5 * np.log(2 * np.pi * self.sigma2))

    def sample(self, s, rng) -> tuple:
        a = self.mean(s) + np.sqrt(self.sigma2) * rng.standard_normal()
        return (float(np.clip(a, self.action_low, self.action_high)),)

    def score_block(self, s, a):
        phi = self.features(s)
        r = self._action(a) - phi @ self.theta
        return np.arange(self.n_params), (r / self.sigma2) * phi

    def hessian_block(self, s, a):
        phi = self.features(s)
        return np.arange(self.n_params), -np.outer(phi, phi) / self.sigma2

    def log_grad(self, s, a) -> np.ndarray:
        return self.score_block(s, a)[1]

    def log_hessian(self, s, a) -> np.ndarray:
        self._action(a)
        return self.hessian_block(s, a)[1]

    def with_params(self, flat) -> "GaussianRbfPolicy":
        return GaussianRbfPolicy(np.asarray(flat, float), self.features, self.sigma2,
                                 self.action_low, self.action_high)

    @property
    def params(self) -> np.ndarray:
        return self.theta


# ---------------------------------------------------------------------------
# sigmoid termination


@dataclass(frozen=True)
class SigmoidTermination:
    vartheta: np.ndarray
    features: object
    eps: float = 1e-12

    family = "sigmoid"

    def __post_init__(self):
        object.__setattr__(self, "vartheta", np.asarray(self.vartheta, dtype=float).ravel())
        if self.vartheta.shape != (self.features.dim,):
            raise ValueError("vartheta length must equal the feature dimension")

    @property
    def n_params(self) -> int:
        return self.vartheta.size

    def prob(self, s) -> float:
        return float(expit(self.features(s) @ self.vartheta))

    def grad(self, s) -> np.ndarray:
        f = self.features(s)
        b = expit(f @ self.vartheta)
        return b * (1.0 - b) * f

    def sample(self, s, rng) -> bool:
        return bool(rng.random() < self.prob(s))

    def log_grad_hessian(self, s, b: bool):
        """Gradient and Hessian of ``log P(b | s)`` with respect to vartheta."""
        f = self.features(s)
        beta = float(expit(f @ self.vartheta))
        if beta < self.eps or 1.0 - beta < self.eps:
            raise SaturationError(f"termination saturated (beta={beta}) at state {s!r}")
        g = (1.0 - beta) * f if b else -beta * f
        H = -beta * (1.0 - beta) * np.outer(f, f)
        return g, H

    def with_params(self, flat) -> "SigmoidTermination":
        return SigmoidTermination(np.asarray(flat, float), self.features, self.eps)

    @property
    def params(self) -> np.ndarray:
        return self.vartheta


# ---------------------------------------------------------------------------
# demo-time (non-differentiable) families


@dataclass(frozen=True)
class GridTablePolicy:
    """Deterministic action table on a regular state grid (nearest-cell lookup)."""

    table: np.ndarray
    low: np.ndarray
    high: np.ndarray

    family = "grid_table"

    def action(self, s) -> float:
        x = as_array(s)
        n = np.asarray(self.table.shape)
        frac = (x - self.low) / (self.high - self.low)
        idx = np.clip(np.rint(frac * (n - 1)).astype(int), 0, n - 1)
        return float(self.table[tuple(idx)])

    def sample(self, s, rng) -> tuple:
        return (self.action(s),)


@dataclass(frozen=True)
class EpsilonMixture:
    """``(1 - eps) * base + eps * uniform`` over a box (continuous) or action set."""

    base: object
    epsilon: float
    low: float | None = None
    high: float | None = None
    n_actions: int | None = None

    def sample(self, s, rng):
        if rng.random() < self.epsilon:
            if self.n_actions is not None:
                return int(rng.integers(self.n_actions))
            return (float(rng.uniform(self.low, self.high)),)
        return self.base.sample(s, rng)


@dataclass(frozen=True)
class HardTermination:
    """Terminates with probability 1 exactly where ``predicate(s)`` holds."""

    predicate: object

    def prob(self, s) -> float:
        return 1.0 if self.predicate(s) else 0.0

    def sample(self, s, rng) -> bool:
        return bool(self.predicate(s))


# ---------------------------------------------------------------------------
# parameter CSV


def save_params(path, obj) -> None:
    """Flat CSV: a ``#``-prefixed header line, then one value per row."""
    if isinstance(obj, BoltzmannTabularPolicy):
        head = f"family=boltzmann_tabular;shape={obj.theta.shape[0]}x{obj.theta.shape[1]};temperature={obj.temperature!r}"
    elif isinstance(obj, GaussianRbfPolicy):
        head = "family=gaussian_rbf;" + _rbf_header(obj.features) + \
            f";sigma2={obj.sigma2!r};action_low={obj.action_low!r};action_high={obj.action_high!r}"
    elif isinstance(obj, SigmoidTermination):
        if isinstance(obj.features, OneHotFeatures):
            head = f"family=sigmoid;features=onehot;n={obj.features.n}"
        else:
            head = "family=sigmoid;features=rbf;" + _rbf_header(obj.features)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("#" + head + "\n")
        fh.write("value\n")
        for v in obj.params:
            fh.write(f"{float(v):.17g}\n")


def _rbf_header(f: RbfFeatures) -> str:
    lo = f.centers.min(axis=0)
    hi = f.centers.max(axis=0)
    n = round(len(f.centers) ** (1.0 / f.centers.shape[1]))
    return (f"n_per_dim={n};dim={f.centers.shape[1]};delta={f.delta!r};"
            f"low={','.join(repr(float(x)) for x in lo)};high={','.join(repr(float(x)) for x in hi)}")


def load_params(path):
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().strip()
        if not head.startswith("#"):
            raise ValueError(f"{path}: missing parameter header")
        meta = dict(kv.split("=", 1) for kv in head[1:].split(";"))
        if fh.readline().strip() != "value":
            raise ValueError(f"{path}: missing 'value' column")
        vals = np.array([float(line) for line in fh if line.strip()])
    fam = meta["family"]
    if fam == "boltzmann_tabular":
        ns, na = (int(x) for x in meta["shape"].split("x"))
        return BoltzmannTabularPolicy(vals.reshape(ns, na), float(meta["temperature"]))
    if fam == "gaussian_rbf":
        return GaussianRbfPolicy(vals, _rbf_from(meta), float(meta["sigma2"]),
                                 float(meta["action_low"]), float(meta["action_high"]))
    if fam == "sigmoid":
        feats = OneHotFeatures(int(meta["n"])) if meta["features"] == "onehot" else _rbf_from(meta)
        return SigmoidTermination(vals, feats)
    raise ValueError(f"{path}: unknown family {fam!r}")


def _rbf_from(meta) -> RbfFeatures:
    lo = [float(x) for x in meta["low"].split(",")]
    hi = [float(x) for x in meta["high"].split(",")]
    return rbf_grid(lo, hi, int(meta["n_per_dim"]), float(meta["delta"]))
