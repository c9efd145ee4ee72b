"""Option compatible reward IRL.

Phase 1 builds the space of Q-features under which both the intra-option
policy gradient and the termination gradient of the expert vanish.  Phase 2
turns Q-features into reward features by shaping with the option value upon
arrival.  Phase 3 keeps reward features whose trajectory-Hessians are
semi-definite and picks a unit weight vector from their traces.

Everything operates on the *visited* state-option-action triples of the
demonstrations, indexed by :class:`VisitIndex`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .mdp import Trajectory, point_key

log = logging.getLogger(__name__)

NEG_SEMIDEF = "NEG_SEMIDEF"
POS_SEMIDEF = "POS_SEMIDEF"
INDEFINITE = "INDEFINITE"


class IrlError(RuntimeError):
    """Failure inside the recovery pipeline.

    ``partial`` carries whatever intermediate artifacts were finished
    before the failure (keys ``vi``, ``features``, ``hessians``).
    """

    def __init__(self, msg, phase=None):
        super().__init__(f"[phase {phase}] {msg}" if phase else msg)
        self.phase = phase
        self.partial = {}


class RankError(IrlError):
    pass


@dataclass
class IrlConfig:
    resolution: object = None          # state quantisation for pair keys; None = exact
    pi_omega_renorm: str = "visited"   # or "zero_pad"
    mu_explicit_pi: bool = False
    max_features: int = 200
    sv_rtol: float = 1e-10
    eig_tol: float = 1e-6
    weight_mode: str = "unit"          # or "sqrt2"


# ---------------------------------------------------------------------------
# visit index


@dataclass
class VisitIndex:
    triples: list
    pairs: list
    triple_state: list
    triple_action: list
    triple_option: np.ndarray
    pair_state: list
    pair_option: np.ndarray
    mu: np.ndarray
    mu1: np.ndarray
    pair_of_triple: np.ndarray
    triple_id: dict
    resolution: object = None
    n_demos: int = 0

    @property
    def M(self) -> int:
        return len(self.triples)

    @property
    def L(self) -> int:
        return len(self.pairs)

    def triple_key(self, s, w, a):
        return (point_key(s), int(w), point_key(a))

    def lookup(self, s, w, a) -> int:
        return self.triple_id[self.triple_key(s, w, a)]


def build_visit_index(demos, gamma: float, resolution=None, opts=None, mu_explicit_pi=False) -> VisitIndex:
    """Discounted occupancies of visited triples (from t=0) and pairs (from t=1).

    Triples are identified by exact state/action values; pairs by the state
    key rounded to ``resolution`` (exact when ``None``).  ``mu1`` weights the
    pair ``(s_t, w_{t-1})``, i.e. the option that arrives at ``s_t`` and whose
    termination is decided there; arrivals at pairs that never took an
    action carry no defined option value and are left out.
    """
    if not demos:
        raise ValueError("no demonstrations")
    triples, triple_state, triple_action, triple_option, pot = [], [], [], [], []
    pairs, pair_state, pair_option = [], [], []
    tid, pid = {}, {}
    mu_acc, mu0_pair = [], []
    arrivals = {}
    n = len(demos)
    for tr in demos:
        disc = 1.0
        prev = None
        for t, st in enumerate(tr.steps):
            key = point_key(st.state, resolution)
            pk = (key, st.option)
            if pk not in pid:
                pid[pk] = len(pairs)
                pairs.append(pk)
                pair_state.append(st.state)
                pair_option.append(st.option)
                mu0_pair.append(0.0)
            l = pid[pk]
            tk = (point_key(st.state), st.option, point_key(st.action))
            if tk not in tid:
                tid[tk] = len(triples)
                triples.append(tk)
                triple_state.append(st.state)
                triple_action.append(st.action)
                triple_option.append(st.option)
                pot.append(l)
                mu_acc.append(0.0)
            mu_acc[tid[tk]] += disc / n
            mu0_pair[l] += disc / n
            if t >= 1:
                ak = (key, prev)
                arrivals[ak] = arrivals.get(ak, 0.0) + gamma ** (t - 1) / n
            prev = st.option
            disc *= gamma
    mu1 = np.zeros(len(pairs))
    for ak, v in arrivals.items():
        if ak in pid:
            mu1[pid[ak]] += v
    vi = VisitIndex(triples, pairs, triple_state, triple_action, np.array(triple_option),
                    pair_state, np.array(pair_option), np.array(mu_acc), mu1,
                    np.array(pot, dtype=int), tid, resolution, n)
    if mu_explicit_pi:
        if opts is None:
            raise ValueError("mu_explicit_pi needs the option set")
        dens = np.array([opts.options[w].policy.prob(s, a)
                         for s, w, a in zip(triple_state, triple_option, triple_action)])
        vi.mu = np.asarray(mu0_pair)[vi.pair_of_triple] * dens
    return vi


def _offsets(sizes):
    return np.concatenate([[0], np.cumsum(sizes)]).astype(int)


# ---------------------------------------------------------------------------
# Phase 1


def build_policy_constraint(vi: VisitIndex, opts) -> np.ndarray:
    """``C1[k, m] = mu[m] * d/dtheta_k log pi_{w_m}(a_m | s_m)``, options stacked."""
    off = _offsets(opts.theta_sizes())
    C1 = np.zeros((off[-1], vi.M))
    for m, (s, w, a) in enumerate(zip(vi.triple_state, vi.triple_option, vi.triple_action)):
        pol = opts.options[w].policy
        if not np.isfinite(pol.log_prob(s, a)):
            raise IrlError(f"zero policy density at visited triple (s={s}, option={w}, a={a})", 1)
        idx, g = pol.score_block(s, a)
        C1[off[w] + idx, m] = vi.mu[m] * g
    return C1


def intra_option_matrix(vi: VisitIndex, opts) -> np.ndarray:
    """``Pi[l, m]``: intra-option policy renormalised over the triples visited at pair ``l``."""
    logp = np.array([opts.options[w].policy.log_prob(s, a)
                     for s, w, a in zip(vi.triple_state, vi.triple_option, vi.triple_action)])
    Pi = np.zeros((vi.L, vi.M))
    for l in range(vi.L):
        ms = np.flatnonzero(vi.pair_of_triple == l)
        lp = logp[ms]
        if ms.size == 0 or not np.any(np.isfinite(lp)):
            raise IrlError(f"pair {vi.pairs[l]} has zero renormalisation mass", 1)
        Pi[l, ms] = np.exp(lp - logsumexp(lp))
    return Pi


def option_policy_matrix(vi: VisitIndex, opts, renorm="visited") -> np.ndarray:
    """``Pi_Omega[l, l']`` = pi_Omega(w' | s_l) over visited pairs sharing the state key."""
    by_key = {}
    for l, (k, w) in enumerate(vi.pairs):
        by_key.setdefault(k, []).append(l)
    PO = np.zeros((vi.L, vi.L))
    for l, (k, w) in enumerate(vi.pairs):
        cols = by_key[k]
        p = opts.policy_over_options.probs(vi.pair_state[l])
        vals = np.array([p[vi.pair_option[c]] for c in cols])
        if renorm == "visited":
            tot = vals.sum()
            vals = vals / tot if tot > 0 else np.full(len(cols), 1.0 / len(cols))
        elif renorm != "zero_pad":
            raise ValueError(f"unknown renormalisation mode {renorm!r}")
        PO[l, cols] = vals
    return PO


def termination_grad_matrix(vi: VisitIndex, opts) -> np.ndarray:
    """``B[j, l] = d/dvartheta_j beta_{w_l}(s_l)``, options stacked."""
    off = _offsets(opts.vartheta_sizes())
    B = np.zeros((off[-1], vi.L))
    for l in range(vi.L):
        w = vi.pair_option[l]
        B[off[w]:off[w + 1], l] = opts.options[w].termination.grad(vi.pair_state[l])
    return B


def build_termination_constraint(vi: VisitIndex, opts, renorm="visited", Pi=None, PO=None) -> np.ndarray:
    """``C2 = B diag(mu1) (I - Pi_Omega) Pi``."""
    Pi = intra_option_matrix(vi, opts) if Pi is None else Pi
    PO = option_policy_matrix(vi, opts, renorm) if PO is None else PO
    B = termination_grad_matrix(vi, opts)
    return (B * vi.mu1) @ ((np.eye(vi.L) - PO) @ Pi)


@dataclass
class NullSpaceInfo:
    rank: int
    sigma_max: float
    threshold: float
    dim: int


def qfeature_nullspace(C1, C2, max_features=None, sv_rtol=1e-10):
    """Orthonormal basis of ``null([C1; C2])`` via SVD.  Returns ``(Phi, info)``."""
    C = np.vstack([C1, C2])
    C = C[np.any(C != 0, axis=1)]
    M = C1.shape[1]
    if C.shape[0] == 0:
        sv = np.zeros(0)
        Vt = np.eye(M)
    else:
        _, sv, Vt = np.linalg.svd(C, full_matrices=True)
    smax = float(sv[0]) if sv.size else 0.0
    tau = max(C1.shape[0] + C2.shape[0], M) * smax * sv_rtol
    rank = int(np.sum(sv > tau)) if smax > 0 else 0
    p = M - rank
    if p == 0:
        raise RankError("constraints of full rank; more demonstrations or fewer parameters needed", 1)
    Phi = Vt[rank:].T.copy()
    if max_features is not None and p > max_features:
        # trailing right-singular vectors carry the smallest singular values
        Phi = Phi[:, p - max_features:]
    # deterministic sign: largest-magnitude entry positive
    piv = np.argmax(np.abs(Phi), axis=0)
    Phi *= np.sign(Phi[piv, np.arange(Phi.shape[1])])
    return Phi, NullSpaceInfo(rank, smax, tau, Phi.shape[1])


# ---------------------------------------------------------------------------
# Phase 2


def advantage_features(Phi, vi: VisitIndex, opts, renorm="visited", Pi=None, PO=None) -> np.ndarray:
    """``A = (I - Pi_Omega) Pi Phi`` on visited pairs."""
    Pi = intra_option_matrix(vi, opts) if Pi is None else Pi
    PO = option_policy_matrix(vi, opts, renorm) if PO is None else PO
    Q_omega = Pi @ Phi
    return Q_omega - PO @ Q_omega


def termination_at_triples(vi: VisitIndex, opts) -> np.ndarray:
    return np.array([opts.options[w].termination.prob(s) for s, w in zip(vi.triple_state, vi.triple_option)])


def shape_rewards(Phi, A, vi: VisitIndex, opts, Pi=None) -> np.ndarray:
    """``Psi = Phi - Pi~ Phi + beta * A``: option-wise shaping with the value upon arrival."""
    Pi = intra_option_matrix(vi, opts) if Pi is None else Pi
    beta = termination_at_triples(vi, opts)
    pot = vi.pair_of_triple
    return Phi - (Pi @ Phi)[pot] + beta[:, None] * A[pot]


@dataclass
class FeatureBank:
    phi: np.ndarray
    psi: np.ndarray
    advantage: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    nullspace: NullSpaceInfo

    def weighted_gram(self, vi: VisitIndex) -> np.ndarray:
        """Gram matrix of Phi in the occupancy-weighted inner product (diagnostic)."""
        return self.phi.T @ (vi.mu[:, None] * self.phi)

    def residual(self) -> float:
        """``|[C1; C2] Phi|_inf`` relative to the largest constraint singular value."""
        C = np.vstack([self.C1, self.C2])
        smax = self.nullspace.sigma_max
        r = float(np.max(np.abs(C @ self.phi))) if C.size else 0.0
        return r / smax if smax > 0 else r


# ---------------------------------------------------------------------------
# Phase 3: trajectory derivatives and Hessians


def _trajectory_blocks(traj: Trajectory, opts):
    """Sparse per-step blocks of the trajectory log-density derivatives."""
    toff = _offsets(opts.theta_sizes())
    voff = _offsets(opts.vartheta_sizes())
    th, vt = [], []
    for t, st in enumerate(traj.steps):
        pol = opts.options[st.option].policy
        idx, g = pol.score_block(st.state, st.action)
        _, H = pol.hessian_block(st.state, st.action)
        th.append((toff[st.option] + idx, g, H))
        if t >= 1:
            w_prev = traj.steps[t - 1].option
            term = opts.options[w_prev].termination
            g2, H2 = term.log_grad_hessian(st.state, st.term)
            nz = np.flatnonzero(g2 != 0) if np.any(g2 != 0) else np.flatnonzero(np.diag(H2) != 0)
            vt.append((voff[w_prev] + nz, g2[nz], H2[np.ix_(nz, nz)]))
    return th, vt, toff[-1], voff[-1]


def trajectory_log_derivatives(traj: Trajectory, opts):
    """Gradient and Hessian of ``log P(traj)`` in theta and in vartheta (dense)."""
    th, vt, kt, kv = _trajectory_blocks(traj, opts)
    g_t, H_t = np.zeros(kt), np.zeros((kt, kt))
    for idx, g, H in th:
        g_t[idx] += g
        H_t[np.ix_(idx, idx)] += H
    g_v, H_v = np.zeros(kv), np.zeros((kv, kv))
    for idx, g, H in vt:
        g_v[idx] += g
        H_v[np.ix_(idx, idx)] += H
    return g_t, H_t, g_v, H_v


def trajectory_log_density(traj: Trajectory, opts) -> float:
    """Parameter-dependent part of ``log P(traj)`` (policy and termination terms)."""
    out = 0.0
    for t, st in enumerate(traj.steps):
        out += opts.options[st.option].policy.log_prob(st.state, st.action)
        if t >= 1:
            beta = opts.options[traj.steps[t - 1].option].termination.prob(st.state)
            out += np.log(beta) if st.term else np.log1p(-beta)
    return out


class _HessianStack:
    """Per-trajectory ``g g^T + H`` terms, kept sparse, for a family of returns."""

    def __init__(self, blocks, n_params, n_traj):
        g = np.zeros((n_traj, n_params))
        rows, cols, vals, owner = [], [], [], []
        for i, bl in enumerate(blocks):
            for idx, gb, H in bl:
                g[i, idx] += gb
                r, c = np.meshgrid(idx, idx, indexing="ij")
                rows.append(r.ravel())
                cols.append(c.ravel())
                vals.append(H.ravel())
                owner.append(np.full(H.size, i))
        active = np.flatnonzero(np.any(g != 0, axis=0))
        if rows:
            active = np.union1d(active, np.concatenate(rows))
        remap = np.full(n_params, -1)
        remap[active] = np.arange(active.size)
        self.active = active
        self.n = active.size
        self.g = g[:, active]
        if rows:
            self.lin = remap[np.concatenate(rows)] * self.n + remap[np.concatenate(cols)]
            self.vals = np.concatenate(vals)
            self.owner = np.concatenate(owner)
        else:
            self.lin = np.zeros(0, int)
            self.vals = np.zeros(0)
            self.owner = np.zeros(0, int)
        self.n_traj = n_traj

    def hessian(self, returns) -> np.ndarray:
        """``(1/N) sum_tau R(tau) (g g^T + H)`` in active coordinates, symmetrised."""
        returns = np.asarray(returns, float)
        Hs = np.bincount(self.lin, weights=self.vals * returns[self.owner], minlength=self.n * self.n).astype(float)
        Hs = Hs.reshape(self.n, self.n)
        Hs += (self.g.T * returns) @ self.g
        Hs /= self.n_traj
        return 0.5 * (Hs + Hs.T)


@dataclass
class HessianReport:
    eig_theta: list
    eig_vartheta: list
    tr_theta_all: np.ndarray
    tr_vartheta_all: np.ndarray
    class_theta: list = field(default_factory=list)
    class_vartheta: list = field(default_factory=list)
    kept: np.ndarray = None
    sign: np.ndarray = None
    _stack_theta: object = None
    _stack_vartheta: object = None
    _returns_theta: np.ndarray = None
    _returns_vartheta: np.ndarray = None

    @property
    def p(self) -> int:
        return len(self.eig_theta)

    def hess_theta(self, i) -> np.ndarray:
        return self._stack_theta.hessian(self._returns_theta[:, i])

    def hess_vartheta(self, i) -> np.ndarray:
        return self._stack_vartheta.hessian(self._returns_vartheta[:, i])

    @property
    def tr_theta(self) -> np.ndarray:
        """Sign-adjusted theta traces of the kept features."""
        return (self.sign * self.tr_theta_all)[self.kept]

    @property
    def tr_vartheta(self) -> np.ndarray:
        return (self.sign * self.tr_vartheta_all)[self.kept]


def feature_returns(demos, Psi, vi: VisitIndex, gamma: float):
    """Discounted feature returns per trajectory: from t=0 and from t=1."""
    D0 = np.zeros((len(demos), vi.M))
    D1 = np.zeros((len(demos), vi.M))
    for i, tr in enumerate(demos):
        disc = 1.0
        for t, st in enumerate(tr.steps):
            try:
                m = vi.lookup(st.state, st.option, st.action)
            except KeyError:
                raise IrlError(f"feature undefined on demo {i} step {t}", 3) from None
            D0[i, m] += disc
            if t >= 1:
                D1[i, m] += gamma ** (t - 1)
            disc *= gamma
    return D0 @ Psi, D1 @ Psi


def estimate_feature_hessians(demos, Psi, vi: VisitIndex, opts, gamma: float) -> HessianReport:
    """Monte-Carlo Hessians of the expected return of every reward feature."""
    Rt, Rv = feature_returns(demos, Psi, vi, gamma)
    blocks = [_trajectory_blocks(tr, opts) for tr in demos]
    kt, kv = blocks[0][2], blocks[0][3]
    st = _HessianStack([b[0] for b in blocks], kt, len(demos))
    sv = _HessianStack([b[1] for b in blocks], kv, len(demos))
    eig_t, eig_v, tr_t, tr_v = [], [], [], []
    for i in range(Psi.shape[1]):
        Ht = st.hessian(Rt[:, i])
        Hv = sv.hessian(Rv[:, i])
        et = np.linalg.eigvalsh(Ht) if Ht.size else np.zeros(0)
        ev = np.linalg.eigvalsh(Hv) if Hv.size else np.zeros(0)
        eig_t.append(et)
        eig_v.append(ev)
        tr_t.append(np.trace(Ht))
        tr_v.append(np.trace(Hv))
    return HessianReport(eig_t, eig_v, np.array(tr_t), np.array(tr_v),
                         _stack_theta=st, _stack_vartheta=sv, _returns_theta=Rt, _returns_vartheta=Rv)


def classify_eigenvalues(lam, eig_tol=1e-6) -> str:
    lam = np.asarray(lam, float)
    if lam.size == 0:
        return NEG_SEMIDEF
    tau = eig_tol * max(1.0, float(np.max(np.abs(lam))))
    if np.all(lam <= tau):
        return NEG_SEMIDEF
    if np.all(lam >= -tau):
        return POS_SEMIDEF
    return INDEFINITE


def classify_and_trace(report: HessianReport, eig_tol=1e-6) -> HessianReport:
    """Drop features with an indefinite Hessian; flip features whose theta-Hessian is PSD."""
    report.class_theta = [classify_eigenvalues(e, eig_tol) for e in report.eig_theta]
    report.class_vartheta = [classify_eigenvalues(e, eig_tol) for e in report.eig_vartheta]
    kept = np.array([ct != INDEFINITE and cv != INDEFINITE
                     for ct, cv in zip(report.class_theta, report.class_vartheta)], dtype=bool)
    sign = np.ones(report.p)
    for i in range(report.p):
        if kept[i] and report.class_theta[i] == POS_SEMIDEF:
            sign[i] = -1.0
    report.kept = kept
    report.sign = sign
    return report


def select_weights(tr_theta, tr_vartheta, mode="unit") -> np.ndarray:
    """Unit weight vector minimising the scalarised, norm-balanced trace objective."""
    tr_theta = np.asarray(tr_theta, float)
    tr_vartheta = np.asarray(tr_vartheta, float)
    if tr_theta.size == 0:
        raise IrlError("no informative features", 3)
    nt, nv = np.linalg.norm(tr_theta), np.linalg.norm(tr_vartheta)
    if nt == 0 and nv == 0:
        raise IrlError("no informative features", 3)
    d = np.zeros_like(tr_theta)
    if nt > 0:
        d += tr_theta / nt
    if nv > 0:
        d += tr_vartheta / nv
    if mode == "sqrt2":
        return -d / np.sqrt(2.0)
    nd = np.linalg.norm(d)
    if nd == 0:
        raise IrlError("normalised trace vectors cancel; no descent direction", 3)
    return -d / nd


# ---------------------------------------------------------------------------
# end to end


@dataclass
class RecoveredReward:
    values: np.ndarray
    weights: np.ndarray
    kept: np.ndarray
    vi: VisitIndex

    def __call__(self, s, w, a) -> float:
        return float(self.values[self.vi.lookup(s, w, a)])

    def per_option_support(self, w):
        ms = np.flatnonzero(self.vi.triple_option == w)
        return ([self.vi.triple_state[m] for m in ms], [self.vi.triple_action[m] for m in ms],
                self.values[ms])

    def tabular(self, n_states, n_actions, n_options, fill="mean") -> np.ndarray:
        """``R[w, s, a]`` with unvisited triples set to the mean (or zero)."""
        if fill not in ("mean", "zero"):
            raise ValueError(f"unknown fill {fill!r}")
        base = float(np.mean(self.values)) if fill == "mean" else 0.0
        R = np.full((n_options, n_states, n_actions), base)
        for (s, w, a), v in zip(self.vi.triples, self.values):
            R[w, s, a] = v
        return R


@dataclass
class Recovery:
    reward: RecoveredReward
    features: FeatureBank
    hessians: HessianReport
    vi: VisitIndex


def recover(demos, opts, gamma: float, config: IrlConfig | None = None) -> Recovery:
    """Run phases 1-3 and return the recovered reward with its intermediate artifacts."""
    cfg = config or IrlConfig()
    partial = {}

    def fail(exc, phase):
        err = exc if isinstance(exc, IrlError) else IrlError(str(exc), phase)
        err.partial = dict(partial)
        return err

    try:
        vi = build_visit_index(demos, gamma, cfg.resolution, opts, cfg.mu_explicit_pi)
        partial["vi"] = vi
        C1 = build_policy_constraint(vi, opts)
        Pi = intra_option_matrix(vi, opts)
        PO = option_policy_matrix(vi, opts, cfg.pi_omega_renorm)
        C2 = build_termination_constraint(vi, opts, Pi=Pi, PO=PO)
        Phi, info = qfeature_nullspace(C1, C2, cfg.max_features, cfg.sv_rtol)
    except Exception as exc:
        raise fail(exc, 1) from exc
    log.info("phase 1: M=%d L=%d rank=%d p=%d", vi.M, vi.L, info.rank, info.dim)
    try:
        A = advantage_features(Phi, vi, opts, Pi=Pi, PO=PO)
        Psi = shape_rewards(Phi, A, vi, opts, Pi=Pi)
    except Exception as exc:
        raise fail(exc, 2) from exc
    bank = FeatureBank(Phi, Psi, A, C1, C2, info)
    partial["features"] = bank
    try:
        rep = estimate_feature_hessians(demos, Psi, vi, opts, gamma)
        classify_and_trace(rep, cfg.eig_tol)
        partial["hessians"] = rep
        w = select_weights(rep.tr_theta, rep.tr_vartheta, cfg.weight_mode)
    except Exception as exc:
        raise fail(exc, 3) from exc
    kept = np.flatnonzero(rep.kept)
    values = (Psi[:, kept] * rep.sign[kept]) @ w
    log.info("phase 3: kept %d of %d features", kept.size, Psi.shape[1])
    return Recovery(RecoveredReward(values, w, kept, vi), bank, rep, vi)
