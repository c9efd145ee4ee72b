import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocrirl import irl
from ocrirl.irl import (INDEFINITE, NEG_SEMIDEF, POS_SEMIDEF, IrlConfig, IrlError, RankError, advantage_features,
                        build_policy_constraint, build_termination_constraint, build_visit_index, classify_and_trace,
                        classify_eigenvalues, estimate_feature_hessians, qfeature_nullspace, recover, select_weights,
                        shape_rewards, trajectory_log_derivatives)
from ocrirl.mdp import DeterministicOptionPolicy, OptionSet, OptionSpec, TabularOptionPolicy, make_trajectory
from ocrirl.policies import BoltzmannTabularPolicy, HardTermination, OneHotFeatures, SigmoidTermination

from oracles import central_grad, random_model, sample_demos, stationary_reward, trajectory_fd_error


def _tabular_opts(thetas, pi_omega, vartheta=None):
    n_states = np.asarray(thetas[0]).shape[0]
    feats = OneHotFeatures(n_states)
    opts = []
    for w, th in enumerate(thetas):
        vt = np.zeros(n_states) if vartheta is None else vartheta[w]
        opts.append(OptionSpec(BoltzmannTabularPolicy(np.asarray(th, float)), SigmoidTermination(vt, feats)))
    return OptionSet(opts, TabularOptionPolicy(np.asarray(pi_omega, float)))


# ---------------------------------------------------------------------------
# visit index


def test_visit_index_examples():
    tr = make_trajectory([0, 0], [0, 1], [0, 0], [True, False], 2)
    vi = build_visit_index([tr], 0.5)
    assert np.allclose(vi.mu, [1.0, 0.5])
    tr = make_trajectory([0, 0, 0], [0, 1, 0], [0, 1, 0], [True, False, False], 2)
    vi = build_visit_index([tr], 0.5)
    assert vi.mu[vi.lookup(0, 0, 0)] == 1.25
    vi = build_visit_index([tr], 0.0)
    assert vi.mu[vi.lookup(0, 0, 0)] == 1.0 and vi.mu[vi.lookup(1, 0, 1)] == 0.0


def test_visit_index_invariants_and_arrival_option():
    # option 0 runs at t=0, terminates at s=1 where option 1 takes over
    tr = make_trajectory([0, 1, 1], [0, 1, 2], [0, 0, 1], [True, True, False], 3)
    vi = build_visit_index([tr], 0.5)
    assert [w for _, w in vi.pairs] == [0, 1, 1]
    assert np.all(vi.mu >= 0) and np.all(vi.mu1 >= 0)
    for m, l in enumerate(vi.pair_of_triple):
        assert vi.pair_state[l] == vi.triple_state[m] and vi.pair_option[l] == vi.triple_option[m]
    # the arrival at s=1 belongs to option 0, which has no action at s=1 and is dropped;
    # the arrival at s=2 (gamma^1) belongs to option 1, which did act at s=2
    l2 = [l for l, (k, w) in enumerate(vi.pairs) if vi.pair_state[l] == 2][0]
    assert np.allclose(vi.mu1, np.eye(3)[l2] * 0.5)


def test_visit_index_rejects_empty():
    with pytest.raises(ValueError):
        build_visit_index([], 0.9)


def test_sampled_occupancies_match_exact_model():
    rng = np.random.default_rng(11)
    model = random_model(rng, S=3, gamma=0.8)
    n = 3000
    demos = sample_demos(model, n, 80, rng)
    vi = build_visit_index(demos, model.gamma)
    exact = model.visit_index()
    for l, (k, w) in enumerate(vi.pairs):
        le = exact.pairs.index((k, w))
        # per-demo discounted arrival counts are bounded by 1/(1-gamma)
        assert abs(vi.mu1[l] - exact.mu1[le]) < 4 * (1 / (1 - model.gamma)) / np.sqrt(n)
    for m, key in enumerate(vi.triples):
        assert abs(vi.mu[m] - exact.mu[exact.triple_id[key]]) < 4 * (1 / (1 - model.gamma)) / np.sqrt(n)


# ---------------------------------------------------------------------------
# Phase 1


def test_policy_constraint_examples():
    opts = _tabular_opts([np.zeros((1, 4))], [[1.0]])
    demos = [make_trajectory([0], [0], [a], [True], 0, a) for a in range(4)]
    vi = build_visit_index(demos, 0.9)
    C1 = build_policy_constraint(vi, opts)
    assert np.allclose(C1.sum(axis=1), 0)

    opts = _tabular_opts([np.array([[0.3, -0.2]])], [[1.0]])
    vi = build_visit_index([make_trajectory([0], [0], [1], [True], 0)], 0.9)
    vi.mu = np.array([0.7])
    g = opts.options[0].policy.log_grad(0, 1)
    assert np.allclose(build_policy_constraint(vi, opts)[:, 0], 0.7 * g)


def test_policy_constraint_zero_density_names_triple():
    opts = _tabular_opts([np.array([[0.0, -np.inf]])], [[1.0]])
    vi = build_visit_index([make_trajectory([0], [0], [1], [True], 0)], 0.9)
    with pytest.raises(IrlError, match="a=1"):
        build_policy_constraint(vi, opts)


def test_policy_constraint_matches_reinforce_gradient():
    """C1 Q on sampled demos estimates the exact policy gradient of a 2-state MDP."""
    rng = np.random.default_rng(7)
    model = random_model(rng, S=2, A=2, W=1, gamma=0.5)
    R = rng.normal(size=(1, 2, 2))
    Q = model.q_u(R)
    exact = central_grad(lambda th: model.rho(R, theta=th.reshape(model.theta.shape)), model.theta.ravel())
    demos = sample_demos(model, 4000, 40, rng)
    opts = model.option_set()
    vi = build_visit_index(demos, model.gamma)
    q = np.array([Q[w, s, a] for s, w, a in zip(vi.triple_state, vi.triple_option, vi.triple_action)])
    est = build_policy_constraint(vi, opts) @ q
    per_demo = []
    pol = opts.options[0].policy
    for tr in demos:
        per_demo.append(sum(model.gamma ** t * pol.log_grad(st.state, st.action) * Q[0, st.state, st.action]
                            for t, st in enumerate(tr.steps)))
    se = np.std(per_demo, axis=0, ddof=1) / np.sqrt(len(demos))
    assert np.allclose(est, np.mean(per_demo, axis=0))
    assert np.all(np.abs(est - exact) <= 3 * se + 1e-6)


def _one_state_two_options():
    # pi_0 = (0.5, 0.5), pi_1 = (0.75, 0.25), beta = 0.5 (grad 0.25), pi_Omega = (0.5, 0.5)
    opts = _tabular_opts([np.zeros((1, 2)), np.array([[np.log(3), 0.0]])], [[0.5, 0.5]])
    demos = [make_trajectory([w], [0], [a], [True], 0, 2 * w + a) for w in range(2) for a in range(2)]
    vi = build_visit_index(demos, 0.9)
    vi.mu1 = np.array([0.4 if vi.pair_option[l] == 0 else 0.6 for l in range(vi.L)])
    Qv = {(0, 0): 1.0, (0, 1): 3.0, (1, 0): 2.0, (1, 1): 6.0}
    q = np.array([Qv[(w, a)] for w, a in zip(vi.triple_option, vi.triple_action)])
    return opts, vi, q


def test_termination_constraint_hand_example():
    opts, vi, q = _one_state_two_options()
    C2 = build_termination_constraint(vi, opts)
    # Q_Omega = (2, 3), V_Omega = 2.5, A = (-0.5, 0.5); rows: d beta_w / d vartheta_w * mu1_w * A_w
    assert np.allclose(C2 @ q, [0.25 * 0.4 * -0.5, 0.25 * 0.6 * 0.5], atol=1e-15)
    A = advantage_features(q[:, None], vi, opts)
    assert np.allclose(sorted(A[:, 0]), [-0.5, 0.5])


def test_single_option_termination_constraint_vanishes():
    rng = np.random.default_rng(0)
    model = random_model(rng, W=1)
    demos = sample_demos(model, 30, 20, rng)
    opts = model.option_set()
    vi = build_visit_index(demos, model.gamma)
    assert np.all(build_termination_constraint(vi, opts) == 0)
    Phi = rng.normal(size=(vi.M, 3))
    assert np.all(advantage_features(Phi, vi, opts) == 0)


def test_deterministic_pi_omega_gives_zero_constraint():
    opts = _tabular_opts([np.zeros((2, 2)), np.zeros((2, 2))], [[1.0, 0.0], [0.0, 1.0]])
    demos = [make_trajectory([0, 1, 0], [0, 1, 0], [0, 1, 1], [True, True, True], 1)]
    vi = build_visit_index(demos, 0.9)
    assert np.all(build_termination_constraint(vi, opts) == 0)
    Phi = np.ones((vi.M, 1))
    assert np.all(advantage_features(Phi, vi, opts) == 0)


def test_nullspace_examples():
    Phi, info = qfeature_nullspace(np.array([[1.0, 0.0], [0.0, 0.0]]), np.zeros((1, 2)))
    assert Phi.shape == (2, 1) and np.allclose(np.abs(Phi[:, 0]), [0, 1])
    Phi, _ = qfeature_nullspace(np.zeros((2, 5)), np.zeros((1, 5)))
    assert np.allclose(Phi.T @ Phi, np.eye(5), atol=1e-10)
    with pytest.raises(RankError, match="full rank"):
        qfeature_nullspace(np.eye(3), np.zeros((1, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.integers(1, 5), st.integers(14, 30))
def test_nullspace_residual(seed, k1, k2, M):
    rng = np.random.default_rng(seed)
    C1, C2 = rng.normal(size=(k1, M)), rng.normal(size=(k2, M)) * 10.0 ** rng.uniform(-3, 3)
    Phi, info = qfeature_nullspace(C1, C2)
    assert np.abs(np.vstack([C1, C2]) @ Phi).max() <= 1e-10 * info.sigma_max
    assert np.allclose(Phi.T @ Phi, np.eye(Phi.shape[1]), atol=1e-10)


# ---------------------------------------------------------------------------
# Phase 2


def _full_visit_demos(n_states, n_options, n_actions):
    demos = []
    for s in range(n_states):
        for w in range(n_options):
            for a in range(n_actions):
                demos.append(make_trajectory([w], [s], [a], [True], s, len(demos)))
    return demos


@pytest.mark.parametrize("always", [True, False])
def test_shaping_extreme_terminations(always):
    rng = np.random.default_rng(4)
    pols = [BoltzmannTabularPolicy(rng.normal(size=(2, 3))) for _ in range(2)]
    opts = OptionSet([OptionSpec(p, HardTermination(lambda s, b=always: b)) for p in pols],
                     TabularOptionPolicy(rng.dirichlet(np.ones(2), size=2)))
    vi = build_visit_index(_full_visit_demos(2, 2, 3), 0.9)
    Phi = rng.normal(size=(vi.M, 2))
    A = advantage_features(Phi, vi, opts)
    Psi = shape_rewards(Phi, A, vi, opts)
    qo = np.zeros((vi.L, 2))
    for m in range(vi.M):
        qo[vi.pair_of_triple[m]] += pols[vi.triple_option[m]].prob(vi.triple_state[m], vi.triple_action[m]) * Phi[m]
    if always:
        v = {}
        for l in range(vi.L):
            p = opts.policy_over_options.probs(vi.pair_state[l])[vi.pair_option[l]]
            v[vi.pair_state[l]] = v.get(vi.pair_state[l], 0) + p * qo[l]
        expect = Phi - np.array([v[s] for s in vi.triple_state])
    else:
        expect = Phi - qo[vi.pair_of_triple]
    assert np.allclose(Psi, expect, atol=1e-12)


def test_shaping_chain_on_exact_three_state_instance():
    rng = np.random.default_rng(21)
    model = random_model(rng, S=3, A=2, W=2)
    R = rng.normal(size=(2, 3, 2))
    Q = model.q_u(R)
    vi = model.visit_index()
    opts = model.option_set()
    q = Q.ravel()[:, None]
    Psi = shape_rewards(q, advantage_features(q, vi, opts), vi, opts)
    assert np.abs(Psi[:, 0] - model.shaped_reward(R).ravel()).max() <= 1e-10


# ---------------------------------------------------------------------------
# exact-model containment


def _stationary_instance(seed, S=4):
    rng = np.random.default_rng(seed)
    model = random_model(rng, S=S, A=2, W=2, gamma=0.9)
    R, Q = stationary_reward(model, rng)
    return model, R, Q


@pytest.mark.parametrize("seed", range(5))
def test_stationary_oracle_is_stationary(seed):
    model, R, Q = _stationary_instance(seed)
    assert np.abs(model.q_u(R) - Q).max() < 1e-12
    gt = central_grad(lambda th: model.rho(R, theta=th.reshape(model.theta.shape)), model.theta.ravel())
    gv = central_grad(lambda v: model.rho(R, vartheta=v.reshape(model.vartheta.shape)), model.vartheta.ravel())
    assert np.abs(gt).max() < 1e-8 and np.abs(gv).max() < 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_true_q_lies_in_compatible_span(seed):
    model, R, Q = _stationary_instance(seed)
    vi, opts = model.visit_index(), model.option_set()
    Phi, _ = qfeature_nullspace(build_policy_constraint(vi, opts), build_termination_constraint(vi, opts))
    q = Q.ravel()
    assert np.linalg.norm(q - Phi @ (Phi.T @ q)) / np.linalg.norm(q) <= 1e-6
    Psi = shape_rewards(q[:, None], advantage_features(q[:, None], vi, opts), vi, opts)
    assert np.abs(Psi[:, 0] - model.shaped_reward(R).ravel()).max() <= 1e-10


def test_stationary_shaped_reward_keeps_greedy_sets():
    model, R, Q = _stationary_instance(3)
    Rs = model.shaped_reward(R)
    for w in range(model.W):
        for s in range(model.S):
            greedy_q = set(np.flatnonzero(Q[w, s] >= Q[w, s].max() - 1e-10))
            greedy_r = set(np.flatnonzero(Rs[w, s] >= Rs[w, s].max() - 1e-10))
            assert greedy_q == greedy_r


# ---------------------------------------------------------------------------
# Phase 3


def test_trajectory_derivative_examples():
    rng = np.random.default_rng(0)
    model = random_model(rng)
    opts = model.option_set()
    tr = make_trajectory([1], [2], [0], [True], 3)
    g_t, H_t, g_v, H_v = trajectory_log_derivatives(tr, opts)
    assert np.all(g_v == 0) and np.all(H_v == 0)
    tr = make_trajectory([0, 0], [1, 3], [1, 0], [True, False], 2)
    g_t = trajectory_log_derivatives(tr, opts)[0]
    pol = opts.options[0].policy
    assert np.allclose(g_t[:pol.n_params], pol.log_grad(1, 1) + pol.log_grad(3, 0))


@pytest.mark.parametrize("one_hot", [False, True])
def test_trajectory_derivatives_match_finite_differences(one_hot):
    rng = np.random.default_rng(9)
    assert max(trajectory_fd_error(rng, one_hot) for _ in range(100)) < 1e-4


def _bandit(theta, rewards, n, rng):
    opts = _tabular_opts([np.asarray(theta, float)[None, :]], [[1.0]])
    p = opts.options[0].policy.probs(0)
    acts = rng.choice(len(p), size=n, p=p)
    demos = [make_trajectory([0], [0], [int(a)], [True], 0, i) for i, a in enumerate(acts)]
    vi = build_visit_index(demos, 0.9)
    Psi = np.array([[rewards[a]] for a in vi.triple_action])
    return demos, vi, opts, Psi


def _bandit_hessian(theta, rewards):
    p = np.exp(theta - np.max(theta))
    p /= p.sum()
    H = np.zeros((len(p), len(p)))
    for a, r in enumerate(rewards):
        e = np.eye(len(p))[a]
        H += r * p[a] * (np.outer(e - p, e - p) - (np.diag(p) - np.outer(p, p)))
    return H


def _per_demo_hessians(demos, vi, opts, Psi):
    """Single-trajectory estimates; the N-trajectory estimate is their mean."""
    return np.array([estimate_feature_hessians([d], Psi, vi, opts, 0.9).hess_theta(0) for d in demos])


def test_hessian_estimator_bandit_oracle():
    rng = np.random.default_rng(17)
    theta, rewards = np.array([0.4, -0.3]), np.array([1.0, -0.5])
    demos, vi, opts, Psi = _bandit(theta, rewards, 2000, rng)
    H = estimate_feature_hessians(demos, Psi, vi, opts, 0.9).hess_theta(0)
    per = _per_demo_hessians(demos, vi, opts, Psi)
    assert np.allclose(per.mean(axis=0), H, atol=1e-12)
    boots = [per[rng.integers(0, len(demos), len(demos))].mean(axis=0) for _ in range(200)]
    sd = np.std(boots, axis=0, ddof=1)
    assert np.all(np.abs(H - _bandit_hessian(theta, rewards)) <= 3 * sd + 1e-12)


def test_hessian_standard_error_scales_as_inverse_sqrt_n():
    rng = np.random.default_rng(23)
    theta, rewards = np.array([0.2, -0.1]), np.array([1.0, -0.5])
    ns, ses = [50, 100, 200, 400], []
    for n in ns:
        demos, vi, opts, Psi = _bandit(theta, rewards, n, rng)
        per = _per_demo_hessians(demos, vi, opts, Psi)[:, 0, 0]
        ses.append(np.std([per[rng.integers(0, n, n)].mean() for _ in range(2000)], ddof=1))
    slope = np.polyfit(np.log(ns), np.log(ses), 1)[0]
    assert -0.6 <= slope <= -0.4


def test_hessian_estimator_linear_and_zero():
    rng = np.random.default_rng(5)
    model = random_model(rng)
    demos = sample_demos(model, 40, 15, rng)
    opts = model.option_set()
    vi = build_visit_index(demos, model.gamma)
    Psi = rng.normal(size=(vi.M, 2))
    a, b = 1.7, -0.6
    Psi3 = np.column_stack([Psi, a * Psi[:, 0] + b * Psi[:, 1], np.zeros(vi.M)])
    rep = estimate_feature_hessians(demos, Psi3, vi, opts, model.gamma)
    for get in (rep.hess_theta, rep.hess_vartheta):
        assert np.allclose(get(2), a * get(0) + b * get(1), atol=1e-12)
        assert np.all(get(3) == 0)
    for i in range(4):
        assert abs(rep.tr_theta_all[i] - rep.eig_theta[i].sum()) <= 1e-8
        assert abs(rep.tr_vartheta_all[i] - rep.eig_vartheta[i].sum()) <= 1e-8


def test_classification_examples():
    assert classify_eigenvalues([-1, -2]) == NEG_SEMIDEF
    assert classify_eigenvalues([-1, 1]) == INDEFINITE
    assert classify_eigenvalues([0, 0]) == NEG_SEMIDEF
    assert classify_eigenvalues([0.5, 2]) == POS_SEMIDEF


def test_classify_and_trace_flags_and_signs():
    rep = irl.HessianReport(
        eig_theta=[np.array([-1.0, -2.0]), np.array([1.0, 2.0]), np.array([-1.0, 1.0]), np.array([1.0, 3.0])],
        eig_vartheta=[np.array([-1.0]), np.array([2.0]), np.array([-1.0]), np.array([-1.0, 1.0])],
        tr_theta_all=np.array([-3.0, 3.0, 0.0, 4.0]), tr_vartheta_all=np.array([-1.0, 2.0, -1.0, 0.0]))
    classify_and_trace(rep, 1e-6)
    assert list(rep.kept) == [True, True, False, False]
    assert list(rep.sign) == [1, -1, 1, 1]
    assert np.allclose(rep.tr_theta, [-3.0, -3.0]) and np.allclose(rep.tr_vartheta, [-1.0, -2.0])


def test_select_weights_examples():
    assert np.allclose(select_weights([-2.0], [-4.0]), [1.0])
    assert np.allclose(select_weights([-1.0, 0.0], [-1.0, 0.0]), [1.0, 0.0])
    w = select_weights([-1.0, 0.0], [0.0, 0.0])
    assert np.allclose(w, [1.0, 0.0])
    with pytest.raises(IrlError, match="no informative features"):
        select_weights([0.0, 0.0], [0.0, 0.0])
    w = select_weights([-1.0, 0.0], [0.0, -1.0], mode="sqrt2")
    assert np.allclose(w, [1 / np.sqrt(2), 1 / np.sqrt(2)])


traces = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=6)


@settings(max_examples=200, deadline=None)
@given(traces, traces, st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_select_weights_unit_norm_and_scale_invariant(tt, tv, c1, c2):
    n = min(len(tt), len(tv))
    tt, tv = np.array(tt[:n]), np.array(tv[:n])
    if np.linalg.norm(tt) < 1e-6 and np.linalg.norm(tv) < 1e-6:
        return
    d = (tt / np.linalg.norm(tt) if np.linalg.norm(tt) else 0) + (tv / np.linalg.norm(tv) if np.linalg.norm(tv) else 0)
    if np.linalg.norm(d) < 1e-6:
        return
    w = select_weights(tt, tv)
    assert abs(np.linalg.norm(w) - 1) <= 1e-12
    assert np.allclose(select_weights(c1 * tt, c2 * tv), w, atol=1e-12)


# ---------------------------------------------------------------------------
# end to end on a sampled tabular instance


def test_recover_residual_and_determinism():
    rng = np.random.default_rng(31)
    model = random_model(rng, S=4, A=3)
    model.theta *= 0.3
    demos = sample_demos(model, 60, 25, rng)
    opts = model.option_set()
    cfg = IrlConfig(eig_tol=np.inf)
    rec = recover(demos, opts, model.gamma, cfg)
    assert rec.features.residual() <= 1e-8
    rec2 = recover(demos, opts, model.gamma, cfg)
    assert np.array_equal(rec.reward.values, rec2.reward.values)
    kept = rec.reward.kept
    assert np.allclose(rec.reward.values, (rec.features.psi[:, kept] * rec.hessians.sign[kept]) @ rec.reward.weights)
    assert abs(np.linalg.norm(rec.reward.weights) - 1) <= 1e-12


def test_recover_errors_are_phase_tagged_with_partials():
    opts = _tabular_opts([np.zeros((1, 2))], [[1.0]])
    demos = [make_trajectory([0], [0], [0], [True], 0)]
    with pytest.raises(RankError) as exc:
        recover(demos, opts, 0.9)
    assert exc.value.phase == 1 and "vi" in exc.value.partial

    rng = np.random.default_rng(2)
    model = random_model(rng, S=3)
    demos = sample_demos(model, 30, 20, rng)
    with pytest.raises(IrlError) as exc:
        recover(demos, model.option_set(), model.gamma, IrlConfig(eig_tol=-1.0))
    assert exc.value.phase == 3 and "features" in exc.value.partial and "hessians" in exc.value.partial


def test_deterministic_policy_over_options_supported():
    pols = [BoltzmannTabularPolicy(np.zeros((2, 2))) for _ in range(2)]
    feats = OneHotFeatures(2)
    opts = OptionSet([OptionSpec(p, SigmoidTermination(np.zeros(2), feats)) for p in pols],
                     DeterministicOptionPolicy(lambda s: s, 2))
    demos = [make_trajectory([0, 1], [0, 1], [a, 1 - a], [True, True], 0, a) for a in range(2)]
    vi = build_visit_index(demos, 0.9)
    assert np.all(build_termination_constraint(vi, opts) == 0)
