import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocrirl.policies import (BoltzmannTabularPolicy, DomainError, GaussianRbfPolicy, OneHotFeatures, RbfFeatures,
                             SaturationError, SigmoidTermination, load_params, rbf_grid, save_params)

from oracles import policy_fd_errors


def _single_center():
    return RbfFeatures(np.zeros((1, 2)), 1.0, np.ones(2))


def test_boltzmann_examples():
    p = BoltzmannTabularPolicy(np.zeros((2, 4)))
    assert np.allclose(p.probs(0), 0.25)
    p = BoltzmannTabularPolicy(np.array([[np.log(2), 0, 0, 0]]))
    assert np.allclose(p.probs(0), [0.4, 0.2, 0.2, 0.2], atol=1e-15)
    g = BoltzmannTabularPolicy(np.zeros((3, 4))).log_grad(1, 0)
    expect = np.zeros(12)
    expect[4:8] = [0.75, -0.25, -0.25, -0.25]
    assert np.allclose(g, expect)
    H = BoltzmannTabularPolicy(np.zeros((1, 2))).log_hessian(0, 1)
    assert np.allclose(H, -0.25 * np.array([[1, -1], [-1, 1]]))


def test_boltzmann_domain_errors():
    p = BoltzmannTabularPolicy(np.zeros((2, 2)))
    with pytest.raises(DomainError):
        p.prob(2, 0)
    with pytest.raises(DomainError):
        p.prob(0, 5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.2, 5.0))
def test_boltzmann_rows_and_score_identity(seed, temp):
    rng = np.random.default_rng(seed)
    p = BoltzmannTabularPolicy(rng.normal(scale=3, size=(3, 5)), temp)
    for s in range(3):
        pr = p.probs(s)
        assert abs(pr.sum() - 1) <= 1e-12 and np.all((pr >= 0) & (pr <= 1))
        score = sum(pr[a] * p.log_grad(s, a) for a in range(5))
        assert np.abs(score).max() < 1e-12


def test_gaussian_examples():
    f = _single_center()
    p = GaussianRbfPolicy(np.zeros(1), f)
    assert p.prob((0.0, 0.0), 0.0) == pytest.approx(1 / np.sqrt(2 * np.pi * 0.01))
    p = GaussianRbfPolicy(np.array([0.7]), f)
    assert np.allclose(p.log_grad((0.0, 0.0), p.mean((0.0, 0.0))), 0)
    assert np.allclose(p.log_hessian((0.0, 0.0), 0.3), [[-100.0]])


def test_gaussian_score_identity_monte_carlo():
    rng = np.random.default_rng(0)
    f = rbf_grid([-1, -3], [1, 3], 3)
    p = GaussianRbfPolicy(rng.normal(size=f.dim), f)
    s = (0.2, -0.4)
    n = 100_000
    A = p.mean(s) + np.sqrt(p.sigma2) * rng.standard_normal(n)
    phi = f(s)
    scores = ((A - p.mean(s)) / p.sigma2)[:, None] * phi[None, :]
    se = scores.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(scores.mean(axis=0)) <= 3 * se + 1e-12)


def test_sigmoid_examples():
    feats = OneHotFeatures(3)
    t = SigmoidTermination(np.zeros(3), feats)
    assert all(t.prob(s) == 0.5 for s in range(3))
    t = SigmoidTermination(np.array([0, np.log(3), 0]), feats)
    assert t.prob(1) == pytest.approx(0.75)
    assert np.allclose(t.grad(1), 0.1875 * feats(1))
    one = SigmoidTermination(np.zeros(1), OneHotFeatures(1))
    g, H = one.log_grad_hessian(0, True)
    assert np.allclose(g, [0.5]) and np.allclose(H, [[-0.25]])
    g, H = one.log_grad_hessian(0, False)
    assert np.allclose(g, [-0.5]) and np.allclose(H, [[-0.25]])


def test_saturated_termination_names_state():
    t = SigmoidTermination(np.array([80.0]), OneHotFeatures(1))
    with pytest.raises(SaturationError, match="state 0"):
        t.log_grad_hessian(0, True)


def test_derivatives_match_finite_differences():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        worst, rel = policy_fd_errors(rng)
        assert worst < 1e-4
        assert rel < 1e-6


@pytest.mark.parametrize("kind", ["boltzmann", "gaussian", "sigmoid_onehot", "sigmoid_rbf"])
def test_param_csv_roundtrip(tmp_path, kind):
    rng = np.random.default_rng(1)
    f = rbf_grid([-1, -3], [1, 3], 4, 0.7)
    obj = {"boltzmann": BoltzmannTabularPolicy(rng.normal(size=(3, 2)), 0.5),
           "gaussian": GaussianRbfPolicy(rng.normal(size=f.dim), f, 0.02, -4.0, 4.0),
           "sigmoid_onehot": SigmoidTermination(rng.normal(size=5), OneHotFeatures(5)),
           "sigmoid_rbf": SigmoidTermination(rng.normal(size=f.dim), f)}[kind]
    path = tmp_path / "p.csv"
    save_params(path, obj)
    back = load_params(path)
    assert type(back) is type(obj)
    assert np.array_equal(back.params, obj.params)
    s = 1 if kind in ("boltzmann", "sigmoid_onehot") else (0.1, 0.2)
    if kind == "boltzmann":
        assert np.array_equal(back.probs(s), obj.probs(s))
    elif kind == "gaussian":
        assert back.mean(s) == pytest.approx(obj.mean(s), abs=1e-12)
    else:
        assert back.prob(s) == pytest.approx(obj.prob(s), abs=1e-12)
