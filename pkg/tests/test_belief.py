"""Moment propagation, predictor recursion and exact interval costs."""

import numpy as np
import pytest

from conftest import random_mode, random_model
from oracles import quad_cost_matrices
from percsched.belief import (
    CostConfig, GaussianBelief, HorizonNotCoveredError, evaluate_cost,
    expected_step, interval_cost_matrices, interval_running_cost,
    kalman_predict, propagate_moments,
)
from percsched.linsys import PerceptionMode, SystemModel, discretize


def _random_belief(rng, n):
    """A belief whose covariances satisfy cov >= pred_cov, as produced by
    the predictor (state = estimate + orthogonal error)."""
    mean = rng.normal(size=n)
    G = rng.normal(size=(n, n))
    S = G @ G.T + 0.1 * np.eye(n)          # cov of the estimate
    G2 = rng.normal(size=(n, n))
    Phat = G2 @ G2.T + 0.1 * np.eye(n)     # cov of the prediction error
    return GaussianBelief(mean=mean, cov=S + Phat, pred_cov=Phat), S


def test_interval_cost_matrices_match_quadrature():
    rng = np.random.default_rng(21)
    for _ in range(10):
        n = int(rng.integers(1, 4))
        model = random_model(rng, n, n_u=int(rng.integers(1, 3)))
        mode = random_mode(rng, model)
        G = rng.normal(size=(n, n))
        Q = G @ G.T
        t = float(rng.uniform(0.05, mode.delta))
        Q1, Q2, Q12, q3 = interval_cost_matrices(model, mode, Q, t)
        Q1r, Q2r, Q12r, q3r = quad_cost_matrices(model, mode, Q, t)
        np.testing.assert_allclose(Q1, Q1r, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(Q2, Q2r, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(Q12, Q12r, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(q3, q3r, rtol=1e-8, atol=1e-10)


def test_gramian_additivity():
    # the augmented-system cost Gramian G(t) obeys
    # G(t1+t2) = G(t1) + E(t1)^T G(t2) E(t1) with E the augmented transition;
    # G is recovered from (Q1, Q2, Q12) through the invertible stacking
    # K = [[I, 0], [L, I]].
    rng = np.random.default_rng(22)
    for _ in range(15):
        n = int(rng.integers(1, 4))
        n_u = int(rng.integers(1, 3))
        model = random_model(rng, n, n_u=n_u)
        mode = random_mode(rng, model)
        G = rng.normal(size=(n, n))
        Q = G @ G.T

        def gram(t):
            Q1, Q2, Q12, _ = interval_cost_matrices(model, mode, Q, t)
            Gt = np.block([[Q1, Q12.T], [Q12, Q2]])
            K = np.block([[np.eye(n), np.zeros((n, n_u))],
                          [mode.gain, np.eye(n_u)]])
            Ki = np.linalg.inv(K)
            return Ki.T @ Gt @ Ki

        t1 = float(rng.uniform(0.02, mode.delta / 2))
        t2 = float(rng.uniform(0.02, mode.delta / 2))
        d1 = discretize(model, mode, interval=t1)
        E1 = np.block([[d1.A_d, d1.B_d],
                       [np.zeros((n_u, n)), np.eye(n_u)]])
        lhs = gram(t1 + t2)
        rhs = gram(t1) + E1.T @ gram(t2) @ E1
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


def test_moments_match_vectorized_simulation(di_model, di_modes):
    # exact one-interval closed loop, 2e5 joint samples of (estimate, error)
    rng = np.random.default_rng(23)
    mode = di_modes[1]
    belief, S = _random_belief(rng, 2)
    dm = discretize(di_model, mode)
    N = 200_000
    xh = belief.mean + rng.multivariate_normal(np.zeros(2), S, size=N)
    e = rng.multivariate_normal(np.zeros(2), belief.pred_cov, size=N)
    x = xh + e
    w = rng.multivariate_normal(np.zeros(2), dm.W_d, size=N)
    u = xh @ mode.gain.T
    x_next = x @ dm.A_d.T + u @ dm.B_d.T + w

    mean_ref, cov_ref = propagate_moments(belief, di_model, mode, mode.delta)
    np.testing.assert_allclose(x_next.mean(axis=0), mean_ref,
                               atol=4 * np.sqrt(cov_ref.max() / N) * 3)
    emp = np.cov(x_next.T)
    np.testing.assert_allclose(emp, cov_ref, rtol=0.03, atol=0.03)


def test_predictor_error_covariance_matches_simulation(di_model, di_modes):
    # same joint sampling, now pushing the measurement update as well
    rng = np.random.default_rng(24)
    mode = di_modes[0]
    belief, S = _random_belief(rng, 2)
    dm = discretize(di_model, mode)
    C = di_model.C
    N = 200_000
    xh = belief.mean + rng.multivariate_normal(np.zeros(2), S, size=N)
    e = rng.multivariate_normal(np.zeros(2), belief.pred_cov, size=N)
    x = xh + e
    v = rng.multivariate_normal(np.zeros(1), mode.sigma, size=N)
    z = x @ C.T + v
    u = xh @ mode.gain.T
    w = rng.multivariate_normal(np.zeros(2), dm.W_d, size=N)
    x_next = x @ dm.A_d.T + u @ dm.B_d.T + w

    Sm = C @ belief.pred_cov @ C.T + mode.sigma
    H = np.linalg.solve(Sm.T, (dm.A_d @ belief.pred_cov @ C.T).T).T
    xh_next = xh @ dm.A_d.T + u @ dm.B_d.T + (z - xh @ C.T) @ H.T

    out = expected_step(belief, di_model, mode)
    err = xh_next - x_next
    np.testing.assert_allclose(err.mean(axis=0), 0.0, atol=0.02)
    np.testing.assert_allclose(np.cov(err.T), out.pred_cov,
                               rtol=0.03, atol=0.01)
    # the next estimate stays uncorrelated with the next error
    est_err = np.hstack([xh_next, err])
    joint = np.cov(est_err.T)
    np.testing.assert_allclose(joint[:2, 2:], 0.0, atol=0.05)


def test_kalman_predict_matches_scalar_recursion():
    model = SystemModel(A=[[-0.4]], B=[[1.0]], C=[[1.0]], W0=[[0.3]])
    mode = PerceptionMode(delta=0.2, sigma=[[0.6]], gain=[[-0.8]],
                          penalty=1.0, cpu_fraction=0.5)
    dm = discretize(model, mode)
    a_d = dm.A_d.item()
    b_d = dm.B_d.item()
    w_d = dm.W_d.item()
    rng = np.random.default_rng(25)
    belief = GaussianBelief(mean=[1.0], cov=[[1.0]], pred_cov=[[1.0]])
    m_ref, p_ref = 1.0, 1.0
    for _ in range(6):
        z = float(rng.normal())
        u = (mode.gain @ belief.mean).item()
        belief = kalman_predict(belief, dm, mode, [z], [u], model.C)
        # textbook scalar predictor
        h = a_d * p_ref / (p_ref + 0.6)
        m_ref = a_d * m_ref + b_d * u + h * (z - m_ref)
        p_ref = a_d ** 2 * p_ref * 0.6 / (p_ref + 0.6) + w_d
        assert belief.mean[0] == pytest.approx(m_ref, rel=1e-12)
        assert belief.pred_cov[0, 0] == pytest.approx(p_ref, rel=1e-12)


def test_riccati_recursion_converges(di_model, di_modes):
    belief = GaussianBelief.initial([0.0, 0.0], np.eye(2))
    prev = None
    for _ in range(200):
        belief = expected_step(belief, di_model, di_modes[1], mode_index=2)
        cur = belief.pred_cov
        if prev is not None and np.abs(cur - prev).max() < 1e-12:
            break
        prev = cur
    assert np.abs(cur - prev).max() < 1e-12
    assert np.linalg.eigvalsh(cur).min() > 0


def test_closed_form_interval_cost_matches_quadrature(di_model, di_modes):
    rng = np.random.default_rng(26)
    Q = np.diag([2.0, 1.0])
    belief, _ = _random_belief(rng, 2)
    for mode in di_modes:
        closed = interval_running_cost(belief, di_model, mode, Q, mode.delta)

        def integrand(s, mode=mode):
            mean, cov = propagate_moments(belief, di_model, mode, s)
            return float(mean @ Q @ mean) + float(np.trace(Q @ cov))

        from percsched.belief import adaptive_quadrature
        ref = adaptive_quadrature(integrand, 0.0, mode.delta, tol=1e-12)
        assert closed == pytest.approx(ref, rel=1e-9, abs=1e-11)


def test_evaluate_cost_matches_closed_form_chain(di_model, di_modes, di_cost):
    # schedule of 100 slow intervals covers T_f = 10 exactly
    schedule = [2] * 100
    belief = GaussianBelief.initial([1.0, 1.0], np.eye(2))
    breakdown = evaluate_cost(schedule, belief, di_model, di_modes, di_cost)

    b = belief
    running = 0.0
    for idx in schedule:
        running += interval_running_cost(b, di_model, di_modes[idx - 1],
                                         di_cost.Q, di_modes[idx - 1].delta)
        b = expected_step(b, di_model, di_modes[idx - 1], mode_index=idx)
    terminal = float(b.mean @ di_cost.Q_f @ b.mean) + float(np.trace(di_cost.Q_f @ b.cov))
    total = (di_cost.lambda_x * (running / di_cost.T_f + terminal)
             + di_cost.lambda_r / di_cost.T_f * 100)
    assert breakdown.total == pytest.approx(total, rel=1e-8)
    assert breakdown.attention_count == 100


def test_evaluate_cost_errors(di_model, di_modes, di_cost):
    belief = GaussianBelief.initial([1.0, 1.0], np.eye(2))
    with pytest.raises(HorizonNotCoveredError):
        evaluate_cost([2] * 10, belief, di_model, di_modes, di_cost)
    with pytest.raises(ValueError):
        evaluate_cost([0, 2], belief, di_model, di_modes, di_cost)
    with pytest.raises(ValueError):
        evaluate_cost([3] * 200, belief, di_model, di_modes, di_cost)


def test_propagate_moments_rejects_bad_offset(di_model, di_modes):
    belief = GaussianBelief.initial([1.0, 1.0], np.eye(2))
    with pytest.raises(ValueError):
        propagate_moments(belief, di_model, di_modes[0], -0.01)
    with pytest.raises(ValueError):
        propagate_moments(belief, di_model, di_modes[0], 1.0)


def test_belief_and_cost_validation():
    with pytest.raises(ValueError):
        GaussianBelief(mean=[1.0], cov=[[1.0, 0.0]], pred_cov=[[1.0]])
    with pytest.raises(ValueError):
        GaussianBelief.initial([1.0], [[-1.0]])
    with pytest.raises(ValueError):
        CostConfig(lambda_x=-1.0, lambda_r=0.0, T_f=1.0, Q=[[1.0]], Q_f=[[1.0]])
    with pytest.raises(ValueError):
        CostConfig(lambda_x=1.0, lambda_r=0.0, T_f=0.0, Q=[[1.0]], Q_f=[[1.0]])
    with pytest.raises(ValueError):
        CostConfig(lambda_x=1.0, lambda_r=0.0, T_f=1.0, Q=[[-1.0]], Q_f=[[1.0]])
