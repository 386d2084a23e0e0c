"""Independent reference computations used to cross-check the library.

Everything here deliberately avoids the code paths under test: matrix
exponentials come from truncated Taylor series or pointwise ``scipy`` calls,
integrals from ``quad_vec``, and the schedule-tree optimum from a flat
enumeration over the public belief API.
"""

from math import inf

import numpy as np
from scipy.integrate import quad_vec
from scipy.linalg import expm

from percsched.belief import (
    GaussianBelief, expected_step, interval_running_cost, propagate_moments,
)
from percsched.schedset import switching_law


def taylor_expm(M: np.ndarray, terms: int = 60) -> np.ndarray:
    """Truncated-series matrix exponential; fine for the small, scaled
    matrices the tests feed it."""
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms):
        term = term @ M / k
        out = out + term
    return out


def quad_discretize(A, B, W0, t: float, tol: float = 1e-12):
    """(A_d, B_d, W_d) from pointwise exponentials and adaptive quadrature."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    W0 = np.asarray(W0, dtype=float)
    A_d = expm(A * t)
    B_d = quad_vec(lambda s: expm(A * s) @ B, 0.0, t, epsabs=tol)[0]
    W_d = quad_vec(lambda s: expm(A * s) @ W0 @ expm(A * s).T, 0.0, t,
                   epsabs=tol)[0]
    return A_d, B_d, W_d


def quad_cost_matrices(model, mode, Q, t: float, tol: float = 1e-12):
    """Reference (Q1, Q2, Q12, q3) by direct quadrature.

    Over one hold interval the mean obeys x(s) = A_d(s) x + B_d(s) L xh, so
    Q1 weighs the closed-loop map, Q2 the input map, Q12 their cross term and
    q3 collects the accumulated process-noise trace.
    """
    A = model.A
    B = model.B
    L = mode.gain

    def blocks(s):
        A_s = expm(A * s)
        B_s = quad_vec(lambda r: expm(A * r) @ B, 0.0, s, epsabs=tol)[0] \
            if s > 0 else np.zeros_like(B)
        return A_s, B_s

    def q1_integrand(s):
        A_s, B_s = blocks(s)
        M = A_s + B_s @ L
        return M.T @ Q @ M

    def q2_integrand(s):
        _, B_s = blocks(s)
        return B_s.T @ Q @ B_s

    def q12_integrand(s):
        A_s, B_s = blocks(s)
        return B_s.T @ Q @ (A_s + B_s @ L)

    # q3 = int_0^t tr(Q W_d(s)) ds; swapping the order of integration turns
    # the nested integral into a single weighted one.
    def q3_integrand(r):
        E = expm(A * r)
        return (t - r) * float(np.trace(Q @ E @ model.W0 @ E.T))

    Q1 = quad_vec(q1_integrand, 0.0, t, epsabs=tol)[0]
    Q2 = quad_vec(q2_integrand, 0.0, t, epsabs=tol)[0]
    Q12 = quad_vec(q12_integrand, 0.0, t, epsabs=tol)[0]
    q3 = quad_vec(q3_integrand, 0.0, t, epsabs=tol)[0]
    return Q1, Q2, Q12, float(q3)


def brute_force_plan(T_f: float, belief: GaussianBelief, sets, model, modes,
                     cfg, eps: float = 1e-9):
    """Flat enumeration of every schedule the switching-law tree generates.

    Costs are accumulated with the public single-interval evaluator, so this
    shares no search or pruning logic with the planner.
    """
    cfg = cfg if cfg.T_f == T_f else cfg.with_horizon(T_f)
    best = [inf, None, None]

    def terminal(b: GaussianBelief) -> float:
        return cfg.lambda_x * (float(b.mean @ cfg.Q_f @ b.mean)
                               + float(np.trace(cfg.Q_f @ b.cov)))

    def piece_cost(b: GaussianBelief, gamma, tau: float):
        run = 0.0
        pen = 0.0
        t = tau
        for idx in gamma.modes:
            if t >= cfg.T_f - eps:
                break
            mode = modes[idx - 1]
            pen += mode.penalty
            seg = min(mode.delta, cfg.T_f - t)
            run += interval_running_cost(b, model, mode, cfg.Q, seg)
            if seg < mode.delta - eps:
                mean, cov = propagate_moments(b, model, mode, seg)
                b = GaussianBelief(mean=mean, cov=cov, pred_cov=b.pred_cov)
                t = cfg.T_f
                break
            b = expected_step(b, model, mode, mode_index=idx)
            t += mode.delta
        cost = cfg.lambda_x / cfg.T_f * run + cfg.lambda_r / cfg.T_f * pen
        return cost, b, t

    def rec(tau, b, acc, prefix, root):
        seen = set()
        for j, G in enumerate(sets):
            gamma = switching_law(b.mean, G)
            if gamma.modes in seen:
                continue
            seen.add(gamma.modes)
            cost, b2, t2 = piece_cost(b, gamma, tau)
            r = j if root is None else root
            if t2 < T_f - eps:
                rec(t2, b2, acc + cost, prefix + gamma.modes, r)
            else:
                total = acc + cost + terminal(b2)
                if total < best[0]:
                    best[0], best[1], best[2] = total, prefix + gamma.modes, r

    rec(0.0, belief, 0.0, (), None)
    return best[0], best[1], best[2]
