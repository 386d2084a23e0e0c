"""Prediction-form Kalman estimator, moment propagation and cost evaluation.

The closed loop uses the one-step predictor ``xhat[k|k-1]`` (no posterior
filtering step is ever needed by the controller).  Between sampling instants
the state is Gaussian with mean ``Lambda(s) xbar[k]`` and covariance

    P(s) = Lam P Lam^T - Lam Phat (B_d L)^T - (B_d L) Phat Lam^T
           + (B_d L) Phat (B_d L)^T + W_d(s)

where ``Lam = Lambda(s)``.  The cross terms come from the correlation
between the state and the prediction error (cov(x, x - xhat) = Phat, since
the error is orthogonal to the estimate); dropping them overestimates the
covariance and shows up against Monte Carlo immediately.

The latency-precision cost over ``[0, T_f]`` is evaluated in deterministic
form: the running term integrates ``xbar^T Q xbar + tr(Q P)``, a terminal
term weighs ``Q_f`` at ``T_f``, and each sampling instant in ``[0, T_f)``
adds its mode penalty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from percsched.linsys import (
    SystemModel, PerceptionMode, DiscretizedMode,
    as_matrix, discretize, is_symmetric_psd, symmetrize,
)


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """State distribution: mean, covariance and predictor error covariance.

    ``pred_cov`` is the covariance of ``xhat[k|k-1] - x[k]``; it follows the
    Riccati recursion and is seeded with ``P0``.
    """

    mean: np.ndarray
    cov: np.ndarray
    pred_cov: np.ndarray

    def __post_init__(self):
        # Beliefs are constructed millions of times inside the planner, so
        # only cheap shape/finiteness checks run here; PSD-ness is enforced
        # at the construction sites that take user input (validate()).
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(-1))
        object.__setattr__(self, "cov", symmetrize(as_matrix(self.cov, "cov")))
        object.__setattr__(self, "pred_cov", symmetrize(as_matrix(self.pred_cov, "pred_cov")))
        n = self.mean.shape[0]
        if self.cov.shape != (n, n) or self.pred_cov.shape != (n, n):
            raise ValueError("covariance dimensions inconsistent with mean")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.cov))
                and np.all(np.isfinite(self.pred_cov))):
            raise ValueError("belief has non-finite entries")

    def validate(self) -> "GaussianBelief":
        """Full PSD validation; use when the belief comes from user input."""
        if not is_symmetric_psd(self.cov, tol=1e-8):
            raise ValueError("cov must be symmetric PSD")
        if not is_symmetric_psd(self.pred_cov, tol=1e-8):
            raise ValueError("pred_cov must be symmetric PSD")
        return self

    @classmethod
    def initial(cls, x0, P0) -> "GaussianBelief":
        """Belief at t=0: mean x0, cov P0 and predictor seeded at P0."""
        return cls(mean=x0, cov=P0, pred_cov=P0).validate()


@dataclass(frozen=True, eq=False)
class CostConfig:
    lambda_x: float
    lambda_r: float
    T_f: float
    Q: np.ndarray
    Q_f: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lambda_x", float(self.lambda_x))
        object.__setattr__(self, "lambda_r", float(self.lambda_r))
        object.__setattr__(self, "T_f", float(self.T_f))
        object.__setattr__(self, "Q", symmetrize(as_matrix(self.Q, "Q")))
        object.__setattr__(self, "Q_f", symmetrize(as_matrix(self.Q_f, "Q_f")))
        if self.lambda_x < 0 or self.lambda_r < 0:
            raise ValueError("lambda_x and lambda_r must be non-negative")
        if not self.T_f > 0:
            raise ValueError("T_f must be positive")
        if not is_symmetric_psd(self.Q, tol=1e-9):
            raise ValueError("Q must be symmetric PSD")
        if not is_symmetric_psd(self.Q_f, tol=1e-9):
            raise ValueError("Q_f must be symmetric PSD")

    def with_horizon(self, T_f: float) -> "CostConfig":
        return CostConfig(self.lambda_x, self.lambda_r, T_f, self.Q, self.Q_f)


@dataclass(frozen=True)
class CostBreakdown:
    """Cost terms; ``state_running`` and ``state_terminal`` are unweighted,
    ``total`` applies lambda_x.  ``attention_count`` counts sampling instants
    in ``[0, T_f)`` (an instant exactly at T_f is not counted)."""

    state_running: float
    state_terminal: float
    attention_penalty: float
    total: float
    attention_count: int


class SingularInnovationError(np.linalg.LinAlgError):
    """Innovation covariance too ill-conditioned to invert."""


def kalman_predict(belief: GaussianBelief, dm: DiscretizedMode, mode: PerceptionMode,
                   measurement, control, C) -> GaussianBelief:
    """One-step predictor update given measurement z[k] and held input u[k].

    Returns the belief at the next sampling instant: the predictor mean
    ``xhat[k+1|k]``, predictor covariance ``Phat[k+1]`` and the matching
    unconditional state covariance ``P[k+1]``.
    """
    C = as_matrix(C, "C")
    z = np.asarray(measurement, dtype=float).reshape(-1)
    u = np.asarray(control, dtype=float).reshape(-1)
    if not np.all(np.isfinite(z)):
        raise ValueError("measurement has non-finite entries")
    Phat = belief.pred_cov
    S = C @ Phat @ C.T + mode.sigma
    if np.linalg.cond(S) > 1e12:
        raise SingularInnovationError("innovation covariance is numerically singular")
    H = np.linalg.solve(S.T, (dm.A_d @ Phat @ C.T).T).T
    mean = dm.A_d @ belief.mean + dm.B_d @ u + H @ (z - C @ belief.mean)
    Phat_next = symmetrize((dm.A_d - H @ C) @ Phat @ dm.A_d.T + dm.W_d)
    cov_next = _state_cov(belief, dm, mode)
    return GaussianBelief(mean=mean, cov=cov_next, pred_cov=Phat_next)


def _state_cov(belief: GaussianBelief, dm: DiscretizedMode,
               mode: PerceptionMode) -> np.ndarray:
    """Unconditional covariance after the (partial) interval in ``dm``."""
    BL = dm.B_d @ mode.gain
    cross = dm.Lambda @ belief.pred_cov @ BL.T
    return symmetrize(dm.Lambda @ belief.cov @ dm.Lambda.T
                      - cross - cross.T + BL @ belief.pred_cov @ BL.T + dm.W_d)


def propagate_moments(belief: GaussianBelief, model: SystemModel, mode: PerceptionMode,
                      t_offset: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of x(tau_k + t_offset) within one latency interval."""
    if not 0.0 <= t_offset <= mode.delta + 1e-12:
        raise ValueError(f"t_offset {t_offset} outside [0, {mode.delta}]")
    dm = discretize(model, mode, interval=min(t_offset, mode.delta))
    return dm.Lambda @ belief.mean, _state_cov(belief, dm, mode)


def expected_step(belief: GaussianBelief, model: SystemModel, mode: PerceptionMode,
                  mode_index: int = 1) -> GaussianBelief:
    """Deterministic one-interval update of (mean, cov, pred_cov).

    This is the measurement-expectation closure of the loop: the innovation
    is zero in expectation, so the mean follows the closed-loop matrix and
    only ``pred_cov`` sees the Riccati update.
    """
    dm = discretize(model, mode, mode_index=mode_index)
    mean, cov = propagate_moments(belief, model, mode, mode.delta)
    C = model.C
    Phat = belief.pred_cov
    S = C @ Phat @ C.T + mode.sigma
    H = np.linalg.solve(S.T, (dm.A_d @ Phat @ C.T).T).T
    Phat_next = symmetrize((dm.A_d - H @ C) @ Phat @ dm.A_d.T + dm.W_d)
    return GaussianBelief(mean=mean, cov=cov, pred_cov=Phat_next)


# ---------------------------------------------------------------------------
# Quadrature

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(15)


def _gl15(f, a: float, b: float) -> float:
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    return half * sum(w * f(mid + half * x) for x, w in zip(_GL_NODES, _GL_WEIGHTS))


def adaptive_quadrature(f, a: float, b: float, tol: float = 1e-8,
                        max_depth: int = 24) -> float:
    """Adaptive 15-point Gauss-Legendre with interval bisection."""
    if b <= a:
        return 0.0

    def refine(lo, hi, whole, tol, depth):
        mid = 0.5 * (lo + hi)
        left = _gl15(f, lo, mid)
        right = _gl15(f, mid, hi)
        if abs(left + right - whole) < tol or depth >= max_depth:
            return left + right
        return (refine(lo, mid, left, 0.5 * tol, depth + 1)
                + refine(mid, hi, right, 0.5 * tol, depth + 1))

    return refine(a, b, _gl15(f, a, b), tol, 0)


# ---------------------------------------------------------------------------
# Exact interval integrals of the running cost (used by the planner)

_COST_GRAM_CACHE: dict[tuple, tuple] = {}


def interval_cost_matrices(model: SystemModel, mode: PerceptionMode, Q: np.ndarray,
                           t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Matrices (Q1, Q2, Q12, q3) so that for any belief at the interval start,

        int_0^t xbar(s)^T Q xbar(s) + tr(Q P(s)) ds
          = xbar^T Q1 xbar + tr(Q1 P)
            + tr(Phat (L^T Q2 L - 2 L^T Q12)) + q3

    with Q1 = int Lam^T Q Lam, Q2 = int B_d^T Q B_d and the cross block
    Q12 = int B_d^T Q Lam.  Computed exactly with augmented matrix
    exponentials; no quadrature.
    """
    t = float(t)
    key = (model.cache_key(), mode.gain.tobytes(), Q.tobytes(), t)
    hit = _COST_GRAM_CACHE.get(key)
    if hit is not None:
        return hit
    n, n_u = model.n, model.n_u
    m = n + n_u
    # F generates [Lambda(s); L] = exp(F s) [I; L] in its top rows.
    F = np.zeros((m, m))
    F[:n, :n] = model.A
    F[:n, n:] = model.B
    Qt = np.zeros((m, m))
    Qt[:n, :n] = Q
    # Gram = int exp(F^T s) Qt exp(F s) ds  via Van Loan on [[-F^T, Qt],[0, F]]
    C1 = np.zeros((2 * m, 2 * m))
    C1[:m, :m] = -F.T
    C1[:m, m:] = Qt
    C1[m:, m:] = F
    E1 = expm(C1 * t)
    gram = E1[m:, m:].T @ E1[:m, m:]
    J = np.vstack([np.eye(n), mode.gain])
    Ju = np.vstack([np.zeros((n, n_u)), np.eye(n_u)])
    Q1 = symmetrize(J.T @ gram @ J)
    Q2 = symmetrize(Ju.T @ gram @ Ju)
    Q12 = Ju.T @ gram @ J
    # q3 = tr(Q K(t)), K(t) = int_0^t W_d(s) ds = t W_d(t) - int_0^t s f(s) ds
    # with f(s) = exp(A s) W0 exp(A^T s).  The s-weighted Gramian comes from
    # the doubled system [[A, I],[0, A]] with source [[0, W0],[0, 0]].
    Abar = np.zeros((2 * n, 2 * n))
    Abar[:n, :n] = model.A
    Abar[:n, n:] = np.eye(n)
    Abar[n:, n:] = model.A
    Wbar = np.zeros((2 * n, 2 * n))
    Wbar[:n, n:] = model.W0
    C2 = np.zeros((4 * n, 4 * n))
    C2[:2 * n, :2 * n] = -Abar
    C2[:2 * n, 2 * n:] = Wbar
    C2[2 * n:, 2 * n:] = Abar.T
    E2 = expm(C2 * t)
    gram2 = E2[2 * n:, 2 * n:].T @ E2[:2 * n, 2 * n:]
    S_weighted = gram2[:n, :n]              # int_0^t s f(s) ds
    W_d_t = discretize(model, mode, interval=t).W_d
    K = t * W_d_t - S_weighted
    q3 = float(np.trace(Q @ K))
    out = (Q1, Q2, Q12, q3)
    _COST_GRAM_CACHE[key] = out
    return out


def interval_running_cost(belief: GaussianBelief, model: SystemModel,
                          mode: PerceptionMode, Q: np.ndarray, t: float) -> float:
    """Exact value of the running-cost integral over one (partial) interval."""
    Q1, Q2, Q12, q3 = interval_cost_matrices(model, mode, Q, t)
    L = mode.gain
    Phat_weight = L.T @ Q2 @ L - 2.0 * L.T @ Q12
    return (float(belief.mean @ Q1 @ belief.mean)
            + float(np.trace(Q1 @ belief.cov))
            + float(np.trace(Phat_weight @ belief.pred_cov))
            + q3)


# ---------------------------------------------------------------------------
# Cost functional

class HorizonNotCoveredError(ValueError):
    """The schedule's accumulated latency does not reach T_f."""


def evaluate_cost(schedule, belief0: GaussianBelief, model: SystemModel,
                  modes: list[PerceptionMode], cfg: CostConfig,
                  quad_tol: float = 1e-8) -> CostBreakdown:
    """Deterministic evaluation of the latency-precision cost of a schedule.

    ``schedule`` is an iterable of 1-based mode indices; it must cover
    ``[0, T_f]``.  The running term is integrated per inter-sample interval
    with adaptive Gauss-Legendre quadrature.
    """
    seq = [int(i) for i in getattr(schedule, "modes", schedule)]
    if any(i < 1 or i > len(modes) for i in seq):
        raise ValueError("schedule contains an invalid mode index")
    if sum(modes[i - 1].delta for i in seq) < cfg.T_f - 1e-12:
        raise HorizonNotCoveredError(
            "schedule latencies do not cover the horizon [0, T_f]")

    belief = belief0
    tau = 0.0
    running = 0.0
    penalties = 0.0
    attention = 0

    for idx in seq:
        if tau >= cfg.T_f - 1e-12:
            break
        mode = modes[idx - 1]
        attention += 1
        penalties += mode.penalty
        seg_end = min(mode.delta, cfg.T_f - tau)
        b = belief

        def integrand(s, b=b, mode=mode):
            mean, cov = propagate_moments(b, model, mode, s)
            return float(mean @ cfg.Q @ mean) + float(np.trace(cfg.Q @ cov))

        running += adaptive_quadrature(integrand, 0.0, seg_end, tol=quad_tol)
        if seg_end < mode.delta:         # horizon ends mid-interval
            mean_T, cov_T = propagate_moments(belief, model, mode, seg_end)
            belief = GaussianBelief(mean=mean_T, cov=cov_T, pred_cov=belief.pred_cov)
            tau = cfg.T_f
            break
        belief = expected_step(belief, model, mode, mode_index=idx)
        tau += mode.delta

    state_running = running / cfg.T_f
    state_terminal = (float(belief.mean @ cfg.Q_f @ belief.mean)
                      + float(np.trace(cfg.Q_f @ belief.cov)))
    attention_penalty = cfg.lambda_r / cfg.T_f * penalties
    total = cfg.lambda_x * (state_running + state_terminal) + attention_penalty
    return CostBreakdown(state_running=state_running, state_terminal=state_terminal,
                         attention_penalty=attention_penalty, total=total,
                         attention_count=attention)
