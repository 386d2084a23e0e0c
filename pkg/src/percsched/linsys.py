"""Continuous-time model representation and exact discretization.

Discretizing over a latency interval ``t`` produces the open-loop transition
matrix ``A_d(t) = exp(A t)``, the held-input matrix
``B_d(t) = int_0^t exp(A s) ds B``, the noise Gramian
``W_d(t) = int_0^t exp(A s) W0 exp(A s)^T ds`` and the closed-loop matrix
``Lambda(t) = A_d(t) + B_d(t) L``.  All four are computed with augmented
matrix exponentials (Van Loan blocks), so they are exact to the accuracy of
scaling-and-squaring, with no quadrature error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm


def as_matrix(value, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float array, raising on non-finite entries."""
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def is_symmetric_psd(M: np.ndarray, tol: float = 1e-10) -> bool:
    if M.shape[0] != M.shape[1]:
        return False
    if not np.allclose(M, M.T, atol=tol * max(1.0, float(np.abs(M).max()))):
        return False
    return float(np.linalg.eigvalsh(symmetrize(M)).min()) >= -tol


def is_symmetric_pd(M: np.ndarray, tol: float = 1e-12) -> bool:
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=1e-10):
        return False
    return float(np.linalg.eigvalsh(symmetrize(M)).min()) > tol


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Plant ``dx = (A x + B u[k]) dt + dw`` with diffusion intensity W0.

    ``C`` is the measurement matrix shared by all perception modes; each
    mode only changes the measurement noise covariance.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    W0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", as_matrix(self.A, "A"))
        object.__setattr__(self, "B", as_matrix(self.B, "B"))
        object.__setattr__(self, "C", as_matrix(self.C, "C"))
        object.__setattr__(self, "W0", symmetrize(as_matrix(self.W0, "W0")))
        n = self.A.shape[0]
        if n < 1 or self.A.shape != (n, n):
            raise ValueError("A must be square with n >= 1")
        if self.B.shape[0] != n:
            raise ValueError(f"B has {self.B.shape[0]} rows, expected {n}")
        if self.C.shape[1] != n:
            raise ValueError(f"C has {self.C.shape[1]} columns, expected {n}")
        if self.W0.shape != (n, n):
            raise ValueError(f"W0 must be {n}x{n}")
        if not is_symmetric_psd(self.W0, tol=1e-9):
            raise ValueError("W0 must be symmetric positive semi-definite")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_z(self) -> int:
        return self.C.shape[0]

    def cache_key(self) -> tuple:
        return (self.A.tobytes(), self.B.tobytes(), self.W0.tobytes())


@dataclass(frozen=True, eq=False)
class PerceptionMode:
    """One of the D perception modes.

    ``delta`` is the perception latency (also the inter-sample interval),
    ``sigma`` the measurement noise covariance, ``gain`` the feedback gain
    applied to the one-step predicted state, ``penalty`` the per-sample cost
    penalty and ``cpu_fraction`` the fraction of the latency interval during
    which the perception pipeline occupies the compute unit.
    """

    delta: float
    sigma: np.ndarray
    gain: np.ndarray
    penalty: float
    cpu_fraction: float

    def __post_init__(self):
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "sigma", symmetrize(as_matrix(self.sigma, "sigma")))
        object.__setattr__(self, "gain", as_matrix(self.gain, "gain"))
        object.__setattr__(self, "penalty", float(self.penalty))
        object.__setattr__(self, "cpu_fraction", float(self.cpu_fraction))
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not is_symmetric_psd(self.sigma, tol=1e-9):
            raise ValueError("sigma must be symmetric positive semi-definite")
        if self.penalty < 0:
            raise ValueError("penalty must be non-negative")
        if not 0.0 <= self.cpu_fraction <= 1.0:
            raise ValueError("cpu_fraction must lie in [0, 1]")

    def cache_key(self) -> tuple:
        return (self.gain.tobytes(), self.sigma.tobytes(), self.delta)


@dataclass(frozen=True, eq=False)
class DiscretizedMode:
    """Exact discretization of a mode over an interval of given length."""

    A_d: np.ndarray
    B_d: np.ndarray
    W_d: np.ndarray
    Lambda: np.ndarray
    mode_index: int
    interval: float = field(default=0.0)


# Discretizations are reused millions of times by the simulator and planner;
# key on matrix content so equal models built independently share entries.
_DISCRETIZE_CACHE: dict[tuple, DiscretizedMode] = {}


def _van_loan_blocks(model: SystemModel, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (A_d, B_d, W_d) at interval length t via augmented exponentials."""
    n, n_u = model.n, model.n_u
    # exp([[A, B], [0, 0]] t) = [[A_d, B_d], [0, I]]
    aug = np.zeros((n + n_u, n + n_u))
    aug[:n, :n] = model.A
    aug[:n, n:] = model.B
    E = expm(aug * t)
    A_d = E[:n, :n]
    B_d = E[:n, n:]
    # exp([[-A, W0], [0, A^T]] t) -> W_d = F3^T @ F2 with F3 = exp(A^T t)
    aug2 = np.zeros((2 * n, 2 * n))
    aug2[:n, :n] = -model.A
    aug2[:n, n:] = model.W0
    aug2[n:, n:] = model.A.T
    E2 = expm(aug2 * t)
    W_d = symmetrize(E2[n:, n:].T @ E2[:n, n:])
    return A_d, B_d, W_d


def discretize(model: SystemModel, mode: PerceptionMode, interval: float | None = None,
               mode_index: int = 1) -> DiscretizedMode:
    """Discretize ``model`` under ``mode`` over ``interval`` (default: the
    mode's full latency).

    Results are cached per (model, mode, interval) and immutable thereafter.
    """
    t = mode.delta if interval is None else float(interval)
    if t < 0:
        raise ValueError("interval must be non-negative")
    if mode.gain.shape != (model.n_u, model.n):
        raise ValueError(
            f"gain shape {mode.gain.shape} incompatible with system ({model.n_u}x{model.n})")
    key = (model.cache_key(), mode.cache_key(), t, mode_index)
    hit = _DISCRETIZE_CACHE.get(key)
    if hit is not None:
        return hit
    A_d, B_d, W_d = _van_loan_blocks(model, t)
    Lam = A_d + B_d @ mode.gain
    dm = DiscretizedMode(A_d=A_d, B_d=B_d, W_d=W_d, Lambda=Lam,
                         mode_index=mode_index, interval=t)
    _DISCRETIZE_CACHE[key] = dm
    return dm


def discretize_all(model: SystemModel, modes: list[PerceptionMode]) -> list[DiscretizedMode]:
    """Discretize every mode over its own latency; mode indices are 1-based."""
    return [discretize(model, mode, mode_index=i + 1) for i, mode in enumerate(modes)]


def chain_matrix(dms) -> np.ndarray:
    """Product of closed-loop matrices for a schedule, last mode leftmost.

    For a schedule gamma applied in order gamma_0, gamma_1, ..., the mean
    state after the schedule is ``Lambda(gamma_{l-1}) ... Lambda(gamma_0) x``.
    """
    dms = list(dms)
    if not dms:
        raise ValueError("chain_matrix requires a non-empty sequence")
    out = dms[0].Lambda
    for dm in dms[1:]:
        if dm.Lambda.shape != out.shape:
            raise ValueError("inconsistent dimensions in chain")
        out = dm.Lambda @ out
    return out
