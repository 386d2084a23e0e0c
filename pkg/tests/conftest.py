"""Shared fixtures: the double-integrator benchmark and random instances."""

import numpy as np
import pytest

from percsched.belief import CostConfig
from percsched.linsys import PerceptionMode, SystemModel


@pytest.fixture(scope="session")
def di_model() -> SystemModel:
    return SystemModel(A=[[0.0, 1.0], [0.0, 0.0]], B=[[0.0], [1.0]],
                       C=[[1.0, 0.0]], W0=np.eye(2))


@pytest.fixture(scope="session")
def di_modes() -> list:
    gain = [[-1.5, -3.0]]
    return [
        PerceptionMode(delta=0.01, sigma=[[0.5]], gain=gain,
                       penalty=1.0, cpu_fraction=1.0),
        PerceptionMode(delta=0.1, sigma=[[0.01]], gain=gain,
                       penalty=1.0, cpu_fraction=0.2),
    ]


@pytest.fixture(scope="session")
def di_M0() -> np.ndarray:
    return np.array([[3.53, -1.10], [-1.10, 1.36]])


@pytest.fixture(scope="session")
def di_cost() -> CostConfig:
    return CostConfig(lambda_x=1.0, lambda_r=0.05, T_f=10.0,
                      Q=np.diag([2.0, 1.0]), Q_f=np.diag([2.0, 1.0]))


def random_model(rng: np.random.Generator, n: int, n_u: int = 1,
                 n_z: int = 1) -> SystemModel:
    A = rng.normal(size=(n, n))
    B = rng.normal(size=(n, n_u))
    C = rng.normal(size=(n_z, n))
    G = rng.normal(size=(n, n))
    W0 = G @ G.T + 0.1 * np.eye(n)
    return SystemModel(A=A, B=B, C=C, W0=W0)


def random_mode(rng: np.random.Generator, model: SystemModel,
                delta: float | None = None) -> PerceptionMode:
    if delta is None:
        delta = float(rng.uniform(0.05, 0.5))
    sigma = np.atleast_2d(rng.uniform(0.05, 1.0) * np.eye(model.n_z))
    gain = rng.normal(size=(model.n_u, model.n))
    return PerceptionMode(delta=delta, sigma=sigma, gain=gain,
                          penalty=float(rng.uniform(0.0, 1.0)),
                          cpu_fraction=float(rng.uniform(0.1, 1.0)))
