"""Experiment configuration: JSON in, validated model/modes/cost/sim out.

Validation errors carry the JSON path of the offending field
(e.g. ``modes[1].sigma: not positive semidefinite``) so a bad config is
diagnosable without a debugger.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from percsched.belief import CostConfig
from percsched.linsys import PerceptionMode, SystemModel, is_symmetric_pd, is_symmetric_psd
from percsched.simlab import SimConfig


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the JSON path."""


def _fail(path: str, msg: str):
    raise ConfigError(f"{path}: {msg}")


def _get(d: dict, key: str, path: str):
    if key not in d:
        _fail(path, f"missing required key '{key}'")
    return d[key]


def _matrix(value, path: str, shape=None) -> np.ndarray:
    try:
        M = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        _fail(path, "not a numeric array")
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim == 1:
        M = M.reshape(1, -1)
    if shape is not None and M.shape != shape:
        _fail(path, f"expected shape {shape}, got {M.shape}")
    if not np.all(np.isfinite(M)):
        _fail(path, "contains non-finite entries")
    return M


def _scalar(value, path: str, positive=False) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        _fail(path, "not a number")
    if not np.isfinite(v):
        _fail(path, "not finite")
    if positive and v <= 0:
        _fail(path, "must be > 0")
    return v


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    model: SystemModel
    modes: list[PerceptionMode]
    cost: CostConfig
    sim: SimConfig
    M0: np.ndarray | None
    ell: int
    num_sets: int
    lookahead: float

    @classmethod
    def from_dict(cls, raw: dict, root: str = "") -> "ExperimentConfig":
        if not isinstance(raw, dict):
            _fail(root or "<root>", "top level must be a JSON object")
        name = str(raw.get("name", "experiment"))

        sysd = _get(raw, "system", root + "system")
        A = _matrix(_get(sysd, "A", "system.A"), "system.A")
        n = A.shape[0]
        if A.shape != (n, n):
            _fail("system.A", "must be square")
        B = _matrix(_get(sysd, "B", "system.B"), "system.B")
        if B.shape == (1, n) and n > 1:      # allow flat row input for a column
            B = B.T
        if B.shape[0] != n:
            _fail("system.B", f"row count must match A ({n})")
        C = _matrix(_get(sysd, "C", "system.C"), "system.C")
        if C.shape[1] != n:
            _fail("system.C", f"column count must match A ({n})")
        W0raw = _get(sysd, "W0", "system.W0")
        W0 = _matrix(W0raw, "system.W0")
        if W0.shape == (1, 1) and n > 1:
            W0 = W0.item() * np.eye(n)       # scalar intensity means isotropic noise
        if W0.shape != (n, n) or not is_symmetric_psd(W0):
            _fail("system.W0", "not a symmetric PSD n-by-n matrix")
        model = SystemModel(A=A, B=B, C=C, W0=W0)

        modes_raw = _get(raw, "modes", "modes")
        if not isinstance(modes_raw, list) or not modes_raw:
            _fail("modes", "must be a non-empty list")
        modes = []
        for i, md in enumerate(modes_raw):
            p = f"modes[{i}]"
            delta = _scalar(_get(md, "delta", p + ".delta"), p + ".delta", positive=True)
            sigma = _matrix(_get(md, "sigma", p + ".sigma"), p + ".sigma")
            nz = model.n_z
            if sigma.shape == (1, 1) and nz > 1:
                sigma = sigma.item() * np.eye(nz)
            if sigma.shape != (nz, nz) or not is_symmetric_psd(sigma):
                _fail(p + ".sigma", "not symmetric PSD with measurement dimension")
            gain = _matrix(_get(md, "gain", p + ".gain"), p + ".gain")
            if gain.shape != (model.n_u, n):
                _fail(p + ".gain", f"expected shape {(model.n_u, n)}, got {gain.shape}")
            penalty = _scalar(_get(md, "penalty", p + ".penalty"), p + ".penalty")
            if penalty < 0:
                _fail(p + ".penalty", "must be >= 0")
            cpu = _scalar(md.get("cpu_fraction", 1.0), p + ".cpu_fraction")
            if not 0 <= cpu <= 1:
                _fail(p + ".cpu_fraction", "must lie in [0, 1]")
            modes.append(PerceptionMode(delta=delta, sigma=sigma, gain=gain,
                                        penalty=penalty, cpu_fraction=cpu))

        costd = _get(raw, "cost", "cost")
        Q = _matrix(_get(costd, "Q", "cost.Q"), "cost.Q", shape=(n, n))
        if not is_symmetric_psd(Q):
            _fail("cost.Q", "not symmetric PSD")
        Qf = _matrix(costd.get("Q_f", Q), "cost.Q_f", shape=(n, n))
        if not is_symmetric_psd(Qf):
            _fail("cost.Q_f", "not symmetric PSD")
        lam_x = _scalar(costd.get("lambda_x", 1.0), "cost.lambda_x")
        lam_r = _scalar(costd.get("lambda_r", 0.0), "cost.lambda_r")
        if lam_x < 0 or lam_r < 0:
            _fail("cost", "lambda_x and lambda_r must be >= 0")
        T_f = _scalar(_get(costd, "T_f", "cost.T_f"), "cost.T_f", positive=True)
        cost = CostConfig(lambda_x=lam_x, lambda_r=lam_r, T_f=T_f, Q=Q, Q_f=Qf)

        simd = _get(raw, "sim", "sim")
        x0 = np.asarray(_get(simd, "x0", "sim.x0"), dtype=float).reshape(-1)
        if x0.shape != (n,):
            _fail("sim.x0", f"expected length {n}")
        P0 = _matrix(_get(simd, "P0", "sim.P0"), "sim.P0")
        if P0.shape == (1, 1) and n > 1:
            P0 = P0.item() * np.eye(n)
        if P0.shape != (n, n) or not is_symmetric_psd(P0):
            _fail("sim.P0", "not symmetric PSD n-by-n")
        h = _scalar(_get(simd, "h", "sim.h"), "sim.h", positive=True)
        seed = simd.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            _fail("sim.seed", "must be a non-negative integer")
        num_paths = simd.get("num_paths", 100)
        if not isinstance(num_paths, int) or num_paths < 1:
            _fail("sim.num_paths", "must be a positive integer")
        try:
            sim = SimConfig(h=h, T_f=T_f, seed=seed, num_paths=num_paths, x0=x0, P0=P0)
            sim.validate_against(modes)
        except ValueError as err:
            _fail("sim", str(err))

        setsd = raw.get("sets", {})
        M0 = None
        if "M0" in setsd:
            M0 = _matrix(setsd["M0"], "sets.M0", shape=(n, n))
            if not is_symmetric_pd(M0):
                _fail("sets.M0", "not symmetric positive definite")
        ell = setsd.get("ell", 20)
        if not isinstance(ell, int) or ell < 1:
            _fail("sets.ell", "must be a positive integer")
        num_sets = setsd.get("num_sets", 1)
        if not isinstance(num_sets, int) or num_sets < 1:
            _fail("sets.num_sets", "must be a positive integer")
        lookahead = _scalar(raw.get("lookahead", 2.0), "lookahead", positive=True)

        return cls(name=name, model=model, modes=modes, cost=cost, sim=sim,
                   M0=M0, ell=ell, num_sets=num_sets, lookahead=lookahead)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        p = Path(path)
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"{p}: invalid JSON ({err})") from err
        return cls.from_dict(raw)
