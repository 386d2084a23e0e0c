"""Stochastic closed-loop simulation and Monte Carlo campaigns.

Sample paths integrate the SDE with explicit Euler-Maruyama on a fixed grid;
sampling instants are snapped to the grid (with ``h <= min latency / 10``
the snap error is at most h/2 and vanishes under refinement).  Per-path
randomness comes from numpy's splittable SeedSequence: path ``i`` uses
``SeedSequence(entropy=seed, spawn_key=(i,))``, so streams are independent
and platform-stable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from percsched.belief import CostConfig, GaussianBelief, kalman_predict
from percsched.linsys import PerceptionMode, SystemModel, as_matrix, discretize, symmetrize
from percsched.schedset import EllipsoidSet, PolicyState, RoundRobinSelector, sp2_step


class SimulationDivergedError(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"state became non-finite at integration step {step}")
        self.step = step


@dataclass(frozen=True, eq=False)
class SimConfig:
    h: float
    T_f: float
    seed: int
    num_paths: int
    x0: np.ndarray
    P0: np.ndarray
    store_trajectory: bool = False
    trajectory_stride: int = 100

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(-1))
        object.__setattr__(self, "P0", symmetrize(as_matrix(self.P0, "P0")))
        if not (self.h > 0 and self.T_f > 0):
            raise ValueError("h and T_f must be positive")
        if self.num_paths < 1:
            raise ValueError("num_paths must be >= 1")

    def validate_against(self, modes: list[PerceptionMode]) -> None:
        dmin = min(m.delta for m in modes)
        if self.h > dmin / 10 + 1e-15:
            raise ValueError(f"h={self.h} too coarse; need h <= min latency/10 = {dmin / 10}")


@dataclass(frozen=True)
class SamplePathResult:
    cost: float
    attention: int
    cpu_load: float
    schedule: tuple[int, ...]
    trajectory: np.ndarray | None = None   # rows (t, x...)


def _psd_factor(M: np.ndarray) -> np.ndarray:
    """Factor F with F F^T = M for symmetric PSD M (eigen fallback for rank loss)."""
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(symmetrize(M))
        return V @ np.diag(np.sqrt(np.clip(w, 0.0, None)))


# ---------------------------------------------------------------------------
# Policies

class StaticSchedulePolicy:
    """Repeats a fixed pattern of mode indices regardless of the state."""

    def __init__(self, pattern):
        self.pattern = tuple(int(i) for i in pattern)
        if not self.pattern:
            raise ValueError("pattern must be non-empty")
        self._k = 0

    def reset(self) -> None:
        self._k = 0

    def next_mode(self, belief: GaussianBelief) -> int:
        mode = self.pattern[self._k % len(self.pattern)]
        self._k += 1
        return mode


class SP2Policy:
    """Stability-preserving policy over admissible sets with a set selector.

    ``selector(belief, sets) -> index``; the selection state (x_mean) passed
    to the switching law is always the predictor mean.
    """

    def __init__(self, sets: list[EllipsoidSet], selector=None):
        if not sets:
            raise ValueError("sets must be non-empty")
        self.sets = sets
        self.selector = selector if selector is not None else _round_robin_adapter()
        self.state = PolicyState()

    def reset(self) -> None:
        self.state = PolicyState()
        reset = getattr(self.selector, "reset", None)
        if reset is not None:
            reset()

    def next_mode(self, belief: GaussianBelief) -> int:
        mode, self.state = sp2_step(
            self.state, belief.mean, self.sets,
            lambda _x, sets: self.selector(belief, sets))
        return mode


def _round_robin_adapter():
    rr = RoundRobinSelector()

    def selector(belief, sets):
        return rr(belief.mean, sets)

    selector.reset = lambda: setattr(rr, "_next", 0)
    return selector


def round_robin_selector():
    """Belief-signature round-robin set selector for SP2Policy."""
    return _round_robin_adapter()


# ---------------------------------------------------------------------------
# Path simulation

def simulate_path(model: SystemModel, modes: list[PerceptionMode], policy,
                  cost_cfg: CostConfig, cfg: SimConfig,
                  rng: np.random.Generator | None = None) -> SamplePathResult:
    """Integrate one closed-loop sample path and evaluate its sample cost.

    The initial state is drawn from N(x0, P0); at each sampling instant the
    policy picks the mode, a noisy measurement is taken, the input is held
    at ``L xhat[k|k-1]`` over the latency interval, and the predictor is
    updated once the interval ends.
    """
    cfg.validate_against(modes)
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed))
    n = model.n
    N = int(round(cfg.T_f / cfg.h))
    h = cfg.h
    Ah = np.eye(n) + h * model.A
    Bh = h * model.B
    noise_factor = _psd_factor(model.W0 * h)
    x = cfg.x0 + _psd_factor(cfg.P0) @ rng.standard_normal(n)
    belief = GaussianBelief.initial(cfg.x0, cfg.P0)
    policy.reset()

    Q = cost_cfg.Q
    running = 0.0
    q_prev = float(x @ Q @ x)
    grid = 0
    schedule: list[int] = []
    penalties = 0.0
    traj: list[np.ndarray] | None = [np.concatenate(([0.0], x))] if cfg.store_trajectory else None

    while grid < N:
        p = policy.next_mode(belief)
        if not 1 <= p <= len(modes):
            raise ValueError(f"policy returned mode index {p}, expected 1..{len(modes)}")
        mode = modes[p - 1]
        schedule.append(p)
        penalties += mode.penalty
        u = mode.gain @ belief.mean
        sigma_factor = _psd_factor(mode.sigma)
        z = model.C @ x + sigma_factor @ rng.standard_normal(model.n_z)
        n_steps = max(1, int(round(mode.delta / h)))
        steps = min(n_steps, N - grid)
        w = rng.standard_normal((steps, n)) @ noise_factor.T
        for j in range(steps):
            x = Ah @ x + Bh @ u + w[j]
            q = float(x @ Q @ x)
            running += 0.5 * h * (q_prev + q)
            q_prev = q
            grid += 1
            if traj is not None and grid % cfg.trajectory_stride == 0:
                traj.append(np.concatenate(([grid * h], x)))
        if not np.all(np.isfinite(x)):
            raise SimulationDivergedError(grid)
        if grid >= N:
            break
        dm = discretize(model, mode, mode_index=p)
        try:
            belief = kalman_predict(belief, dm, mode, z, u, model.C)
        except ValueError:
            # predictor overflow: the loop has already blown up numerically
            raise SimulationDivergedError(grid)

    attention = len(schedule)
    terminal = float(x @ cost_cfg.Q_f @ x)
    cost = (cost_cfg.lambda_x * (running / cfg.T_f + terminal)
            + cost_cfg.lambda_r / cfg.T_f * penalties)
    cpu_load = sum(modes[p - 1].cpu_fraction * modes[p - 1].delta for p in schedule) / cfg.T_f
    return SamplePathResult(cost=cost, attention=attention, cpu_load=cpu_load,
                            schedule=tuple(schedule),
                            trajectory=np.asarray(traj) if traj is not None else None)


# ---------------------------------------------------------------------------
# Monte Carlo

@dataclass(frozen=True)
class MonteCarloSummary:
    mean_cost: float
    std_cost: float
    stderr_cost: float
    mean_attention: float
    mean_cpu_load: float
    hist_counts: np.ndarray
    hist_edges: np.ndarray
    records: tuple            # (path index, SamplePathResult)
    diverged: tuple           # (path index, failed step)

    def to_text(self) -> str:
        return "\n".join([
            f"paths = {len(self.records)}",
            f"mean_cost = {self.mean_cost:.9f}",
            f"std_cost = {self.std_cost:.9f}",
            f"stderr_cost = {self.stderr_cost:.9f}",
            f"mean_attention = {self.mean_attention:.6f}",
            f"mean_cpu_load = {self.mean_cpu_load:.6f}",
            f"diverged = {len(self.diverged)}",
        ])


def path_rng(seed: int, path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(path,)))


def monte_carlo(model: SystemModel, modes: list[PerceptionMode], policy_factory,
                cost_cfg: CostConfig, cfg: SimConfig,
                hist_bins=20) -> MonteCarloSummary:
    """Independent sample paths with per-path derived seeds.

    ``policy_factory() -> policy`` must return a fresh (or reset-able)
    policy; paths are fully order-independent.  Diverged paths are recorded
    and excluded from the summary statistics.
    """
    if cfg.num_paths < 1:
        raise ValueError("num_paths must be >= 1")
    records = []
    diverged = []
    for i in range(cfg.num_paths):
        policy = policy_factory()
        try:
            res = simulate_path(model, modes, policy, cost_cfg, cfg, rng=path_rng(cfg.seed, i))
            records.append((i, res))
        except SimulationDivergedError as err:
            diverged.append((i, err.step))
    costs = np.array([r.cost for _, r in records])
    counts, edges = np.histogram(costs, bins=hist_bins)
    std = float(costs.std(ddof=1)) if len(costs) > 1 else 0.0
    return MonteCarloSummary(
        mean_cost=float(costs.mean()),
        std_cost=std,
        stderr_cost=std / np.sqrt(len(costs)) if len(costs) > 1 else 0.0,
        mean_attention=float(np.mean([r.attention for _, r in records])),
        mean_cpu_load=float(np.mean([r.cpu_load for _, r in records])),
        hist_counts=counts, hist_edges=edges,
        records=tuple(records), diverged=tuple(diverged))


def write_records_csv(path, summary: MonteCarloSummary) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "cost", "attention", "cpu_load"])
        for i, rec in summary.records:
            writer.writerow([i, repr(rec.cost), rec.attention, repr(rec.cpu_load)])


def write_histogram_csv(path, summary: MonteCarloSummary) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(summary.hist_edges[:-1], summary.hist_edges[1:],
                             summary.hist_counts):
            writer.writerow([repr(float(lo)), repr(float(hi)), int(c)])
