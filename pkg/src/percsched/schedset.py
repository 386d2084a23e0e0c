"""Schedule sets, ellipsoid matrices, the switching law and the SP2 policy.

A schedule set Gamma is a finite collection of finite mode sequences.  Each
member gamma gets the positive-definite matrix
``M_gamma = (Lam^gamma)^T M0 Lam^gamma`` whose unit sublevel set is the
pre-image of the reference ellipsoid under the chained closed-loop map.
The switching law picks the member minimizing ``x^T M_gamma x``; the SP2
policy consumes the chosen schedule open-loop and re-selects on exhaustion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from percsched.linsys import (
    SystemModel, PerceptionMode, DiscretizedMode,
    as_matrix, chain_matrix, discretize_all, is_symmetric_pd, symmetrize,
)


@dataclass(frozen=True)
class Schedule:
    """A finite sequence of 1-based mode indices with its total latency."""

    modes: tuple[int, ...]
    total_latency: float

    def __post_init__(self):
        if len(self.modes) == 0:
            raise ValueError("schedule must be non-empty")
        if any(int(i) != i or i < 1 for i in self.modes):
            raise ValueError("mode indices must be positive integers")

    @classmethod
    def of(cls, indices, perception_modes: list[PerceptionMode]) -> "Schedule":
        idx = tuple(int(i) for i in indices)
        if any(i > len(perception_modes) for i in idx):
            raise ValueError("mode index out of range")
        return cls(modes=idx, total_latency=sum(perception_modes[i - 1].delta for i in idx))

    def __len__(self) -> int:
        return len(self.modes)


class SingularChainError(ValueError):
    """A chained closed-loop matrix is numerically singular."""


def ellipsoid_matrix(gamma: Schedule, dms: list[DiscretizedMode], M0) -> np.ndarray:
    """``M_gamma = (Lam^gamma)^T M0 Lam^gamma``; requires an invertible chain."""
    M0 = as_matrix(M0, "M0")
    if not is_symmetric_pd(M0):
        raise ValueError("M0 must be symmetric positive definite")
    chain = chain_matrix(dms[i - 1] for i in gamma.modes)
    if abs(np.linalg.det(chain)) <= 1e-12:
        raise SingularChainError(f"chain matrix for {gamma.modes} is singular")
    return symmetrize(chain.T @ M0 @ chain)


@dataclass(frozen=True, eq=False)
class EllipsoidSet:
    """A schedule set with its ellipsoid matrices, immutable once built."""

    M0: np.ndarray
    members: dict[Schedule, np.ndarray]
    seed: int | None = None
    set_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "M0", as_matrix(self.M0, "M0"))
        if not is_symmetric_pd(self.M0):
            raise ValueError("M0 must be symmetric positive definite")
        if not self.members:
            raise ValueError("schedule set must be non-empty")

    @classmethod
    def build(cls, schedules, model: SystemModel, modes: list[PerceptionMode], M0,
              seed: int | None = None, set_id: str | None = None) -> "EllipsoidSet":
        dms = discretize_all(model, modes)
        members = {}
        for gamma in schedules:
            if not isinstance(gamma, Schedule):
                gamma = Schedule.of(gamma, modes)
            members[gamma] = ellipsoid_matrix(gamma, dms, M0)
        return cls(M0=as_matrix(M0, "M0"), members=members, seed=seed, set_id=set_id)

    @property
    def n(self) -> int:
        return self.M0.shape[0]

    def schedules(self) -> list[Schedule]:
        return list(self.members)

    def matrices(self) -> list[np.ndarray]:
        return list(self.members.values())

    def _stacked(self) -> tuple[list[Schedule], np.ndarray]:
        """Member matrices as one (m, n, n) tensor, built lazily and cached;
        the switching law evaluates all quadratic forms in one einsum."""
        cached = self.__dict__.get("_stack")
        if cached is None:
            cached = (list(self.members), np.stack(list(self.members.values())))
            object.__setattr__(self, "_stack", cached)
        return cached

    # -- serialization -----------------------------------------------------

    def to_dict(self, extra: dict | None = None) -> dict:
        d = {
            "m0": self.M0.tolist(),
            "seed": self.seed,
            "set_id": self.set_id,
            "schedules": [list(g.modes) for g in self.members],
        }
        if extra:
            d["provenance"] = extra
        return d

    def save(self, path, extra: dict | None = None) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(extra), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path, model: SystemModel, modes: list[PerceptionMode]) -> "EllipsoidSet":
        with open(path) as fh:
            d = json.load(fh)
        return cls.build(d["schedules"], model, modes, np.asarray(d["m0"]),
                         seed=d.get("seed"), set_id=d.get("set_id"))


def gauge(x, M) -> float:
    """Minkowski functional of the ellipsoid {x : x^T M x <= 1}: sqrt(x^T M x)."""
    M = as_matrix(M, "M")
    if not is_symmetric_pd(M):
        raise ValueError("M must be symmetric positive definite")
    x = np.asarray(x, dtype=float).reshape(-1)
    return float(np.sqrt(x @ M @ x))


def switching_law(x, Gamma: EllipsoidSet) -> Schedule:
    """Member minimizing ``x^T M_gamma x``.

    Ties break deterministically: lowest total latency, then lexicographic
    mode order.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError("state has non-finite entries")
    schedules, stack = Gamma._stacked()
    vals = np.einsum("i,kij,j->k", x, stack, x)
    lo = vals.min()
    near = np.nonzero(vals <= lo + 1e-12 * max(abs(lo), 1.0))[0]
    if len(near) == 1:
        return schedules[near[0]]
    return min((schedules[i] for i in near),
               key=lambda g: (float(x @ Gamma.members[g] @ x), g.total_latency, g.modes))


@dataclass(frozen=True)
class PolicyState:
    """SP2 loop bookkeeping: the active schedule piece and read cursor."""

    active_schedule: Schedule | None = None
    cursor: int = 0
    active_set_id: int | None = None

    def __post_init__(self):
        if self.active_schedule is not None and not 0 <= self.cursor <= len(self.active_schedule):
            raise ValueError("cursor out of range")


def sp2_step(state: PolicyState, x_mean, sets: list[EllipsoidSet],
             selector) -> tuple[int, PolicyState]:
    """One decision of the stability-preserving scheduling policy.

    While the active schedule has unread entries it is consumed open-loop;
    once exhausted, ``selector(x_mean, sets) -> index`` picks the schedule
    set and the switching law picks the new piece from the current mean.
    """
    if not sets:
        raise ValueError("sets must be non-empty")
    if state.active_schedule is not None and state.cursor < len(state.active_schedule):
        mode = state.active_schedule.modes[state.cursor]
        return mode, replace(state, cursor=state.cursor + 1)
    idx = int(selector(x_mean, sets))
    if not 0 <= idx < len(sets):
        raise ValueError(f"selector returned out-of-range set index {idx}")
    gamma = switching_law(x_mean, sets[idx])
    return gamma.modes[0], PolicyState(active_schedule=gamma, cursor=1, active_set_id=idx)


class RoundRobinSelector:
    """Cycles through the available schedule sets; for stability stress tests."""

    def __init__(self, start: int = 0):
        self._next = start

    def __call__(self, x_mean, sets) -> int:
        idx = self._next % len(sets)
        self._next = idx + 1
        return idx


class ScheduleSetConstructionError(RuntimeError):
    """Randomized construction did not reach admissibility within max_iters."""


def build_schedule_set(model: SystemModel, modes: list[PerceptionMode], ell: int,
                       seed, checker, max_iters: int = 10_000,
                       M0=None, set_id: str | None = None) -> EllipsoidSet:
    """Randomized construction of an admissible schedule set.

    Candidate schedules of random length up to ``ell`` are appended one per
    iteration (duplicates are resampled); when every sequence of length
    <= ell is already included, ell grows by one.  ``checker`` maps an
    EllipsoidSet to an object with an ``admissible`` attribute (or a bool).
    """
    if ell < 1 or len(modes) < 1:
        raise ValueError("ell and D must be at least 1")
    D = len(modes)
    M0 = np.eye(model.n) if M0 is None else as_matrix(M0, "M0")
    rng = np.random.default_rng(seed)
    dms = discretize_all(model, modes)
    members: dict[Schedule, np.ndarray] = {}
    count_by_len: dict[int, int] = {}

    def exhausted_len(length: int) -> bool:
        return count_by_len.get(length, 0) >= D ** length

    for iteration in range(1, max_iters + 1):
        if all(exhausted_len(l) for l in range(1, ell + 1)):
            ell += 1
        open_lengths = [l for l in range(1, ell + 1) if not exhausted_len(l)]
        while True:
            length = int(rng.choice(open_lengths))
            candidate = tuple(int(i) for i in rng.integers(1, D + 1, size=length))
            gamma = Schedule.of(candidate, modes)
            if gamma not in members:
                break
        members[gamma] = ellipsoid_matrix(gamma, dms, M0)
        count_by_len[length] = count_by_len.get(length, 0) + 1
        candidate_set = EllipsoidSet(M0=M0, members=dict(members),
                                     seed=_seed_to_int(seed), set_id=set_id)
        verdict = checker(candidate_set)
        if getattr(verdict, "admissible", verdict):
            return candidate_set
    raise ScheduleSetConstructionError(
        f"no admissible schedule set within {max_iters} iterations; "
        "the mode family may not be stabilizing")


def _seed_to_int(seed) -> int | None:
    try:
        return int(seed)
    except (TypeError, ValueError):
        return None
