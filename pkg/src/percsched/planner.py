"""Dynamic-programming schedule optimization over admissible policy candidates.

At each decision epoch the switching law of every candidate schedule set
proposes one schedule piece from the current mean; the planner searches the
resulting decision tree for the minimum-cost concatenation over the horizon.
Costs are sums of non-negative terms, so the accumulated partial cost is a
valid lower bound and enables branch-and-bound pruning.  A moving-horizon
variant ("balanced" selection) runs the same search over a short look-ahead
window and keeps only the winning set.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, inf

import numpy as np

from percsched.belief import CostConfig, GaussianBelief, interval_cost_matrices
from percsched.linsys import PerceptionMode, SystemModel, discretize
from percsched.schedset import EllipsoidSet, Schedule, switching_law

_EPS = 1e-12


class _PlanContext:
    """Per-mode matrices hoisted out of the search loop.

    The tree search evaluates tens of thousands of segments per plan, so the
    full-interval discretization, cost Gramians and measurement matrices are
    gathered once and the inner loop runs on plain arrays.
    """

    def __init__(self, model: SystemModel, modes: list[PerceptionMode], cfg: CostConfig):
        self.model = model
        self.modes = modes
        self.cfg = cfg
        self.full = []
        for p, mode in enumerate(modes, start=1):
            dm = discretize(model, mode, mode_index=p)
            BL = dm.B_d @ mode.gain
            Q1, Q2, Q12, q3 = interval_cost_matrices(model, mode, cfg.Q, mode.delta)
            PW = mode.gain.T @ Q2 @ mode.gain - 2.0 * mode.gain.T @ Q12
            self.full.append((dm.A_d, dm.Lambda, BL, dm.W_d, Q1, PW, q3,
                              model.C, mode.sigma))

    def step(self, state, idx: int):
        """Full-interval expected update on a raw (mean, cov, phat) triple,
        returning (running-cost contribution, next state)."""
        mean, cov, phat = state
        A_d, Lam, BL, W_d, Q1, PW, q3, C, sigma = self.full[idx - 1]
        run = (float(mean @ Q1 @ mean) + float((Q1 * cov).sum())
               + float((PW * phat).sum()) + q3)
        cross = Lam @ phat @ BL.T
        cov_n = Lam @ cov @ Lam.T - cross - cross.T + BL @ phat @ BL.T + W_d
        APC = A_d @ phat @ C.T
        H = np.linalg.solve((C @ phat @ C.T + sigma).T, APC.T).T
        phat_n = (A_d - H @ C) @ phat @ A_d.T + W_d
        return run, (Lam @ mean, 0.5 * (cov_n + cov_n.T), 0.5 * (phat_n + phat_n.T))

    def partial(self, state, idx: int, t: float):
        """Truncated interval of length t < delta ending at the horizon."""
        mean, cov, phat = state
        mode = self.modes[idx - 1]
        Q1, Q2, Q12, q3 = interval_cost_matrices(self.model, mode, self.cfg.Q, t)
        PW = mode.gain.T @ Q2 @ mode.gain - 2.0 * mode.gain.T @ Q12
        run = (float(mean @ Q1 @ mean) + float((Q1 * cov).sum())
               + float((PW * phat).sum()) + q3)
        dm = discretize(self.model, mode, interval=t)
        BL = dm.B_d @ mode.gain
        cross = dm.Lambda @ phat @ BL.T
        cov_n = (dm.Lambda @ cov @ dm.Lambda.T - cross - cross.T
                 + BL @ phat @ BL.T + dm.W_d)
        return run, (dm.Lambda @ mean, 0.5 * (cov_n + cov_n.T), phat)


@dataclass(frozen=True)
class PlanResult:
    schedule: Schedule
    cost: float
    chosen_set: int
    nodes: int = 0


class RecursionDepthExceededError(RuntimeError):
    """Planner recursion exceeded the bound implied by the shortest schedule."""


def _segment_raw(ctx: _PlanContext, state, gamma: Schedule, tau: float):
    """Cost of applying gamma starting at tau, truncated at T_f.

    Returns the segment cost (running + attention terms, without terminal)
    and the raw (mean, cov, phat) state at min(tau + latency, T_f).
    """
    cfg = ctx.cfg
    running = 0.0
    penalties = 0.0
    t = tau
    for idx in gamma.modes:
        if t >= cfg.T_f - _EPS:
            break
        mode = ctx.modes[idx - 1]
        penalties += mode.penalty
        seg = min(mode.delta, cfg.T_f - t)
        if seg < mode.delta - _EPS:
            run, state = ctx.partial(state, idx, seg)
            running += run
            t = cfg.T_f
            break
        run, state = ctx.step(state, idx)
        running += run
        t += mode.delta
    cost = cfg.lambda_x / cfg.T_f * running + cfg.lambda_r / cfg.T_f * penalties
    return cost, state


def _segment(belief: GaussianBelief, gamma: Schedule, tau: float,
             model: SystemModel, modes: list[PerceptionMode],
             cfg: CostConfig) -> tuple[float, GaussianBelief]:
    """Belief-typed wrapper around the raw segment evaluator."""
    ctx = _PlanContext(model, modes, cfg)
    cost, (mean, cov, phat) = _segment_raw(
        ctx, (belief.mean, belief.cov, belief.pred_cov), gamma, tau)
    return cost, GaussianBelief(mean=mean, cov=cov, pred_cov=phat)


def _terminal_raw(state, cfg: CostConfig) -> float:
    mean, cov, _ = state
    return cfg.lambda_x * (float(mean @ cfg.Q_f @ mean) + float((cfg.Q_f * cov).sum()))


def _terminal(belief: GaussianBelief, cfg: CostConfig) -> float:
    return _terminal_raw((belief.mean, belief.cov, belief.pred_cov), cfg)


def dynprog(T_f: float, tau: float, belief: GaussianBelief, sets: list[EllipsoidSet],
            model: SystemModel, modes: list[PerceptionMode], cfg: CostConfig,
            prune: bool = True) -> PlanResult:
    """Optimal schedule within the class generated by the candidate sets.

    Depth-first search over decision epochs; each epoch branches over the
    candidate sets, with the branch schedule fixed by the switching law at
    the branch's mean state.  Ties keep the earliest-enumerated branch.
    """
    if not sets:
        raise ValueError("sets must be non-empty")
    if tau >= T_f:
        raise ValueError("tau must be smaller than T_f")
    cfg = cfg if cfg.T_f == T_f else cfg.with_horizon(T_f)
    ctx = _PlanContext(model, modes, cfg)
    c = min(g.total_latency for G in sets for g in G.members)
    max_depth = ceil(T_f / c) + 1
    counter = [0]
    best: list = [inf, None, None]   # cost, schedule modes, root set index

    def rec(tau_k: float, state, depth: int, partial: float,
            prefix: tuple[int, ...], root_set: int | None) -> None:
        counter[0] += 1
        if depth > max_depth:
            raise RecursionDepthExceededError(
                f"recursion depth {depth} exceeds bound {max_depth}; "
                "schedule set appears corrupted")
        seen: dict[tuple[int, ...], None] = {}
        for j, G in enumerate(sets):
            gamma = switching_law(state[0], G)
            if gamma.modes in seen:      # identical piece -> identical subtree
                continue
            seen[gamma.modes] = None
            seg_cost, s_next = _segment_raw(ctx, state, gamma, tau_k)
            new_partial = partial + seg_cost
            if prune and new_partial >= best[0]:
                continue
            tau_plus = tau_k + gamma.total_latency
            root = j if root_set is None else root_set
            if tau_plus < T_f - _EPS:
                rec(tau_plus, s_next, depth + 1, new_partial, prefix + gamma.modes, root)
            else:
                total = new_partial + _terminal_raw(s_next, cfg)
                if total < best[0]:
                    best[0] = total
                    best[1] = prefix + gamma.modes
                    best[2] = root

    rec(tau, (belief.mean, belief.cov, belief.pred_cov), 1, 0.0, (), None)
    if best[1] is None:
        raise RuntimeError("planner found no complete schedule")
    return PlanResult(schedule=Schedule.of(best[1], modes), cost=best[0],
                      chosen_set=best[2], nodes=counter[0])


def balanced_sp2_selector(belief: GaussianBelief, sets: list[EllipsoidSet],
                          model: SystemModel, modes: list[PerceptionMode],
                          cfg: CostConfig, T_lookahead: float,
                          prune: bool = True) -> int:
    """Moving-horizon set choice: plan over a look-ahead window, keep Gamma*.

    The belief passed in is the predictor state (mean xhat[k|k-1], covariance
    and pred_cov both Phat[k]).
    """
    if not T_lookahead > 0:
        raise ValueError("T_lookahead must be positive")
    result = dynprog(T_lookahead, 0.0, belief, sets, model, modes,
                     cfg.with_horizon(T_lookahead), prune=prune)
    return result.chosen_set


def make_balanced_selector(model: SystemModel, modes: list[PerceptionMode],
                           cfg: CostConfig, T_lookahead: float, prune: bool = True):
    """Selector factory for the SP2 policy: callable(belief, sets) -> set index."""

    def selector(belief: GaussianBelief, sets: list[EllipsoidSet]) -> int:
        planning_belief = GaussianBelief(mean=belief.mean, cov=belief.pred_cov,
                                         pred_cov=belief.pred_cov)
        return balanced_sp2_selector(planning_belief, sets, model, modes, cfg,
                                     T_lookahead, prune=prune)

    return selector
