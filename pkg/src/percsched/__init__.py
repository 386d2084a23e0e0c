"""Perception-latency scheduling for sampled-data stochastic linear systems.

A library and CLI for scheduling perception modes (latency/noise pairs) so
that the mean state of a closed-loop linear system stays stable while a
latency-precision cost is minimized.  Submodules:

- ``linsys``   : system model and exact discretization over a latency interval
- ``belief``   : Kalman predictor, moment propagation, cost evaluation
- ``schedset`` : schedule sets, ellipsoid matrices, switching law, SP2 policy
- ``admiss``   : non-conservative admissibility checking (exact for n <= 2)
- ``planner``  : dynamic-programming schedule optimization, balanced SP2
- ``simlab``   : Euler-Maruyama closed-loop simulation and Monte Carlo
- ``cli``      : command-line front end
"""

from percsched.linsys import SystemModel, PerceptionMode, DiscretizedMode, discretize, chain_matrix
from percsched.belief import GaussianBelief, CostConfig, CostBreakdown, evaluate_cost
from percsched.schedset import Schedule, EllipsoidSet, gauge, switching_law, build_schedule_set
from percsched.admiss import AdmissibilityReport, check_admissibility, sampling_oracle
from percsched.planner import PlanResult, dynprog, balanced_sp2_selector

__all__ = [
    "SystemModel", "PerceptionMode", "DiscretizedMode", "discretize", "chain_matrix",
    "GaussianBelief", "CostConfig", "CostBreakdown", "evaluate_cost",
    "Schedule", "EllipsoidSet", "gauge", "switching_law", "build_schedule_set",
    "AdmissibilityReport", "check_admissibility", "sampling_oracle",
    "PlanResult", "dynprog", "balanced_sp2_selector",
]

__version__ = "0.1.0"
