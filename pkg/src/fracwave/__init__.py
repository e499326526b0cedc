"""fracwave: fast linearized solver for nonlinear multi-term time-fractional
wave equations, with a convergence and work/memory verification harness.

The time discretization treats each Caputo order by a shifted second-order
formula, combines two shifted evaluations to land on integer time levels
(which is what lets the nonlinear term lag one level), and optionally
compresses the history kernel into a certified sum of exponentials so a
step costs O(nodes) instead of O(n).
"""

from .analysis import ConvergenceReport, NormTriple, norms, rate_ladder
from .coefficients import (CoefficientEngine, CoefficientValidationError,
                           MultiTermOrders, SigmaValue, solve_sigma)
from .history import (HistoryState, VhatSequence, advance_history,
                      direct_history_apply, history_known_part, seed_history)
from .problems import (ProblemSpec, custom_problem, manufactured_forcing,
                       manufactured_problem, nonlinearity)
from .scheme import (Grid1D, SolveResult, TridiagonalSystem, build_w,
                     delta_x2, run_solver, thomas_solve)
from .soe import SOEApprox, SOEBuildError, build_soe, eval_soe, soe_error_scan

__version__ = "0.1.0"

__all__ = [
    "ConvergenceReport", "NormTriple", "norms", "rate_ladder",
    "CoefficientEngine", "CoefficientValidationError", "MultiTermOrders",
    "SigmaValue", "solve_sigma",
    "HistoryState", "VhatSequence", "advance_history", "direct_history_apply",
    "history_known_part", "seed_history",
    "ProblemSpec", "custom_problem", "manufactured_forcing",
    "manufactured_problem", "nonlinearity",
    "Grid1D", "SolveResult", "TridiagonalSystem", "build_w", "delta_x2",
    "run_solver", "thomas_solve",
    "SOEApprox", "SOEBuildError", "build_soe", "eval_soe", "soe_error_scan",
]
