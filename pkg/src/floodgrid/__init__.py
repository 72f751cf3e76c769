"""Flood-mitigation planning for transmission grids.

Two-stage stochastic and robust models choose where to deploy temporary flood
barriers before a storm; the second stage sheds load under a DC or LPAC
power-flow approximation once the flood is known.
"""
__version__ = "0.1.0"

from .engine import EngineConfig, SolveResult, SolverError, solve, solve_lp, solve_milp, oa_refine
from .grid import (Branch, Bus, CaseError, CaseParseError, CaseValidationError, Config,
                   FloodScenario, Generator, GridCase, IndicatorMatrix, Load, ScenarioSet,
                   Substation, convert_depths, load_case, load_scenarios)
from .mitigation import MitigationPlan, abs_sim, budget_threshold, rel_sim
from .recourse import build_dc, build_lpac, solve_recourse, trivial_solution
from .twostage import (TwoStageSpec, StudyResult, bound_ews, bound_mws, check_uniqueness,
                       cross_evaluate, greedy_warmstart, solve_eev, solve_ev, solve_mmv,
                       solve_mv, solve_ro, solve_sp)
from .estimators import CosineTangentOptimizer, FloodMitigationPlanner

__all__ = [
    "Branch", "Bus", "CaseError", "CaseParseError", "CaseValidationError", "Config",
    "CosineTangentOptimizer", "EngineConfig", "FloodMitigationPlanner", "FloodScenario",
    "Generator", "GridCase", "IndicatorMatrix", "Load", "MitigationPlan", "ScenarioSet",
    "SolveResult", "SolverError", "StudyResult", "Substation", "TwoStageSpec", "abs_sim",
    "bound_ews", "bound_mws", "budget_threshold", "build_dc", "build_lpac", "check_uniqueness",
    "convert_depths", "cross_evaluate", "greedy_warmstart", "load_case", "load_scenarios",
    "oa_refine", "rel_sim", "solve", "solve_eev", "solve_ev", "solve_lp", "solve_milp",
    "solve_mmv", "solve_mv", "solve_recourse", "solve_ro", "solve_sp", "trivial_solution",
]
