"""Argument checks shared by the estimators and the command line."""
from __future__ import annotations

import numbers
from typing import Mapping

from .grid import CaseValidationError, GridCase, ScenarioSet, validate_case, validate_scenarios
from .mitigation import MitigationPlan, is_feasible
from .recourse import normalize_variant
from .twostage import KINDS


def check_case(case) -> GridCase:
    if not isinstance(case, GridCase):
        raise TypeError(f"expected a GridCase, got {type(case).__name__}")
    problems = validate_case(case)
    if problems:
        raise CaseValidationError(problems)
    return case


def check_scenarios(scenarios, case: GridCase | None = None) -> ScenarioSet:
    if not isinstance(scenarios, ScenarioSet):
        raise TypeError(f"expected a ScenarioSet, got {type(scenarios).__name__}")
    problems = validate_scenarios(scenarios, case)
    if problems:
        raise CaseValidationError(problems)
    return scenarios


def check_budget(budget) -> int:
    if isinstance(budget, bool) or not isinstance(budget, numbers.Real):
        raise TypeError("budget must be a number")
    if budget < 0 or int(budget) != budget:
        raise ValueError(f"budget must be a nonnegative integer, got {budget!r}")
    return int(budget)


def check_kind(kind: str) -> str:
    k = str(kind).upper()
    if k not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    return k


def check_pf(pf: str) -> str:
    return normalize_variant(str(pf))


def check_plan(plan: Mapping, case: GridCase, n_levels: int, budget: float | None = None):
    unknown = set(plan) - set(case.substation_ids)
    if unknown:
        raise ValueError(f"plan names unknown substations {sorted(unknown)}")
    if any(len(bits) != n_levels for bits in plan.values()):
        raise ValueError(f"every plan entry needs {n_levels} level flags")
    limit = float("inf") if budget is None else budget
    if not is_feasible(plan, case.costs(), limit):
        raise ValueError("plan is not in the feasible set (binary, cumulative, "
                         "inexorable level unprotected, within budget)")
    return MitigationPlan({k: tuple(int(b) for b in bits) for k, bits in plan.items()}).normalized(
        case.substation_ids, n_levels)
