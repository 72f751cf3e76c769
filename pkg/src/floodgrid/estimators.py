"""scikit-learn style wrappers around the planning and geometry routines.

``FloodMitigationPlanner.fit`` takes a :class:`~floodgrid.grid.ScenarioSet`
in place of a feature matrix; the grid case is a constructor parameter.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .geometry import TangentSet, equidistant_tangent_points, max_relax_error, optimal_tangent_points
from .twostage import (TwoStageSpec, aggregate, evaluate_plan, greedy_warmstart, solve_ro,
                       solve_sp, SOLVERS)
from .validation import check_budget, check_case, check_kind, check_pf, check_scenarios


class FloodMitigationPlanner(BaseEstimator):
    """Chooses a mitigation plan for ``case`` from a set of flood scenarios.

    Parameters
    ----------
    case : GridCase
    kind : {"SP", "RO", "EV", "EEV", "EWS", "MV", "MMV", "MWS"}
    pf : {"DC", "LPAC_C", "LPAC_F", "QPAC"}
    budget : int
        Tiger Dam units available.
    warmstart : bool
        Seed SP/RO solves with the greedy plan.
    """

    def __init__(self, case=None, kind="SP", pf="DC", budget=0, warmstart=False):
        self.case = case
        self.kind = kind
        self.pf = pf
        self.budget = budget
        self.warmstart = warmstart

    def _spec(self, scenarios) -> TwoStageSpec:
        case = check_case(self.case)
        return TwoStageSpec(case, check_scenarios(scenarios, case), check_kind(self.kind),
                            check_pf(self.pf), check_budget(self.budget))

    def fit(self, X, y=None):
        spec = self._spec(X)
        kind = spec.kind
        if self.warmstart and kind in ("SP", "RO"):
            plan = greedy_warmstart(spec.case, spec.scenarios, spec.budget, kind)
            solver = solve_sp if kind == "SP" else solve_ro
            result = solver(spec, warmstart=plan)
        else:
            result = SOLVERS[kind](spec)
        self.result_ = result
        self.plan_ = result.plan
        self.objective_ = result.z
        self.scenario_objectives_ = np.asarray(result.scenario_objectives)
        self.n_scenarios_ = len(spec.scenarios)
        return self

    def predict(self, X):
        """Loss of the fitted plan in each scenario of ``X``."""
        check_is_fitted(self, "result_")
        if self.plan_ is None:
            raise ValueError(f"{self.kind} does not produce a plan to evaluate")
        return np.asarray(evaluate_plan(self.plan_, self._spec(X)))

    def score(self, X, y=None):
        """Negated expected (or worst-case, for RO-type kinds) loss; higher is better."""
        losses = self.predict(X)
        return -aggregate(check_kind(self.kind), X.probs, losses)


class CosineTangentOptimizer(TransformerMixin, BaseEstimator):
    """Fits tangent points for the polyhedral cosine relaxation.

    ``transform`` maps angles to the value of the fitted tangent envelope.
    """

    def __init__(self, n_points=7, theta_delta_max=math.pi / 2, method="minimax",
                 n_starts=64, random_state=0):
        self.n_points = n_points
        self.theta_delta_max = theta_delta_max
        self.method = method
        self.n_starts = n_starts
        self.random_state = random_state

    def fit(self, X=None, y=None):
        if int(self.n_points) != self.n_points or self.n_points < 1:
            raise ValueError("n_points must be a positive integer")
        if not self.theta_delta_max > 0:
            raise ValueError("theta_delta_max must be positive")
        if self.method == "minimax":
            ts = optimal_tangent_points(int(self.n_points), self.theta_delta_max,
                                        n_starts=self.n_starts, seed=self.random_state)
        elif self.method == "equidistant":
            ts = equidistant_tangent_points(int(self.n_points), self.theta_delta_max)
        else:
            raise ValueError(f"unknown method {self.method!r}")
        self.tangents_: TangentSet = ts
        self.points_ = np.asarray(ts.points)
        self.error_ = max_relax_error(ts)
        return self

    def transform(self, X):
        check_is_fitted(self, "tangents_")
        theta = np.asarray(X, dtype=float)
        return np.asarray(self.tangents_.envelope(theta.ravel())).reshape(theta.shape)
