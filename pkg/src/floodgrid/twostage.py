"""Two-stage flood-mitigation models, their bounds, and plan analysis.

SP and RO are solved as extensive forms: one recourse block per scenario
sharing a single copy of the mitigation variables. The companion quantities
(EV/EEV, EWS, MV/MMV, MWS) are assembled from single-scenario solves and
fixed-plan evaluations.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .bigm import calibrate
from .engine import EngineConfig, SolverError, solve
from .grid import (CaseValidationError, FloodScenario, GridCase, IndicatorMatrix, ScenarioSet,
                   aggregate_max, aggregate_mean, component_status, convert_depths,
                   validate_scenarios)
from .mitigation import MitigationPlan, budget_threshold, cost_table, no_good_cut
from .model import GE, LE, ModelIR
from .recourse import (add_plan_vars, add_recourse_block, build_recourse, engine_config,
                       normalize_variant)

KINDS = ("SP", "RO", "EV", "EEV", "EWS", "MV", "MMV", "MWS")
# relative slack when pinning the loss at its best value in threshold searches
PIN_TOL = 1e-9


@dataclass(frozen=True)
class TwoStageSpec:
    case: GridCase
    scenarios: ScenarioSet
    kind: str = "SP"
    pf: str = "DC"
    budget: float = 0

    def __post_init__(self):
        if self.kind.upper() not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        normalize_variant(self.pf)
        if self.budget < 0:
            raise ValueError("budget must be nonnegative")
        problems = validate_scenarios(self.scenarios, self.case)
        if problems:
            raise CaseValidationError(problems)

    def with_(self, **kw) -> "TwoStageSpec":
        vals = dict(case=self.case, scenarios=self.scenarios, kind=self.kind, pf=self.pf,
                    budget=self.budget)
        vals.update(kw)
        return TwoStageSpec(**vals)

    @property
    def xis(self) -> list[IndicatorMatrix]:
        return self.scenarios.indicators(self.case.substation_ids)

    @property
    def n_levels(self) -> int:
        return self.scenarios.n_levels


@dataclass
class StudyResult:
    kind: str
    pf: str
    budget: float
    z: float
    plan: MitigationPlan | None = None
    scenario_objectives: list[float] = field(default_factory=list)
    seconds: float = 0.0
    nodes: int = 0
    status: str = "optimal"
    source_plan: MitigationPlan | None = None  # the EV/MV plan behind EEV/MMV


# ---------------------------------------------------------------------------
# fixed-plan evaluation

class RecourseEvaluator:
    """Memoised ``L(x, xi)`` for one case and variant.

    The recourse problem depends on ``x`` only through the bus statuses, so
    the cache is keyed by the status vector.
    """

    def __init__(self, case: GridCase, variant: str, config: EngineConfig | None = None):
        self.case = case
        self.variant = normalize_variant(variant)
        self.config = config or engine_config(case)
        self.bigm = calibrate(case, self.variant)
        self._cache: dict[tuple, float] = {}
        self.solves = 0

    def __call__(self, plan: Mapping, xi: IndicatorMatrix) -> float:
        alpha, _ = component_status(plan, xi, self.case)
        key = tuple(alpha[b.id] for b in self.case.buses)
        if key not in self._cache:
            plan = MitigationPlan(plan).normalized(self.case.substation_ids, xi.n_levels)
            rm = build_recourse(self.case, xi, plan, self.variant, bigm=self.bigm)
            res = solve(rm.model, self.config)
            if not res.optimal:
                raise SolverError(f"recourse evaluation ended with status {res.status}", res)
            self.solves += 1
            self._cache[key] = rm.block.value(res.x)
        return self._cache[key]


def evaluate_plan(plan: Mapping, spec: TwoStageSpec,
                  evaluator: RecourseEvaluator | None = None) -> list[float]:
    ev = evaluator or RecourseEvaluator(spec.case, spec.pf)
    return [ev(plan, xi) for xi in spec.xis]


def aggregate(kind: str, probs: Sequence[float], values: Sequence[float]) -> float:
    if kind.upper() in ("RO", "MMV", "MWS", "MV"):
        return max(values)
    return math.fsum(p * v for p, v in zip(probs, values))


# ---------------------------------------------------------------------------
# extensive forms

@dataclass
class Extensive:
    model: ModelIR
    plan_vars: object
    blocks: list
    epigraph: int | None = None


def build_extensive(case: GridCase, xis: Sequence[IndicatorMatrix], n_levels: int,
                    variant: str, budget: float | None, weights: Sequence[float] | None,
                    fixed: Mapping | None = None) -> Extensive:
    """Shared ``x`` plus one block per scenario.

    ``weights`` gives the expectation objective; ``None`` selects the
    worst-case objective through an epigraph variable.
    """
    variant = normalize_variant(variant)
    model = ModelIR(f"extensive_{variant.lower()}")
    pv = add_plan_vars(model, case, n_levels, budget=budget, fixed=fixed)
    bigm = calibrate(case, variant)
    blocks = [add_recourse_block(model, case, xi, pv, variant, bigm, prefix=f"w{i}")
              for i, xi in enumerate(xis)]
    epi = None
    if weights is None:
        cap = case.config.lambda_shed * case.total_load() + case.config.lambda_over * sum(
            g.p_max for g in case.generators)
        epi = model.add_var("z", 0.0, cap, group="z")
        for i, blk in enumerate(blocks):
            row = {epi: 1.0, **{j: -c for j, c in blk.objective.items()}}
            model.add_row(row, GE, blk.obj_constant, f"epi{i}")
        model.add_objective({epi: 1.0})
    else:
        for w, blk in zip(weights, blocks):
            model.add_objective({j: w * c for j, c in blk.objective.items()},
                                w * blk.obj_constant)
    return Extensive(model, pv, blocks, epi)


def _solve_extensive(spec: TwoStageSpec, xis, weights, kind: str,
                     warmstart: Mapping | None = None,
                     config: EngineConfig | None = None) -> StudyResult:
    t0 = time.perf_counter()
    case = spec.case
    ext = build_extensive(case, xis, spec.n_levels, spec.pf, spec.budget, weights)
    ws = ext.plan_vars.assignment(warmstart) if warmstart is not None else None
    res = solve(ext.model, config or engine_config(case), warmstart=ws)
    if not res.optimal:
        raise SolverError(f"{kind} solve ended with status {res.status}", res)
    plan = ext.plan_vars.plan(res.x)
    if weights is None:
        # non-binding blocks need not be optimal in the epigraph form
        per = evaluate_plan(plan, spec.with_(kind=kind))
    else:
        per = [blk.value(res.x) for blk in ext.blocks]
    return StudyResult(kind, normalize_variant(spec.pf), spec.budget, float(res.objective), plan, per,
                       time.perf_counter() - t0, res.nodes)


def solve_sp(spec: TwoStageSpec, warmstart: Mapping | None = None,
             config: EngineConfig | None = None) -> StudyResult:
    """Minimise expected loss over the scenario set."""
    return _solve_extensive(spec, spec.xis, list(spec.scenarios.probs), "SP", warmstart, config)


def solve_ro(spec: TwoStageSpec, warmstart: Mapping | None = None,
             config: EngineConfig | None = None) -> StudyResult:
    """Minimise worst-case loss over the scenario set."""
    return _solve_extensive(spec, spec.xis, None, "RO", warmstart, config)


def _single(spec: TwoStageSpec, xi: IndicatorMatrix, budget: float, kind: str,
            config: EngineConfig | None = None) -> StudyResult:
    return _solve_extensive(spec.with_(budget=budget), [xi], [1.0], kind, None, config)


def _aggregate_xi(spec: TwoStageSpec, which: str) -> IndicatorMatrix:
    agg: FloodScenario = aggregate_mean(spec.scenarios) if which == "EV" else aggregate_max(
        spec.scenarios)
    return convert_depths({k: agg.depth(k) for k in spec.case.substation_ids},
                          spec.scenarios.level_thresholds)


def solve_ev(spec: TwoStageSpec, config: EngineConfig | None = None) -> StudyResult:
    return _single(spec, _aggregate_xi(spec, "EV"), spec.budget, "EV", config)


def solve_mv(spec: TwoStageSpec, config: EngineConfig | None = None) -> StudyResult:
    return _single(spec, _aggregate_xi(spec, "MV"), spec.budget, "MV", config)


def eval_eev(plan: Mapping, spec: TwoStageSpec) -> float:
    return aggregate("EEV", spec.scenarios.probs, evaluate_plan(plan, spec))


def eval_mmv(plan: Mapping, spec: TwoStageSpec) -> float:
    return aggregate("MMV", spec.scenarios.probs, evaluate_plan(plan, spec))


def _plan_then_evaluate(spec, kind, solver, config) -> StudyResult:
    t0 = time.perf_counter()
    costs = cost_table(spec.case)
    cap = budget_threshold(kind, spec.scenarios, costs, spec.case.substation_ids)
    # above its threshold the aggregate model adopts the threshold-budget plan
    base = solver(spec.with_(budget=min(spec.budget, cap)), config)
    per = evaluate_plan(base.plan, spec)
    z = aggregate(kind, spec.scenarios.probs, per)
    return StudyResult(kind, normalize_variant(spec.pf), spec.budget, z, base.plan, per,
                       time.perf_counter() - t0, base.nodes, source_plan=base.plan)


def solve_eev(spec: TwoStageSpec, config: EngineConfig | None = None) -> StudyResult:
    return _plan_then_evaluate(spec, "EEV", solve_ev, config)


def solve_mmv(spec: TwoStageSpec, config: EngineConfig | None = None) -> StudyResult:
    return _plan_then_evaluate(spec, "MMV", solve_mv, config)


def _per_scenario(spec: TwoStageSpec, kind: str, config, n_jobs: int) -> StudyResult:
    t0 = time.perf_counter()
    xis = spec.xis

    def one(xi):
        return _single(spec, xi, spec.budget, kind, config)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(one, xis))  # map keeps scenario order
    else:
        results = [one(xi) for xi in xis]
    per = [r.z for r in results]
    z = aggregate(kind, spec.scenarios.probs, per)
    return StudyResult(kind, normalize_variant(spec.pf), spec.budget, z, None, per,
                       time.perf_counter() - t0, sum(r.nodes for r in results))


def bound_ews(spec: TwoStageSpec, config: EngineConfig | None = None,
              n_jobs: int = 1) -> StudyResult:
    """Expected wait-and-see loss: each scenario gets its own best plan."""
    return _per_scenario(spec, "EWS", config, n_jobs)


def bound_mws(spec: TwoStageSpec, config: EngineConfig | None = None,
              n_jobs: int = 1) -> StudyResult:
    """Worst wait-and-see loss."""
    return _per_scenario(spec, "MWS", config, n_jobs)


SOLVERS = {
    "SP": solve_sp, "RO": solve_ro, "EV": solve_ev, "MV": solve_mv,
    "EEV": solve_eev, "MMV": solve_mmv, "EWS": bound_ews, "MWS": bound_mws,
}


def solve_kind(spec: TwoStageSpec, config: EngineConfig | None = None) -> StudyResult:
    return SOLVERS[spec.kind.upper()](spec, config=config)


def vss(spec: TwoStageSpec) -> float:
    """Value of the stochastic solution, EEV minus the SP optimum."""
    return solve_eev(spec.with_(kind="EEV")).z - solve_sp(spec.with_(kind="SP")).z


def evpi(spec: TwoStageSpec) -> float:
    """Expected value of perfect information, the SP optimum minus EWS."""
    return solve_sp(spec.with_(kind="SP")).z - bound_ews(spec.with_(kind="EWS")).z


# ---------------------------------------------------------------------------
# thresholds that need optimization

def _min_cost_at(spec: TwoStageSpec, xis, weights, target: float,
                 config: EngineConfig | None) -> int:
    """Cheapest plan whose loss is within the pin tolerance of ``target``."""
    case = spec.case
    ext = build_extensive(case, xis, spec.n_levels, spec.pf, None, weights)
    m = ext.model
    loss = dict(m.objective)
    const = m.obj_constant
    m.add_row(loss, LE, target + PIN_TOL * (1.0 + abs(target)) - const, "pin")
    costs = cost_table(case)
    m.objective = {i: float(costs[kr]) for kr, i in ext.plan_vars.index.items()}
    m.obj_constant = 0.0
    res = solve(m, config or engine_config(case))
    if not res.optimal:
        raise SolverError(f"threshold search ended with status {res.status}", res)
    return int(round(res.objective))


def budget_threshold_optimized(kind: str, spec: TwoStageSpec,
                               config: EngineConfig | None = None) -> int:
    """Smallest budget achieving the unlimited-budget value of RO or MWS."""
    kind = kind.upper()
    costs = cost_table(spec.case)
    full = budget_threshold("SP", spec.scenarios, costs, spec.case.substation_ids)
    if kind == "RO":
        z_inf = solve_ro(spec.with_(kind="RO", budget=full), config=config).z
        return _min_cost_at(spec, spec.xis, None, z_inf, config)
    if kind == "MWS":
        z_inf = bound_mws(spec.with_(kind="MWS", budget=full), config=config).z
        return max(_min_cost_at(spec, [xi], [1.0], z_inf, config) for xi in spec.xis)
    if kind in ("SP", "EWS", "EEV", "MMV"):
        return budget_threshold(kind, spec.scenarios, costs, spec.case.substation_ids)
    raise ValueError(f"no threshold defined for {kind!r}")


def threshold(kind: str, spec: TwoStageSpec, config: EngineConfig | None = None) -> int:
    return budget_threshold_optimized(kind, spec, config)


# ---------------------------------------------------------------------------
# greedy warmstart

@dataclass(frozen=True)
class GreedyWeights:
    load: float = 1.0
    capacity: float = 0.5


def _operational(case, plan, xi):
    alpha, beta = component_status(plan, xi, case)
    return alpha, beta


def _served_measures(case: GridCase, plan, xi, weights: GreedyWeights) -> float:
    alpha, _ = _operational(case, plan, xi)
    load = sum(d.p_load for d in case.loads if alpha[d.bus_id])
    cap = sum(l.s_max for l in case.branches if alpha[l.from_bus] and alpha[l.to_bus])
    return weights.load * load + weights.capacity * cap


def _unserved_estimate(case: GridCase, plan, xi) -> float:
    alpha, _ = _operational(case, plan, xi)
    serviceable = sum(d.p_load for d in case.loads if alpha[d.bus_id])
    gen = sum(g.p_max for g in case.generators if alpha[g.bus_id])
    return case.total_load() - min(serviceable, gen)


def greedy_warmstart(case: GridCase, scenarios: ScenarioSet, budget: float, mode: str = "SP",
                     weights: GreedyWeights = GreedyWeights()) -> MitigationPlan:
    """Build a feasible plan by repeatedly buying the best benefit per resource.

    A candidate raises one substation from its current level to any higher
    attainable level; benefit is the weighted load and branch capacity it
    brings back into service, averaged over scenarios (SP) or taken in the
    scenario that currently looks worst (RO).
    """
    mode = mode.upper()
    if mode not in ("SP", "RO"):
        raise ValueError("mode must be SP or RO")
    ids = case.substation_ids
    n = scenarios.n_levels
    costs = cost_table(case)
    xis = scenarios.indicators(ids)
    probs = scenarios.probs
    levels = {k: 0 for k in ids}
    spent = 0

    def plan_of(lv):
        return MitigationPlan.from_levels(lv, n)

    while True:
        current = plan_of(levels)
        if mode == "SP":
            focus = list(zip(probs, xis))
        else:
            worst = max(range(len(xis)), key=lambda w: (_unserved_estimate(case, current, xis[w]), -w))
            focus = [(1.0, xis[worst])]
        base = sum(p * _served_measures(case, current, xi, weights) for p, xi in focus)
        best = None
        for k in ids:
            for target in range(levels[k] + 1, n):
                extra = sum(costs[(k, r)] for r in range(levels[k] + 1, target + 1))
                if spent + extra > budget:
                    break
                trial = plan_of({**levels, k: target})
                gain = sum(p * _served_measures(case, trial, xi, weights)
                           for p, xi in focus) - base
                if gain <= 1e-12:
                    continue
                ratio = gain / extra
                if best is None or ratio > best[0] + 1e-12:
                    best = (ratio, k, target, extra)
        if best is None:
            return plan_of(levels).normalized(ids, n)
        _, k, target, extra = best
        levels[k] = target
        spent += extra


# ---------------------------------------------------------------------------
# uniqueness and cross-evaluation

@dataclass(frozen=True)
class UniquenessReport:
    unique: bool
    z_star: float
    alternate: MitigationPlan | None = None
    z_alternate: float | None = None


def check_uniqueness(x_star: Mapping, spec: TwoStageSpec, z_star: float | None = None,
                     config: EngineConfig | None = None) -> UniquenessReport:
    """Re-solve with a no-good cut on ``x_star``; unique iff the restricted optimum is worse."""
    kind = spec.kind.upper()
    if kind not in ("SP", "RO"):
        raise ValueError("uniqueness is defined for SP and RO")
    case = spec.case
    if z_star is None:
        z_star = aggregate(kind, spec.scenarios.probs, evaluate_plan(x_star, spec))
    weights = list(spec.scenarios.probs) if kind == "SP" else None
    ext = build_extensive(case, spec.xis, spec.n_levels, spec.pf, spec.budget, weights)
    cut = no_good_cut(MitigationPlan(x_star).normalized(case.substation_ids, spec.n_levels))
    ext.model.add_row({ext.plan_vars.index[kr]: c for kr, c in cut.coeffs.items() if c},
                      GE, cut.rhs, "nogood")
    res = solve(ext.model, config or engine_config(case))
    if res.status == "infeasible":
        return UniquenessReport(True, float(z_star))
    if not res.optimal:
        raise SolverError(f"uniqueness solve ended with status {res.status}", res)
    alt = ext.plan_vars.plan(res.x)
    z_alt = aggregate(kind, spec.scenarios.probs, evaluate_plan(alt, spec))
    z_star, z_alt = float(z_star), float(z_alt)
    unique = bool(z_alt > z_star + 1e-9 * (1.0 + abs(z_star)))
    return UniquenessReport(unique, z_star, None if unique else alt, z_alt)


@dataclass(frozen=True)
class CrossEvaluation:
    z_fixed: float
    z_best: float
    gap: float
    absolute: bool  # True when z_best is 0 and the gap is an absolute difference


def cross_evaluate(plan_a: Mapping, spec_b: TwoStageSpec, z_b: float) -> CrossEvaluation:
    """Relative suboptimality of plan ``A`` inside model ``B``."""
    kind = spec_b.kind.upper()
    z_fixed = aggregate(kind, spec_b.scenarios.probs, evaluate_plan(plan_a, spec_b))
    if abs(z_b) <= 1e-12:
        return CrossEvaluation(z_fixed, z_b, z_fixed - z_b, True)
    return CrossEvaluation(z_fixed, z_b, (z_fixed - z_b) / z_b, False)
