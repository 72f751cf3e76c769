"""LP, MILP and outer-approximation solves for :class:`~floodgrid.model.ModelIR`.

Node relaxations are solved by the HiGHS simplex through ``highspy``; the
branch-and-bound tree, node selection, incumbent handling and the cutting-plane
loop for quadratic rows live here. A solve owns its HiGHS instance, so
independent solves can run concurrently.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field

import highspy
import numpy as np

from .model import ModelIR, QuadRow

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
CAP_REACHED = "cap-reached"


class SolverError(RuntimeError):
    """A solve stopped before certifying optimality; ``result`` holds the incumbent."""

    def __init__(self, message: str, result: "SolveResult | None" = None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class EngineConfig:
    integrality_tol: float = 1e-6
    feasibility_tol: float = 1e-7
    oa_tol: float = 1e-6
    gap_tol: float = 1e-9
    node_cap: int = 200_000
    iteration_cap: int = 1_000_000
    oa_round_cap: int = 200

    def __post_init__(self):
        for name in ("integrality_tol", "feasibility_tol", "oa_tol", "gap_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SolveResult:
    status: str
    objective: float = math.nan
    x: np.ndarray | None = None
    nodes: int = 0
    bound: float = math.nan
    bound_trace: list[tuple[int, float, float]] = field(default_factory=list)
    cuts: int = 0
    names: list[str] | None = None

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def gap(self) -> float:
        if self.x is None or math.isnan(self.bound):
            return math.inf
        return abs(self.objective - self.bound)

    def value(self, name: str) -> float:
        return float(self.x[self.names.index(name)])

    def values(self, indices) -> np.ndarray:
        return self.x[np.asarray(indices, dtype=int)]


class _Relaxation:
    """A HiGHS LP kept alive across node solves (warm-started from the last basis)."""

    def __init__(self, model: ModelIR, config: EngineConfig):
        self.n = model.n
        A, lo, hi = model.row_matrix()
        A = A.tocsc()
        self.h = highspy.Highs()
        h = self.h
        h.setOptionValue("output_flag", False)
        h.setOptionValue("presolve", "off")
        self.ptol = min(1e-9, config.feasibility_tol)
        self.fallback_tol = config.feasibility_tol
        h.setOptionValue("primal_feasibility_tolerance", self.ptol)
        h.setOptionValue("dual_feasibility_tolerance", 1e-9)
        h.setOptionValue("simplex_iteration_limit", config.iteration_cap)
        h.setOptionValue("random_seed", 0)
        inf = highspy.kHighsInf
        lp = highspy.HighsLp()
        lp.num_col_ = self.n
        lp.num_row_ = A.shape[0]
        lp.col_cost_ = model.cost_vector()
        lb, ub = model.bounds()
        lp.col_lower_ = np.where(np.isinf(lb), -inf, lb)
        lp.col_upper_ = np.where(np.isinf(ub), inf, ub)
        lp.row_lower_ = np.where(np.isinf(lo), -inf, lo)
        lp.row_upper_ = np.where(np.isinf(hi), inf, hi)
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_ = A.indptr.astype(np.int32)
        lp.a_matrix_.index_ = A.indices.astype(np.int32)
        lp.a_matrix_.value_ = A.data.astype(float)
        h.passModel(lp)
        self.constant = model.obj_constant
        self.cost = np.asarray(lp.col_cost_, dtype=float)
        self.lb, self.ub = lb.copy(), ub.copy()

    def set_bounds(self, idx: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> None:
        if idx.size:
            self.lb[idx], self.ub[idx] = lo, hi
            self.h.changeColsBounds(idx.size, idx.astype(np.int32), lo.astype(float),
                                    hi.astype(float))

    def _status(self) -> tuple[str, float, np.ndarray | None] | None:
        h = self.h
        status = h.getModelStatus()
        if status == highspy.HighsModelStatus.kOptimal:
            # simplex may leave values a tolerance outside their bounds; snap them back
            x = np.clip(np.array(h.getSolution().col_value), self.lb, self.ub)
            return OPTIMAL, math.fsum(self.cost * x) + self.constant, x
        if status == highspy.HighsModelStatus.kInfeasible:
            return INFEASIBLE, math.inf, None
        if status == highspy.HighsModelStatus.kUnbounded:
            return UNBOUNDED, -math.inf, None
        if status == highspy.HighsModelStatus.kIterationLimit:
            return CAP_REACHED, math.nan, None
        return None  # ambiguous or numerical trouble

    def solve(self) -> tuple[str, float, np.ndarray | None]:
        h = self.h
        h.run()
        out = self._status()
        if out is not None and out[0] != INFEASIBLE:
            return out
        # Ambiguous or numerically troubled runs, and infeasibility claims made at
        # the tight tolerance, are re-checked from scratch with presolve and then
        # at the configured feasibility tolerance.
        try:
            for ptol in (self.ptol, self.fallback_tol):
                h.setOptionValue("presolve", "on")
                h.setOptionValue("primal_feasibility_tolerance", ptol)
                h.clearSolver()
                h.run()
                out = self._status()
                if out is not None and (out[0] != INFEASIBLE or ptol == self.fallback_tol):
                    return out
        finally:
            h.setOptionValue("presolve", "off")
            h.setOptionValue("primal_feasibility_tolerance", self.ptol)
        if out is not None:
            return out
        raise SolverError(f"LP solve failed: {h.modelStatusToString(h.getModelStatus())}")


def solve_lp(model: ModelIR, config: EngineConfig | None = None) -> SolveResult:
    """Continuous relaxation (binaries relaxed to [0, 1], quadratic rows dropped)."""
    config = config or EngineConfig()
    status, obj, x = _Relaxation(model, config).solve()
    return SolveResult(status, obj, x, nodes=1, bound=obj, names=model.names())


def _most_fractional(x: np.ndarray, binaries: np.ndarray, tol: float) -> int | None:
    vals = x[binaries]
    frac = np.abs(vals - np.round(vals))
    i = int(np.argmax(frac))  # first maximiser, i.e. lowest index on ties
    return int(binaries[i]) if frac[i] > tol else None


def solve_milp(model: ModelIR, config: EngineConfig | None = None,
               warmstart: dict[int, float] | None = None) -> SolveResult:
    """Best-bound branch and bound over the binary variables of ``model``.

    Quadratic rows are ignored here; use :func:`solve` to honour them.
    ``warmstart`` fixes a subset of binaries; the remaining problem is solved
    and, if feasible, installed as the starting incumbent.
    """
    config = config or EngineConfig()
    bins = np.array(model.binaries, dtype=int)
    lb0, ub0 = model.bounds()
    names = model.names()

    incumbent_x, incumbent = None, math.inf
    warm_nodes = 0
    if warmstart:
        sub = model.copy()
        for i, v in warmstart.items():
            sub.fix(i, round(v))
        w = solve_milp(sub, config)
        warm_nodes = w.nodes
        if w.optimal:
            incumbent_x, incumbent = w.x, w.objective

    if bins.size == 0:
        status, obj, x = _Relaxation(model, config).solve()
        return SolveResult(status, obj, x, nodes=1, bound=obj, names=names)

    relax = _Relaxation(model, config)
    counter = itertools.count()
    heap: list = [(-math.inf, next(counter), lb0[bins].copy(), ub0[bins].copy())]
    nodes = 0
    pruned_bound = math.inf
    trace: list[tuple[int, float, float]] = []

    def tol_for(v):
        return config.gap_tol * (1.0 + abs(v))

    while heap:
        if nodes >= config.node_cap:
            bound = min(heap[0][0], pruned_bound, incumbent)
            res = SolveResult(CAP_REACHED, incumbent, incumbent_x, nodes, bound, trace, names=names)
            raise SolverError(f"node cap {config.node_cap} reached (gap {res.gap:.3g})", res)
        parent_bound, _, lo, hi = heapq.heappop(heap)
        if incumbent < math.inf and parent_bound >= incumbent - tol_for(incumbent):
            pruned_bound = min(pruned_bound, parent_bound)
            continue
        relax.set_bounds(bins, lo, hi)
        status, obj, x = relax.solve()
        nodes += 1
        if status == UNBOUNDED:
            raise SolverError("relaxation is unbounded")
        if status == CAP_REACHED:
            raise SolverError("simplex iteration cap reached")
        if status == INFEASIBLE:
            continue
        trace.append((nodes, max(obj, parent_bound), incumbent))
        if incumbent < math.inf and obj >= incumbent - tol_for(incumbent):
            pruned_bound = min(pruned_bound, obj)
            continue
        j = _most_fractional(x, bins, config.integrality_tol)
        if j is None:
            # clean up: pin binaries to their rounded values and re-solve
            fixed = np.round(x[bins])
            relax.set_bounds(bins, fixed, fixed)
            st2, obj2, x2 = relax.solve()
            nodes += 1
            if st2 == OPTIMAL:
                if obj2 < incumbent:
                    incumbent, incumbent_x = obj2, x2
                continue
            # rounding broke feasibility; branch on the largest remaining deviation
            vals = x[bins]
            dev = np.abs(vals - np.round(vals))
            if dev.max() <= 0:
                continue
            j = int(bins[int(np.argmax(dev))])
        k = int(np.searchsorted(bins, j))
        v = x[j]
        down_hi = hi.copy()
        down_hi[k] = math.floor(v)
        up_lo = lo.copy()
        up_lo[k] = math.ceil(v) if math.ceil(v) != math.floor(v) else math.floor(v) + 1
        heapq.heappush(heap, (obj, next(counter), lo, down_hi))
        heapq.heappush(heap, (obj, next(counter), up_lo, hi))

    if incumbent_x is None:
        return SolveResult(INFEASIBLE, math.inf, None, nodes, math.inf, trace, names=names)
    bound = min(pruned_bound, incumbent)
    res = SolveResult(OPTIMAL, incumbent, incumbent_x, nodes, bound, trace, names=names)
    res.warmstart_nodes = warm_nodes
    return res


def cut_for(q: QuadRow, x: np.ndarray) -> tuple[dict, float]:
    """Linear cut ``coeffs . y <= rhs`` separating ``x`` from the convex row ``q``."""
    if q.cone is not None:
        p, qq, beta, s = q.cone
        r = math.hypot(x[p], x[qq])
        if r > 0:
            return {p: x[p] / r, qq: x[qq] / r, beta: -s}, 0.0
    coeffs = dict(q.lin)
    rhs = q.rhs
    for i, d in q.quad.items():
        coeffs[i] = coeffs.get(i, 0.0) + 2.0 * d * x[i]
        rhs += d * x[i] ** 2
    return coeffs, rhs


def oa_refine(model: ModelIR, config: EngineConfig | None = None,
              warmstart: dict[int, float] | None = None) -> SolveResult:
    """Kelley-style outer approximation of the quadratic rows around :func:`solve_milp`."""
    config = config or EngineConfig()
    work = model.copy()
    work.quad_rows = []
    n_cuts = 0
    total_nodes = 0
    for _ in range(config.oa_round_cap):
        res = solve_milp(work, config, warmstart)
        total_nodes += res.nodes
        if not res.optimal:
            res.cuts = n_cuts
            return res
        violated = [(q.violation(res.x), q) for q in model.quad_rows]
        violated = [(v, q) for v, q in violated if v > config.oa_tol]
        if not violated:
            res.cuts = n_cuts
            res.nodes = total_nodes
            return res
        for _, q in violated:
            coeffs, rhs = cut_for(q, res.x)
            work.add_row(coeffs, "<=", rhs, f"oa{n_cuts}_{q.name}")
            n_cuts += 1
    res.cuts = n_cuts
    raise SolverError(f"outer approximation did not converge after {n_cuts} cuts", res)


def solve(model: ModelIR, config: EngineConfig | None = None,
          warmstart: dict[int, float] | None = None) -> SolveResult:
    """Certified-optimal solve of any ModelIR, dispatching on its structure."""
    if model.quad_rows:
        return oa_refine(model, config, warmstart)
    return solve_milp(model, config, warmstart)
