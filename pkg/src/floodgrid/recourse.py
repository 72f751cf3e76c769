"""Second-stage (recourse) models: adapted DC and LPAC power flow with load shedding.

A recourse *block* is one scenario's copy of the power-flow variables and rows.
:func:`add_recourse_block` appends a block to an existing :class:`ModelIR` so
extensive forms can share the first-stage variables; :func:`build_dc` and
:func:`build_lpac` wrap it for the single-scenario case.

Variables are named by position (``w0_pf3_f`` and so on) rather than by case
id so the LP export never has to escape user-supplied identifiers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .bigm import BigMSet, calibrate
from .engine import EngineConfig, SolveResult, SolverError, solve
from .geometry import VariantGeometry, b1, b2_curvature, variant_geometry
from .grid import GridCase, IndicatorMatrix, component_status, edge_key
from .mitigation import MitigationPlan, cost_table
from .model import EQ, GE, LE, ModelIR

SIDES = ("from", "to")


def normalize_variant(variant: str) -> str:
    v = variant.upper().replace("-", "_")
    if v not in ("DC", "LPAC_C", "LPAC_F", "QPAC"):
        raise ValueError(f"unknown power-flow variant {variant!r}")
    return v


# ---------------------------------------------------------------------------
# first stage

@dataclass
class PlanVars:
    """Indices of the ``x[k, r]`` variables in a model."""

    index: dict[tuple[str, int], int]
    n_levels: int

    @property
    def substations(self) -> list[str]:
        return list(dict.fromkeys(k for k, _ in self.index))

    def plan(self, values: np.ndarray) -> MitigationPlan:
        return MitigationPlan({k: tuple(int(round(values[self.index[(k, r)]]))
                                        for r in range(1, self.n_levels + 1))
                               for k in self.substations})

    def assignment(self, plan: Mapping[str, Sequence[int]]) -> dict[int, float]:
        return {i: float(plan.get(k, (0,) * self.n_levels)[r - 1])
                for (k, r), i in self.index.items()}


def add_plan_vars(model: ModelIR, case: GridCase, n_levels: int,
                  budget: float | None = None,
                  fixed: Mapping[str, Sequence[int]] | None = None) -> PlanVars:
    """Binary ``x`` with the cumulative, inexorable-level and budget rows.

    With ``fixed`` the variables are pinned to that plan (which must itself be
    feasible); the rows are still emitted so exports stay self-describing.
    """
    costs = cost_table(case)
    index = {}
    for ki, k in enumerate(case.substation_ids):
        for r in range(1, n_levels + 1):
            index[(k, r)] = model.add_var(f"x_{ki}_{r}", 0, 1, binary=True, group="x")
    for k in case.substation_ids:
        for r in range(1, n_levels):
            model.add_row({index[(k, r + 1)]: 1, index[(k, r)]: -1}, LE, 0, f"cum_{k}_{r}")
        model.fix(index[(k, n_levels)], 0.0)
    if budget is not None:
        model.add_row({i: costs[kr] for kr, i in index.items()}, LE, float(budget), "budget")
    pv = PlanVars(index, n_levels)
    if fixed is not None:
        if any(fixed.get(k, (0,) * n_levels)[-1] for k in case.substation_ids):
            raise ValueError("a plan cannot protect against the inexorable level")
        for i, v in pv.assignment(fixed).items():
            model.fix(i, v)
    return pv


# ---------------------------------------------------------------------------
# second stage

@dataclass
class Block:
    """Variable indices of one recourse block plus its objective expression."""

    variant: str
    prefix: str
    chi: int
    alpha: dict[str, int] = field(default_factory=dict)        # bus id
    beta: dict[tuple[str, str], int] = field(default_factory=dict)  # edge key
    delta: dict[str, int] = field(default_factory=dict)        # load id
    p_gen: dict[str, int] = field(default_factory=dict)
    q_gen: dict[str, int] = field(default_factory=dict)
    p_over: dict[str, int] = field(default_factory=dict)
    p_flow: dict[tuple[str, str], int] = field(default_factory=dict)  # (branch, side)
    q_flow: dict[tuple[str, str], int] = field(default_factory=dict)
    theta: dict[str, int] = field(default_factory=dict)
    sin: dict[str, int] = field(default_factory=dict)          # branch id, from-orientation
    cos: dict[str, int] = field(default_factory=dict)
    phi: dict[str, int] = field(default_factory=dict)
    objective: dict[int, float] = field(default_factory=dict)
    obj_constant: float = 0.0

    GROUPS = ("alpha", "beta", "delta", "p_gen", "q_gen", "p_over", "p_flow", "q_flow",
              "theta", "sin", "cos", "phi")

    def value(self, x: np.ndarray) -> float:
        return self.obj_constant + math.fsum(c * x[i] for i, c in self.objective.items())


def add_recourse_block(model: ModelIR, case: GridCase, xi: IndicatorMatrix, plan_vars: PlanVars,
                       variant: str = "DC", bigm: BigMSet | None = None,
                       geometry: VariantGeometry | None = None, prefix: str = "w0") -> Block:
    variant = normalize_variant(variant)
    cfg = case.config
    if bigm is None:
        bigm = calibrate(case, variant)
    elif bigm.variant != variant:
        raise ValueError(f"big-M set was calibrated for {bigm.variant}, not {variant}")
    if geometry is None:
        geometry = variant_geometry(variant, cfg.theta_delta_max, cfg.t_cos)
    lpac = variant != "DC"
    P = prefix
    add = model.add_var
    blk = Block(variant, prefix, chi=add(f"{P}_chi", 0, 1, binary=True, group="chi"))

    # -- component statuses ---------------------------------------------------
    n_levels = plan_vars.n_levels
    for bi, bus in enumerate(case.buses):
        a = add(f"{P}_a{bi}", 0, 1, group="alpha")
        blk.alpha[bus.id] = a
        levels = xi.get(bus.substation_id, (0,) * n_levels)
        # term_r = 1 - xi_r (1 - x_r): constant 1 when dry, x_r when flooded
        const, lin = 0.0, {}
        for r, flooded in enumerate(levels, start=1):
            if flooded:
                lin[plan_vars.index[(bus.substation_id, r)]] = 1.0
                model.add_row({a: 1, plan_vars.index[(bus.substation_id, r)]: -1}, LE, 0,
                              f"{P}_aup{bi}_{r}")
            else:
                const += 1.0
        lower = {a: 1.0, **{i: -c for i, c in lin.items()}}
        model.add_row(lower, GE, const - n_levels + 1, f"{P}_alo{bi}")
    for ei, (n, m) in enumerate(case.edges()):
        b = add(f"{P}_b{ei}", 0, 1, group="beta")
        blk.beta[(n, m)] = b
        an, am = blk.alpha[n], blk.alpha[m]
        model.add_row({b: 1, an: -1, am: -1}, GE, -1, f"{P}_blo{ei}")
        model.add_row({b: 1, an: -1}, LE, 0, f"{P}_bn{ei}")
        model.add_row({b: 1, am: -1}, LE, 0, f"{P}_bm{ei}")

    # -- bus variables ----------------------------------------------------------
    for bi, bus in enumerate(case.buses):
        lim = 0.0 if bus.is_reference else cfg.theta_max
        blk.theta[bus.id] = add(f"{P}_th{bi}", -lim, lim, group="theta")
        if lpac:
            blk.phi[bus.id] = add(f"{P}_phi{bi}", bus.v_min - bus.v_target,
                                  bus.v_max - bus.v_target, group="phi")

    # -- generation -------------------------------------------------------------
    for gi, g in enumerate(case.generators):
        a = blk.alpha[g.bus_id]
        p = add(f"{P}_pg{gi}", 0, g.p_max, group="p_gen")
        o = add(f"{P}_po{gi}", 0, g.p_max, group="p_over")
        blk.p_gen[g.id], blk.p_over[g.id] = p, o
        model.add_row({p: 1, a: -g.p_max}, LE, 0, f"{P}_pgmax{gi}")
        model.add_row({p: 1, a: -g.p_min, blk.chi: g.p_min}, GE, 0, f"{P}_pgmin{gi}")
        model.add_row({o: 1, p: -1}, LE, 0, f"{P}_pover{gi}")
        if lpac:
            q = add(f"{P}_qg{gi}", min(g.q_min, 0.0), max(g.q_max, 0.0), group="q_gen")
            blk.q_gen[g.id] = q
            model.add_row({q: 1, a: -g.q_max}, LE, 0, f"{P}_qgmax{gi}")
            model.add_row({q: 1, a: -g.q_min}, GE, 0, f"{P}_qgmin{gi}")

    # -- loads ------------------------------------------------------------------
    for di, d in enumerate(case.loads):
        dl = add(f"{P}_d{di}", 0, 1, group="delta")
        blk.delta[d.id] = dl
        model.add_row({dl: 1, blk.chi: 1}, LE, 1, f"{P}_dchi{di}")

    # -- branches -----------------------------------------------------------------
    sin_open = 2.0 * cfg.theta_max
    for li, l in enumerate(case.branches):
        beta = blk.beta[edge_key(l.from_bus, l.to_bus)]
        th_n, th_m = blk.theta[l.from_bus], blk.theta[l.to_bus]
        s = add(f"{P}_sin{li}", -sin_open, sin_open, group="sin")
        blk.sin[l.id] = s
        model.add_row({s: 1, th_n: -1, th_m: 1}, EQ, 0, f"{P}_sindef{li}")
        # |sin| <= 2 theta_max (1 - beta) + theta_delta_max beta
        slope = sin_open - cfg.theta_delta_max
        model.add_row({s: 1, beta: slope}, LE, sin_open, f"{P}_sinup{li}")
        model.add_row({s: 1, beta: -slope}, GE, -sin_open, f"{P}_sinlo{li}")
        if not lpac:
            pf = add(f"{P}_pf{li}", -l.s_max, l.s_max, group="p_flow")
            blk.p_flow[(l.id, "from")] = pf
            model.add_row({pf: 1, beta: -l.s_max}, LE, 0, f"{P}_pfup{li}")
            model.add_row({pf: 1, beta: l.s_max}, GE, 0, f"{P}_pflo{li}")
            lo, hi = bigm.dc[l.id]
            # L (1 - beta) <= -pf - b sin <= U (1 - beta)
            expr = {pf: -1.0, s: -l.b}
            model.add_row({**expr, beta: lo}, GE, lo, f"{P}_ohmlo{li}")
            model.add_row({**expr, beta: hi}, LE, hi, f"{P}_ohmup{li}")
            continue

        lo_c = 1.0 if geometry.unit_cos else math.cos(cfg.theta_delta_max)
        c = add(f"{P}_cos{li}", lo_c, 1.0, group="cos")
        blk.cos[l.id] = c
        _add_cos_rows(model, geometry, cfg, c, s, beta, f"{P}_{li}")
        for side, n, m, sgn in (("from", l.from_bus, l.to_bus, 1.0),
                                ("to", l.to_bus, l.from_bus, -1.0)):
            tag = f"{li}{side[0]}"
            pf = add(f"{P}_pf{tag}", -l.s_max, l.s_max, group="p_flow")
            qf = add(f"{P}_qf{tag}", -l.s_max, l.s_max, group="q_flow")
            blk.p_flow[(l.id, side)], blk.q_flow[(l.id, side)] = pf, qf
            _add_disc_rows(model, geometry, l.s_max, pf, qf, beta, f"{P}_{tag}")
            bn, bm = case.bus(n), case.bus(m)
            vn, vm, g, b = bn.v_target, bm.v_target, l.g, l.b
            phn, phm = blk.phi[n], blk.phi[m]
            # active: rhs - pf in [L, U](1 - beta)
            p_expr = {blk.chi: vn * g * (vm - vn), c: -vn * vm * g, s: -vn * vm * b * sgn,
                      pf: -1.0}
            p_const = vn * vn * g
            q_expr = {blk.chi: vn * b * (vn - vm), s: -vn * vm * g * sgn, c: vn * vm * b,
                      phn: -vn * b - (vn - vm) * b, qf: -1.0}
            q_expr[phm] = q_expr.get(phm, 0.0) + vn * b
            q_const = -vn * vn * b
            ivs = bigm.lpac[(l.id, side)]
            for expr, const, (lo, hi), eq in ((p_expr, p_const, ivs.p, "p"),
                                              (q_expr, q_const, ivs.q, "q")):
                model.add_row({**expr, beta: lo}, GE, lo - const, f"{P}_{eq}ohmlo{tag}")
                model.add_row({**expr, beta: hi}, LE, hi - const, f"{P}_{eq}ohmup{tag}")

    # -- nodal balance --------------------------------------------------------------
    for bi, bus in enumerate(case.buses):
        p_row: dict[int, float] = {}
        q_row: dict[int, float] = {}

        def acc(row, i, v):
            row[i] = row.get(i, 0.0) + v

        for g in case.generators:
            if g.bus_id == bus.id:
                acc(p_row, blk.p_gen[g.id], 1.0)
                acc(p_row, blk.p_over[g.id], -1.0)
                if lpac:
                    acc(q_row, blk.q_gen[g.id], 1.0)
        for d in case.loads:
            if d.bus_id == bus.id:
                acc(p_row, blk.delta[d.id], -d.p_load)
                if lpac:
                    acc(q_row, blk.delta[d.id], -d.q_load)
        for l in case.branches:
            if lpac:
                for side, end in (("from", l.from_bus), ("to", l.to_bus)):
                    if end == bus.id:
                        acc(p_row, blk.p_flow[(l.id, side)], -1.0)
                        acc(q_row, blk.q_flow[(l.id, side)], -1.0)
            else:
                if l.from_bus == bus.id:
                    acc(p_row, blk.p_flow[(l.id, "from")], -1.0)
                if l.to_bus == bus.id:
                    acc(p_row, blk.p_flow[(l.id, "from")], 1.0)
        model.add_row(p_row, EQ, 0, f"{P}_kclp{bi}")
        if lpac:
            model.add_row(q_row, EQ, 0, f"{P}_kclq{bi}")

    # -- objective: shed + overgeneration penalty -----------------------------------
    lam_s, lam_o = cfg.lambda_shed, cfg.lambda_over
    blk.obj_constant = lam_s * math.fsum(d.p_load for d in case.loads)
    for d in case.loads:
        if d.p_load:
            blk.objective[blk.delta[d.id]] = -lam_s * d.p_load
    for g in case.generators:
        if lam_o:
            blk.objective[blk.p_over[g.id]] = lam_o
    return blk


def _add_cos_rows(model, geometry, cfg, c, s, beta, tag):
    if geometry.unit_cos:
        return
    two_tmax = 2.0 * cfg.theta_max
    if geometry.tangents is not None:
        for ti, th in enumerate(geometry.tangents.points):
            # cos <= (1 - beta)(1 - min B1(+-2 theta_max)) + B1(sin)
            slack = 1.0 - min(b1(two_tmax, th), b1(-two_tmax, th))
            sn = math.sin(th)
            model.add_row({c: 1.0, s: sn, beta: slack}, LE, slack + math.cos(th) + th * sn,
                          f"cosb1_{tag}_{ti}")
    if geometry.quadratic_cos:
        k = b2_curvature(cfg.theta_delta_max)
        slack = k * two_tmax ** 2  # 1 - B2u(2 theta_max)
        model.add_quad_row({s: k}, {c: 1.0, beta: slack}, 1.0 + slack, f"cosq_{tag}", kind="cos")


def _add_disc_rows(model, geometry, s_max, pf, qf, beta, tag):
    for hi, ((a, b), rhs) in enumerate(geometry.polygon.halfplanes()):
        model.add_row({pf: a, qf: b, beta: -s_max * rhs}, LE, 0, f"disc_{tag}_{hi}")
    if geometry.exact_disc:
        model.add_quad_row({pf: 1.0, qf: 1.0}, {beta: -s_max * s_max}, 0.0, f"discq_{tag}",
                           kind="disc", cone=(pf, qf, beta, s_max))


# ---------------------------------------------------------------------------
# single-scenario builders and solves

@dataclass
class RecourseModel:
    model: ModelIR
    block: Block
    plan_vars: PlanVars
    case: GridCase


def _build(case, xi, x, variant, budget, bigm) -> RecourseModel:
    model = ModelIR(f"recourse_{normalize_variant(variant).lower()}")
    n_levels = xi.n_levels or len(case.substations[0].level_costs())
    if x is None and budget is None:
        raise ValueError("a variable plan needs a budget")
    pv = add_plan_vars(model, case, n_levels, budget=budget, fixed=x)
    blk = add_recourse_block(model, case, xi, pv, variant, bigm)
    model.add_objective(blk.objective, blk.obj_constant)
    return RecourseModel(model, blk, pv, case)


def build_dc(case: GridCase, xi: IndicatorMatrix, x: Mapping | None = None,
             budget: float | None = None, bigm: BigMSet | None = None) -> RecourseModel:
    """DC recourse for a fixed plan ``x``, or with ``x`` free under ``budget``."""
    return _build(case, xi, x, "DC", budget, bigm)


def build_lpac(case: GridCase, xi: IndicatorMatrix, x: Mapping | None = None,
               variant: str = "LPAC_C", budget: float | None = None,
               bigm: BigMSet | None = None) -> RecourseModel:
    if normalize_variant(variant) == "DC":
        raise ValueError("use build_dc for the DC model")
    return _build(case, xi, x, variant, budget, bigm)


def build_recourse(case, xi, x=None, variant="DC", budget=None, bigm=None) -> RecourseModel:
    return _build(case, xi, x, variant, budget, bigm)


@dataclass
class RecourseSolution:
    objective: float
    values: dict[str, dict]
    shed: float
    overgeneration: float
    chi: int
    result: SolveResult | None = None

    def group(self, name: str) -> dict:
        return self.values[name]


def block_solution(case: GridCase, blk: Block, x: np.ndarray,
                   result: SolveResult | None = None) -> RecourseSolution:
    values = {g: {k: float(x[i]) for k, i in getattr(blk, g).items()} for g in Block.GROUPS}
    shed = math.fsum(d.p_load * (1.0 - x[blk.delta[d.id]]) for d in case.loads)
    over = math.fsum(x[i] for i in blk.p_over.values())
    return RecourseSolution(blk.value(x), values, shed, over, int(round(x[blk.chi])), result)


def solve_recourse(rm: RecourseModel, config: EngineConfig | None = None) -> RecourseSolution:
    """Certified-optimal recourse solve; raises :class:`SolverError` on engine failure."""
    res = solve(rm.model, config or engine_config(rm.case))
    if not res.optimal:
        raise SolverError(f"recourse solve ended with status {res.status}", res)
    return block_solution(rm.case, rm.block, res.x, res)


def engine_config(case: GridCase) -> EngineConfig:
    c = case.config
    return EngineConfig(integrality_tol=c.integrality_tol, feasibility_tol=c.feasibility_tol,
                        oa_tol=c.oa_tol)


def trivial_vector(rm: RecourseModel, xi: IndicatorMatrix, x: Mapping) -> np.ndarray:
    """The chi = 1 point of a single-block model: nothing generated, carried or served."""
    model, blk = rm.model, rm.block
    vec = np.zeros(model.n)
    for i, v in rm.plan_vars.assignment(x).items():
        vec[i] = v
    fill_trivial(vec, rm.case, blk, xi, x)
    return vec


def fill_trivial(vec: np.ndarray, case: GridCase, blk: Block, xi: IndicatorMatrix,
                 x: Mapping) -> None:
    alpha, beta = component_status(x, xi, case)
    vec[blk.chi] = 1.0
    for n, i in blk.alpha.items():
        vec[i] = alpha[n]
    for e, i in blk.beta.items():
        vec[i] = beta[e]
    for i in blk.cos.values():
        vec[i] = 1.0
    # delta, generation, flows, sin, theta and phi stay at zero


def trivial_solution(case: GridCase, xi: IndicatorMatrix, x: Mapping,
                     variant: str = "DC") -> RecourseSolution:
    rm = build_recourse(case, xi, x, variant)
    vec = trivial_vector(rm, xi, x)
    return block_solution(case, rm.block, vec)
