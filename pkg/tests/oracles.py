"""Reference computations that do not go through the extensive forms or the B&B.

``dc_loss`` writes the DC recourse LP directly from the case data with the
component statuses worked out by hand, and solves it with scipy's ``linprog``.
Enumeration oracles then minimise over every plan in the feasible set.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog

from floodgrid.mitigation import enumerate_plans, plan_cost


def alive_buses(case, xi, plan):
    out = {}
    for bus in case.buses:
        levels = xi.get(bus.substation_id, ())
        bits = plan.get(bus.substation_id, (0,) * len(levels))
        out[bus.id] = all(not f or p for f, p in zip(levels, bits))
    return out


def dc_loss(case, xi, plan) -> float:
    """min(serving LP without the infeasibility switch, everything shed)."""
    cfg = case.config
    alive = alive_buses(case, xi, plan)
    names = []

    def var(name):
        names.append(name)
        return len(names) - 1

    th = {b.id: var(f"th_{b.id}") for b in case.buses}
    pg = {g.id: var(f"pg_{g.id}") for g in case.generators}
    po = {g.id: var(f"po_{g.id}") for g in case.generators}
    dl = {d.id: var(f"d_{d.id}") for d in case.loads}
    live = [l for l in case.branches if alive[l.from_bus] and alive[l.to_bus]]
    fl = {l.id: var(f"f_{l.id}") for l in live}
    n = len(names)

    bounds = [None] * n
    for b in case.buses:
        lim = 0.0 if b.is_reference else cfg.theta_max
        bounds[th[b.id]] = (-lim, lim)
    for g in case.generators:
        bounds[pg[g.id]] = (g.p_min, g.p_max) if alive[g.bus_id] else (0.0, 0.0)
        bounds[po[g.id]] = (0.0, None)
    for d in case.loads:
        bounds[dl[d.id]] = (0.0, 1.0) if alive[d.bus_id] else (0.0, 0.0)
    for l in live:
        bounds[fl[l.id]] = (-l.s_max, l.s_max)

    A_eq, b_eq, A_ub, b_ub = [], [], [], []
    for b in case.buses:
        row = np.zeros(n)
        for g in case.generators:
            if g.bus_id == b.id:
                row[pg[g.id]] += 1
                row[po[g.id]] -= 1
        for d in case.loads:
            if d.bus_id == b.id:
                row[dl[d.id]] -= d.p_load
        for l in live:
            if l.from_bus == b.id:
                row[fl[l.id]] -= 1
            if l.to_bus == b.id:
                row[fl[l.id]] += 1
        A_eq.append(row)
        b_eq.append(0.0)
    for l in live:
        # flow = -b (theta_from - theta_to), angle difference within theta_delta_max
        row = np.zeros(n)
        row[fl[l.id]] = 1
        row[th[l.from_bus]] += l.b
        row[th[l.to_bus]] -= l.b
        A_eq.append(row)
        b_eq.append(0.0)
        for sgn in (1, -1):
            row = np.zeros(n)
            row[th[l.from_bus]] = sgn
            row[th[l.to_bus]] = -sgn
            A_ub.append(row)
            b_ub.append(cfg.theta_delta_max)
    for g in case.generators:
        row = np.zeros(n)
        row[po[g.id]] = 1
        row[pg[g.id]] = -1
        A_ub.append(row)
        b_ub.append(0.0)

    c = np.zeros(n)
    for d in case.loads:
        c[dl[d.id]] = -cfg.lambda_shed * d.p_load
    for g in case.generators:
        c[po[g.id]] = cfg.lambda_over
    const = cfg.lambda_shed * math.fsum(d.p_load for d in case.loads)
    res = linprog(c, A_ub=np.array(A_ub) if A_ub else None, b_ub=b_ub or None,
                  A_eq=np.array(A_eq), b_eq=b_eq, bounds=bounds, method="highs")
    served = res.fun + const if res.status == 0 else math.inf
    return min(served, const)


class EnumerationOracle:
    """All plans of the feasible set, each scenario's loss from :func:`dc_loss`."""

    def __init__(self, case, scenarios, loss=dc_loss):
        self.case = case
        self.scenarios = scenarios
        self.xis = scenarios.indicators(case.substation_ids)
        self.costs = case.costs()
        n = scenarios.n_levels
        self.plans = [p.normalized(case.substation_ids, n)
                      for p in enumerate_plans(case.substation_ids, n, self.costs)]
        self._cache = {}
        self.table = []
        for p in self.plans:
            losses = []
            for w, xi in enumerate(self.xis):
                key = (w, tuple(sorted(alive_buses(case, xi, p).items())))
                if key not in self._cache:
                    self._cache[key] = loss(case, xi, p)
                losses.append(self._cache[key])
            self.table.append((plan_cost(p, self.costs), p, losses))

    def sp(self, f):
        probs = self.scenarios.probs
        return min(math.fsum(pr * v for pr, v in zip(probs, ls))
                   for c, _, ls in self.table if c <= f)

    def ro(self, f):
        return min(max(ls) for c, _, ls in self.table if c <= f)

    def ews(self, f):
        probs = self.scenarios.probs
        return math.fsum(pr * min(ls[w] for c, _, ls in self.table if c <= f)
                         for w, pr in enumerate(probs))

    def mws(self, f):
        return max(min(ls[w] for c, _, ls in self.table if c <= f)
                   for w in range(len(self.xis)))

    def optimal_plans(self, f, kind="SP", tol=1e-9):
        val = self.sp(f) if kind == "SP" else self.ro(f)
        probs = self.scenarios.probs
        agg = ((lambda ls: math.fsum(p * v for p, v in zip(probs, ls))) if kind == "SP"
               else max)
        return [p for c, p, ls in self.table if c <= f and agg(ls) <= val + tol * (1 + abs(val))]


def close(a, b, rel=1e-7):
    return abs(a - b) <= rel * max(1.0, abs(a), abs(b))
