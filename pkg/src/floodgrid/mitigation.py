"""First-stage decisions: the mitigation feasible set, costs, thresholds, similarity."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .grid import GridCase, IndicatorMatrix, ScenarioSet, aggregate_max, aggregate_mean, convert_depths

CostTable = Mapping[tuple[str, int], int]


class MitigationPlan(dict):
    """``plan[k]`` holds the 0/1 protection flags for levels 1..r_hat of substation ``k``.

    Substations absent from the mapping are unprotected.
    """

    @classmethod
    def from_levels(cls, levels: Mapping[str, int], n_levels: int) -> "MitigationPlan":
        return cls({k: tuple(int(r <= lev) for r in range(1, n_levels + 1))
                    for k, lev in levels.items()})

    @classmethod
    def empty(cls, substation_ids: Iterable[str], n_levels: int) -> "MitigationPlan":
        return cls({k: (0,) * n_levels for k in substation_ids})

    def bit(self, k: str, r: int) -> int:
        bits = self.get(k)
        return 0 if bits is None else int(bits[r - 1])

    def levels(self) -> dict[str, int]:
        """Achieved protection level per substation (requires cumulative flags)."""
        if not is_cumulative(self):
            raise ValueError("plan flags are not cumulative")
        return {k: sum(bits) for k, bits in self.items()}

    def to_json(self) -> str:
        return json.dumps(self.levels(), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def normalized(self, substation_ids: Iterable[str], n_levels: int) -> "MitigationPlan":
        return MitigationPlan({k: tuple(self.get(k, (0,) * n_levels)) for k in substation_ids})


def plan_from_json(text: str, n_levels: int) -> MitigationPlan:
    return MitigationPlan.from_levels(json.loads(text), n_levels)


def cost_table(case: GridCase) -> dict[tuple[str, int], int]:
    return case.costs()


def plan_cost(x: Mapping[str, Sequence[int]], costs: CostTable) -> int:
    return int(sum(costs[(k, r)] * int(b)
                   for k, bits in x.items() for r, b in enumerate(bits, start=1)))


def is_cumulative(x: Mapping[str, Sequence[int]]) -> bool:
    return all(bits[r + 1] <= bits[r] for bits in x.values() for r in range(len(bits) - 1))


def is_feasible(x: Mapping[str, Sequence[int]], costs: CostTable, f: int) -> bool:
    if any(b not in (0, 1) for bits in x.values() for b in bits):
        return False
    if not is_cumulative(x):
        return False
    if any(bits and bits[-1] for bits in x.values()):  # top level is unattainable
        return False
    return plan_cost(x, costs) <= f


def enumerate_plans(substation_ids: Sequence[str], n_levels: int, costs: CostTable,
                    f: int | None = None) -> list[MitigationPlan]:
    """Every member of the feasible set (all plans when ``f`` is None)."""
    plans = [MitigationPlan()]
    for k in substation_ids:
        grown = []
        for p in plans:
            for lev in range(n_levels):  # level n_levels is inexorable
                q = MitigationPlan(p)
                q[k] = tuple(int(r <= lev) for r in range(1, n_levels + 1))
                grown.append(q)
        plans = grown
    if f is not None:
        plans = [p for p in plans if plan_cost(p, costs) <= f]
    return plans


# ---------------------------------------------------------------------------
# budget thresholds

def coverage_cost(xi: IndicatorMatrix, k: str, costs: CostTable) -> int:
    """Cost to hold back all mitigable flooding at ``k``; 0 when the flood is inexorable."""
    levels = xi.get(k)
    if not levels or levels[-1]:
        return 0
    return sum(costs[(k, r)] for r, flooded in enumerate(levels, start=1) if flooded)


def scenario_threshold(xi: IndicatorMatrix, costs: CostTable) -> int:
    return sum(coverage_cost(xi, k, costs) for k in xi)


def budget_threshold(kind: str, scenarios: ScenarioSet, costs: CostTable,
                     substation_ids: Sequence[str] | None = None) -> int:
    """Largest budget that can be put to use, computed from scenario data alone.

    ``kind`` is one of SP, EWS, EEV, MMV. RO and MWS need optimization; see
    :func:`floodgrid.twostage.budget_threshold_optimized`.
    """
    ids = list(substation_ids) if substation_ids is not None else sorted({k for k, _ in costs})
    kind = kind.upper()
    if kind in ("EEV", "EV", "MMV", "MV"):
        agg = aggregate_mean(scenarios) if kind in ("EEV", "EV") else aggregate_max(scenarios)
        xi = convert_depths({k: agg.depth(k) for k in ids}, scenarios.level_thresholds)
        return scenario_threshold(xi, costs)
    xis = scenarios.indicators(ids)
    if kind == "SP":
        return sum(max(coverage_cost(xi, k, costs) for xi in xis) for k in ids)
    if kind == "EWS":
        return max(scenario_threshold(xi, costs) for xi in xis)
    raise ValueError(f"threshold for {kind!r} is not available without optimization")


# ---------------------------------------------------------------------------
# similarity

def abs_sim(xa: Mapping[str, Sequence[int]], xb: Mapping[str, Sequence[int]],
            costs: CostTable) -> int:
    """Cost-weighted inner product of two plans."""
    return int(sum(costs[(k, r)] * a * xb.get(k, (0,) * len(bits))[r - 1]
                   for k, bits in xa.items() for r, a in enumerate(bits, start=1)))


def rel_sim(xa, xb, costs: CostTable) -> float:
    """``abs_sim`` normalised by the costlier plan; two empty plans count as identical."""
    denom = max(plan_cost(xa, costs), plan_cost(xb, costs))
    if denom == 0:
        return 1.0
    return abs_sim(xa, xb, costs) / denom


# ---------------------------------------------------------------------------
# no-good cut

@dataclass(frozen=True)
class NoGoodCut:
    """``sum(coeffs[k, r] * x[k, r]) >= rhs``."""

    coeffs: dict[tuple[str, int], int]
    rhs: int = 1

    @property
    def vacuous(self) -> bool:
        # x* = all ones leaves nothing on the left-hand side
        return not any(self.coeffs.values())

    def satisfied_by(self, x: Mapping[str, Sequence[int]]) -> bool:
        lhs = sum(c * x.get(k, ())[r - 1] if k in x else 0
                  for (k, r), c in self.coeffs.items())
        return lhs >= self.rhs


def no_good_cut(x_star: Mapping[str, Sequence[int]]) -> NoGoodCut:
    coeffs = {(k, r): 1 - int(b) for k, bits in x_star.items() for r, b in enumerate(bits, start=1)}
    if any(b not in (0, 1) for bits in x_star.values() for b in bits):
        raise ValueError("no-good cut needs a binary plan")
    return NoGoodCut(coeffs)
