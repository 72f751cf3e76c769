"""Grid and flooding data model: case/scenario files, depth conversion, statuses.

Everything here is immutable after construction. Case files and scenario files
are plain JSON documents; see ``README.md`` for the schema.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

SIZE_CLASSES = ("small", "medium", "large")

# marginal Tiger-Dam units per resilience level r = 1, 2, 3
DEFAULT_LEVEL_COSTS = {
    "small": (1, 2, 3),
    "medium": (2, 4, 6),
    "large": (3, 6, 9),
}

DEFAULT_THRESHOLDS = (0.0, 0.534, 1.0)


class CaseError(ValueError):
    """Base class for case/scenario input problems."""


class CaseParseError(CaseError):
    """The input file is not a well-formed case or scenario document."""


class CaseValidationError(CaseError):
    """One or more invariants failed; ``problems`` lists every violation."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class Config:
    lambda_shed: float = 1.0
    lambda_over: float = 1e-3
    theta_max: float = math.pi
    theta_delta_max: float = math.pi / 2
    t_cos: int = 7
    feasibility_tol: float = 1e-7
    integrality_tol: float = 1e-6
    oa_tol: float = 1e-6

    def problems(self) -> list[str]:
        out = []
        if not self.lambda_shed > 0:
            out.append(f"config: lambda_shed must be > 0 (got {self.lambda_shed})")
        if not self.lambda_over >= 0:
            out.append(f"config: lambda_over must be >= 0 (got {self.lambda_over})")
        if not 0 < self.theta_delta_max <= self.theta_max:
            out.append("config: need 0 < theta_delta_max <= theta_max")
        if self.t_cos < 1:
            out.append("config: t_cos must be >= 1")
        for name in ("feasibility_tol", "integrality_tol", "oa_tol"):
            if not getattr(self, name) > 0:
                out.append(f"config: {name} must be positive")
        return out

    def merged(self, overrides: Mapping[str, object]) -> "Config":
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise CaseParseError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **dict(overrides))


@dataclass(frozen=True)
class Substation:
    id: str
    bus_ids: tuple[str, ...]
    size_class: str = "small"
    costs: tuple[int, ...] | None = None  # overrides the size-class table

    def level_costs(self) -> tuple[int, ...]:
        if self.costs is not None:
            return tuple(self.costs)
        return DEFAULT_LEVEL_COSTS[self.size_class]


@dataclass(frozen=True)
class Bus:
    id: str
    substation_id: str
    v_target: float = 1.0
    v_min: float = 0.9
    v_max: float = 1.1
    is_reference: bool = False


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    b: float
    g: float = 0.0
    s_max: float = 1.0


@dataclass(frozen=True)
class Generator:
    id: str
    bus_id: str
    p_min: float = 0.0
    p_max: float = 0.0
    q_min: float = 0.0
    q_max: float = 0.0


@dataclass(frozen=True)
class Load:
    id: str
    bus_id: str
    p_load: float = 0.0
    q_load: float = 0.0


_SECTIONS = {
    "substations": Substation,
    "buses": Bus,
    "branches": Branch,
    "generators": Generator,
    "loads": Load,
}


@dataclass(frozen=True)
class GridCase:
    substations: tuple[Substation, ...]
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...] = ()
    loads: tuple[Load, ...] = ()
    config: Config = field(default_factory=Config)

    def __post_init__(self):
        problems = validate_case(self)
        if problems:
            raise CaseValidationError(problems)

    # lookups; cheap enough to recompute on the small cases this targets
    @property
    def bus_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def substation_ids(self) -> list[str]:
        return [k.id for k in self.substations]

    def bus(self, bus_id: str) -> Bus:
        return self.buses[self.bus_index[bus_id]]

    @property
    def reference_bus(self) -> Bus:
        return next(b for b in self.buses if b.is_reference)

    def edges(self) -> list[tuple[str, str]]:
        """Unordered bus pairs carrying at least one branch, in first-seen order."""
        seen: dict[tuple[str, str], None] = {}
        for br in self.branches:
            seen.setdefault(edge_key(br.from_bus, br.to_bus), None)
        return list(seen)

    def costs(self) -> dict[tuple[str, int], int]:
        return {
            (k.id, r): c
            for k in self.substations
            for r, c in enumerate(k.level_costs(), start=1)
        }

    def total_load(self) -> float:
        return float(sum(d.p_load for d in self.loads))

    def with_config(self, config: Config) -> "GridCase":
        return replace(self, config=config)


def edge_key(n: str, m: str) -> tuple[str, str]:
    return (n, m) if n <= m else (m, n)


def validate_case(case: GridCase) -> list[str]:
    problems: list[str] = []
    sub_ids = [k.id for k in case.substations]
    bus_ids = [b.id for b in case.buses]
    for kind, ids in (("substation", sub_ids), ("bus", bus_ids),
                      ("branch", [l.id for l in case.branches]),
                      ("generator", [g.id for g in case.generators]),
                      ("load", [d.id for d in case.loads])):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        if dup:
            problems.append(f"duplicate {kind} ids: {dup}")
    known_subs = set(sub_ids)
    known_buses = set(bus_ids)

    owner: dict[str, list[str]] = {}
    for k in case.substations:
        if not k.bus_ids:
            problems.append(f"substation {k.id}: bus_ids is empty")
        if k.size_class not in SIZE_CLASSES and k.costs is None:
            problems.append(f"substation {k.id}: unknown size_class {k.size_class!r}")
        if k.costs is not None and any(c <= 0 for c in k.costs):
            problems.append(f"substation {k.id}: costs must be positive")
        for n in k.bus_ids:
            owner.setdefault(n, []).append(k.id)
            if n not in known_buses:
                problems.append(f"substation {k.id}: unknown bus {n}")
    level_counts = {len(k.level_costs()) for k in case.substations
                    if k.size_class in SIZE_CLASSES or k.costs is not None}
    if len(level_counts) > 1:
        problems.append("substations disagree on the number of resilience levels")

    refs = [b.id for b in case.buses if b.is_reference]
    if len(refs) != 1:
        problems.append(f"exactly one reference bus required, found {len(refs)}: {refs}")
    for b in case.buses:
        if b.substation_id not in known_subs:
            problems.append(f"bus {b.id}: unknown substation {b.substation_id}")
        subs = owner.get(b.id, [])
        if subs != [b.substation_id]:
            problems.append(
                f"bus {b.id}: must belong to exactly substation {b.substation_id}, "
                f"listed by {subs}")
        if not 0 < b.v_min <= b.v_target <= b.v_max:
            problems.append(f"bus {b.id}: need 0 < v_min <= v_target <= v_max")

    for l in case.branches:
        for end in (l.from_bus, l.to_bus):
            if end not in known_buses:
                problems.append(f"branch {l.id}: unknown bus {end}")
        if l.from_bus == l.to_bus:
            problems.append(f"branch {l.id}: from_bus equals to_bus")
        if not l.s_max > 0:
            problems.append(f"branch {l.id}: s_max must be > 0")
        if l.b == 0 and l.g == 0:
            problems.append(f"branch {l.id}: b and g are both zero")

    for g in case.generators:
        if g.bus_id not in known_buses:
            problems.append(f"generator {g.id}: unknown bus {g.bus_id}")
        if not 0 <= g.p_min <= g.p_max:
            problems.append(f"generator {g.id}: need 0 <= p_min <= p_max")
        if not g.q_min <= g.q_max:
            problems.append(f"generator {g.id}: need q_min <= q_max")
        # the all-zero recourse point needs q = 0 admissible
        if not g.q_min <= 0 <= g.q_max:
            problems.append(f"generator {g.id}: need q_min <= 0 <= q_max")

    for d in case.loads:
        if d.bus_id not in known_buses:
            problems.append(f"load {d.id}: unknown bus {d.bus_id}")
        if not d.p_load >= 0:
            problems.append(f"load {d.id}: p_load must be >= 0")

    problems.extend(case.config.problems())
    return problems


# ---------------------------------------------------------------------------
# serialization

def _entity(cls, raw, section):
    if not isinstance(raw, dict):
        raise CaseParseError(f"{section}: entries must be objects")
    names = {f.name for f in fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise CaseParseError(f"{section}: unknown keys {sorted(unknown)} in {raw.get('id')}")
    kw = dict(raw)
    for key in ("bus_ids", "costs"):
        if kw.get(key) is not None:
            kw[key] = tuple(kw[key])
    try:
        return cls(**kw)
    except TypeError as exc:
        raise CaseParseError(f"{section}: {exc}") from None


def case_from_dict(doc: Mapping) -> GridCase:
    if not isinstance(doc, Mapping):
        raise CaseParseError("case document must be a JSON object")
    missing = [s for s in ("substations", "buses", "branches") if s not in doc]
    if missing:
        raise CaseParseError(f"case document missing sections {missing}")
    parts = {
        name: tuple(_entity(cls, raw, name) for raw in doc.get(name, []))
        for name, cls in _SECTIONS.items()
    }
    config = Config().merged(doc.get("config", {}))
    return GridCase(config=config, **parts)


def case_to_dict(case: GridCase) -> dict:
    out: dict = {}
    for name in _SECTIONS:
        rows = []
        for item in getattr(case, name):
            row = asdict(item)
            for key in ("bus_ids", "costs"):
                if key in row and row[key] is not None:
                    row[key] = list(row[key])
            if row.get("costs", 0) is None:
                del row["costs"]
            rows.append(row)
        out[name] = rows
    out["config"] = asdict(case.config)
    return out


def canonical_json(doc) -> str:
    # json renders floats with repr(), i.e. shortest round-trip
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _read_json(path) -> object:
    try:
        text = Path(path).read_text()
    except OSError:
        raise
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"{path}: {exc}") from None


def load_case(path) -> GridCase:
    return case_from_dict(_read_json(path))


def save_case(case: GridCase, path) -> None:
    Path(path).write_text(canonical_json(case_to_dict(case)))


# ---------------------------------------------------------------------------
# flooding scenarios

@dataclass(frozen=True)
class FloodScenario:
    id: str
    prob: float
    depths: Mapping[str, float]

    def depth(self, substation_id: str) -> float:
        return float(self.depths.get(substation_id, 0.0))


@dataclass(frozen=True)
class ScenarioSet:
    scenarios: tuple[FloodScenario, ...]
    level_thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS

    def __post_init__(self):
        problems = validate_scenarios(self)
        if problems:
            raise CaseValidationError(problems)

    @property
    def n_levels(self) -> int:
        return len(self.level_thresholds)

    @property
    def probs(self) -> np.ndarray:
        return np.array([s.prob for s in self.scenarios])

    def __len__(self):
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)

    def indicators(self, substation_ids: Iterable[str]) -> list["IndicatorMatrix"]:
        ids = list(substation_ids)
        return [convert_depths({k: s.depth(k) for k in ids}, self.level_thresholds)
                for s in self.scenarios]


def validate_scenarios(sset: ScenarioSet, case: GridCase | None = None) -> list[str]:
    problems = []
    t = sset.level_thresholds
    if not t or t[0] != 0:
        problems.append("thresholds must start at 0")
    if any(b <= a for a, b in zip(t, t[1:])):
        problems.append("thresholds must be strictly ascending")
    if not sset.scenarios:
        problems.append("scenario set is empty")
    total = sum(s.prob for s in sset.scenarios)
    if sset.scenarios and abs(total - 1.0) > 1e-9:
        problems.append(f"scenario probabilities sum to {total!r}, not 1")
    for s in sset.scenarios:
        if not 0 <= s.prob <= 1:
            problems.append(f"scenario {s.id}: prob outside [0, 1]")
        neg = sorted(k for k, v in s.depths.items() if v < 0)
        if neg:
            problems.append(f"scenario {s.id}: negative depth at {neg}")
    ids = [s.id for s in sset.scenarios]
    if len(set(ids)) != len(ids):
        problems.append("duplicate scenario ids")
    if case is not None:
        known = set(case.substation_ids)
        for s in sset.scenarios:
            unknown = sorted(set(s.depths) - known)
            if unknown:
                problems.append(f"scenario {s.id}: unknown substations {unknown}")
        widths = {len(k.level_costs()) for k in case.substations}
        if widths and widths != {sset.n_levels}:
            problems.append(
                f"scenario thresholds define {sset.n_levels} levels, "
                f"case costs define {sorted(widths)}")
    return problems


def scenarios_from_dict(doc: Mapping) -> ScenarioSet:
    if not isinstance(doc, Mapping) or "scenarios" not in doc:
        raise CaseParseError("scenario document must be an object with 'scenarios'")
    try:
        scen = tuple(
            FloodScenario(str(s["id"]), float(s["prob"]),
                          {str(k): float(v) for k, v in s.get("depths", {}).items()})
            for s in doc["scenarios"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CaseParseError(f"bad scenario entry: {exc}") from None
    thresholds = tuple(float(t) for t in doc.get("thresholds", DEFAULT_THRESHOLDS))
    return ScenarioSet(scen, thresholds)


def scenarios_to_dict(sset: ScenarioSet) -> dict:
    return {
        "thresholds": list(sset.level_thresholds),
        "scenarios": [
            {"id": s.id, "prob": s.prob, "depths": dict(s.depths)} for s in sset.scenarios
        ],
    }


def load_scenarios(path) -> ScenarioSet:
    return scenarios_from_dict(_read_json(path))


def save_scenarios(sset: ScenarioSet, path) -> None:
    Path(path).write_text(canonical_json(scenarios_to_dict(sset)))


# ---------------------------------------------------------------------------
# depth -> level indicators

class IndicatorMatrix(dict):
    """``xi[k]`` is a tuple of 0/1 flags for levels 1..r_hat of substation ``k``."""

    @property
    def n_levels(self) -> int:
        return len(next(iter(self.values()))) if self else 0

    def flooded(self, k: str, r: int) -> int:
        return self[k][r - 1]

    def flood_level(self, k: str) -> int:
        return sum(self[k])


def convert_depths(depths: Mapping[str, float], thresholds: Sequence[float]) -> IndicatorMatrix:
    """Level ``r`` of substation ``k`` is flooded iff depth strictly exceeds ``thresholds[r-1]``."""
    xi = IndicatorMatrix()
    for k, nu in depths.items():
        if nu < 0:
            raise ValueError(f"negative flood depth {nu} at substation {k}")
        xi[k] = tuple(int(nu > t) for t in thresholds)
    return xi


def _aggregate(sset: ScenarioSet, ident: str, reduce) -> FloodScenario:
    if not sset.scenarios:
        raise ValueError("cannot aggregate an empty scenario set")
    keys = sorted({k for s in sset.scenarios for k in s.depths})
    depths = {k: float(reduce(k)) for k in keys}
    return FloodScenario(ident, 1.0, depths)


def aggregate_mean(sset: ScenarioSet) -> FloodScenario:
    """Probability-weighted mean depth per substation (the EV scenario)."""
    def mean(k):
        return math.fsum(s.prob * s.depth(k) for s in sset.scenarios)
    return _aggregate(sset, "EV", mean)


def aggregate_max(sset: ScenarioSet) -> FloodScenario:
    """Substation-wise worst depth (the MV scenario)."""
    return _aggregate(sset, "MV", lambda k: max(s.depth(k) for s in sset.scenarios))


# ---------------------------------------------------------------------------
# component statuses

def substation_status(x: Mapping[str, Sequence[int]], xi: IndicatorMatrix, k: str) -> int:
    levels = xi.get(k)
    if levels is None:
        return 1
    bits = x.get(k, (0,) * len(levels))
    alive = 1
    for flooded, protected in zip(levels, bits):
        alive *= 1 - flooded * (1 - protected)
    return int(alive)


def component_status(x: Mapping[str, Sequence[int]], xi: IndicatorMatrix,
                     case: GridCase) -> tuple[dict[str, int], dict[tuple[str, str], int]]:
    """Bus statuses ``alpha`` and per-edge statuses ``beta`` implied by a plan and a flood."""
    by_sub = {k.id: substation_status(x, xi, k.id) for k in case.substations}
    alpha = {b.id: by_sub[b.substation_id] for b in case.buses}
    beta = {e: alpha[e[0]] * alpha[e[1]] for e in case.edges()}
    return alpha, beta


# ---------------------------------------------------------------------------
# AC power-flow residuals

@dataclass(frozen=True)
class OperatingPoint:
    """An AC operating point; flows are keyed by ``(branch_id, "from"|"to")``."""

    v: Mapping[str, float]
    theta: Mapping[str, float]
    p_gen: Mapping[str, float]
    q_gen: Mapping[str, float]
    p_flow: Mapping[tuple[str, str], float]
    q_flow: Mapping[tuple[str, str], float]
    p_served: Mapping[str, float] | None = None  # per load; default full demand
    q_served: Mapping[str, float] | None = None
    alpha: Mapping[str, int] | None = None  # bus statuses; default all operational


@dataclass(frozen=True)
class Residuals:
    p_kcl: dict[str, float]
    q_kcl: dict[str, float]
    p_ohm: dict[tuple[str, str], float]
    q_ohm: dict[tuple[str, str], float]

    def vector(self) -> np.ndarray:
        return np.array([*self.p_kcl.values(), *self.q_kcl.values(),
                         *self.p_ohm.values(), *self.q_ohm.values()])

    @property
    def max_abs(self) -> float:
        vec = self.vector()
        return float(np.max(np.abs(vec))) if vec.size else 0.0


def branch_flow(v_n, v_m, th_n, th_m, g, b):
    """Active and reactive flow leaving bus n toward m under the series-admittance model."""
    d = th_n - th_m
    p = v_n**2 * g - v_n * v_m * g * math.cos(d) - v_n * v_m * b * math.sin(d)
    q = -(v_n**2) * b + v_n * v_m * b * math.cos(d) - v_n * v_m * g * math.sin(d)
    return p, q


def ac_residuals(point: OperatingPoint, case: GridCase) -> Residuals:
    """Residuals of nodal balance and Ohm's law at every operational bus/branch.

    Signs: a KCL residual is generation minus served load minus outgoing flow;
    an Ohm residual is the stated flow minus the flow the voltages imply.
    """
    alpha = point.alpha or {b.id: 1 for b in case.buses}
    live = [b.id for b in case.buses if alpha.get(b.id, 1)]
    live_set = set(live)
    for n in live:
        if n not in point.v or n not in point.theta:
            raise ValueError(f"operating point lacks v/theta for bus {n}")

    p_bal = {n: 0.0 for n in live}
    q_bal = {n: 0.0 for n in live}
    for g in case.generators:
        if g.bus_id in live_set:
            p_bal[g.bus_id] += point.p_gen.get(g.id, 0.0)
            q_bal[g.bus_id] += point.q_gen.get(g.id, 0.0)
    for d in case.loads:
        if d.bus_id in live_set:
            ps = d.p_load if point.p_served is None else point.p_served.get(d.id, 0.0)
            qs = d.q_load if point.q_served is None else point.q_served.get(d.id, 0.0)
            p_bal[d.bus_id] -= ps
            q_bal[d.bus_id] -= qs

    p_ohm, q_ohm = {}, {}
    for l in case.branches:
        if l.from_bus not in live_set or l.to_bus not in live_set:
            continue
        for side, n, m in (("from", l.from_bus, l.to_bus), ("to", l.to_bus, l.from_bus)):
            key = (l.id, side)
            if key not in point.p_flow or key not in point.q_flow:
                raise ValueError(f"operating point lacks flows for branch {l.id} ({side})")
            pf, qf = point.p_flow[key], point.q_flow[key]
            p_bal[n] -= pf
            q_bal[n] -= qf
            p_exp, q_exp = branch_flow(point.v[n], point.v[m], point.theta[n],
                                       point.theta[m], l.g, l.b)
            p_ohm[key] = pf - p_exp
            q_ohm[key] = qf - q_exp
    return Residuals(p_bal, q_bal, p_ohm, q_ohm)
