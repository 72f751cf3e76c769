"""Polyhedral and quadratic relaxations of cos(theta) and of the apparent-power disc."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import fsolve, minimize

VARIANTS = ("DC", "LPAC_C", "LPAC_F", "QPAC")

# published 7-point minimax set for theta_delta_max = pi/2, rounded to 3 places
PUBLISHED_T7 = (0.0, 0.354, 0.735, 1.211)


class DegenerateTangents(ValueError):
    """Adjacent tangent lines are parallel (equal slopes)."""


class ConvergenceError(RuntimeError):
    def __init__(self, message, incumbent=None):
        super().__init__(message)
        self.incumbent = incumbent


def b1(theta, theta_hat):
    """Line tangent to cos at ``theta_hat``, evaluated at ``theta``."""
    return (theta_hat - theta) * np.sin(theta_hat) + np.cos(theta_hat)


def b2(theta, theta_delta_max):
    """Concave quadratic upper bound on cos meeting it at 0 and at +-theta_delta_max."""
    if theta_delta_max <= 0:
        raise ValueError("theta_delta_max must be positive")
    return 1.0 - (1.0 - math.cos(theta_delta_max)) * (np.asarray(theta) / theta_delta_max) ** 2


def b2_curvature(theta_delta_max: float) -> float:
    """``k`` such that ``b2(theta) = 1 - k * theta**2``."""
    return (1.0 - math.cos(theta_delta_max)) / theta_delta_max**2


def intersection(t_a: float, t_b: float) -> tuple[float, float]:
    """Abscissa where the tangents at ``t_a`` and ``t_b`` cross, and the common value."""
    sa, sb = math.sin(t_a), math.sin(t_b)
    ca, cb = math.cos(t_a), math.cos(t_b)
    den = sa - sb
    if abs(den) < 1e-15:
        raise DegenerateTangents(f"tangents at {t_a} and {t_b} are parallel")
    theta = (t_a * sa - t_b * sb + ca - cb) / den
    value = (sa * cb - ca * sb - (t_a - t_b) * sa * sb) / den
    return theta, value


@dataclass(frozen=True)
class TangentSet:
    points: tuple[float, ...]
    theta_delta_max: float = math.pi / 2

    def __post_init__(self):
        pts = tuple(sorted(float(p) for p in self.points))
        object.__setattr__(self, "points", pts)
        if not pts:
            raise ValueError("tangent set is empty")
        lim = self.theta_delta_max + 1e-12
        if pts[0] < -lim or pts[-1] > lim:
            raise ValueError("tangent points must lie in [-theta_delta_max, theta_delta_max]")

    def envelope(self, theta):
        """Pointwise minimum of the tangent lines (an upper bound on cos)."""
        th = np.asarray(theta, dtype=float)
        pts = np.asarray(self.points)
        return np.min(b1(th[..., None], pts), axis=-1)

    def candidates(self) -> np.ndarray:
        """Interval endpoints plus crossings of adjacent, non-parallel tangents."""
        out = [-self.theta_delta_max, self.theta_delta_max]
        for a, b in zip(self.points, self.points[1:]):
            if b - a > 1e-12:
                out.append(intersection(a, b)[0])
        return np.array(out)

    def to_json(self) -> str:
        return json.dumps({"points": list(self.points), "theta_delta_max": self.theta_delta_max})

    @classmethod
    def from_json(cls, text: str) -> "TangentSet":
        doc = json.loads(text)
        return cls(tuple(doc["points"]), doc["theta_delta_max"])


def max_relax_error(tangents: TangentSet) -> float:
    """Worst gap between the tangent envelope and cos over [-tdm, tdm]."""
    c = tangents.candidates()
    return float(np.max(tangents.envelope(c) - np.cos(c)))


def grid_relax_error(tangents: TangentSet, n: int = 100_001) -> float:
    th = np.linspace(-tangents.theta_delta_max, tangents.theta_delta_max, n)
    return float(np.max(tangents.envelope(th) - np.cos(th)))


def equidistant_tangent_points(T: int, theta_delta_max: float = math.pi / 2) -> TangentSet:
    if T < 2:
        raise ValueError("equidistant tangent sets need T >= 2")
    return TangentSet(tuple((2 * t - T - 1) / (T - 1) * theta_delta_max for t in range(1, T + 1)),
                      theta_delta_max)


def _mirror(half: np.ndarray, T: int) -> np.ndarray:
    a = np.sort(np.abs(half))
    if T % 2:
        return np.concatenate([-a[::-1], [0.0], a])
    return np.concatenate([-a[::-1], a])


def _error_of(points: np.ndarray, tdm: float) -> float:
    pts = np.sort(points)
    cands = [-tdm, tdm]
    for a, b in zip(pts[:-1], pts[1:]):
        if abs(math.sin(a) - math.sin(b)) > 1e-14:
            cands.append(intersection(a, b)[0])
    c = np.array(cands)
    return float(np.max(np.min(b1(c[:, None], pts[None, :]), axis=1) - np.cos(c)))


def _equalize(half: np.ndarray, T: int, tdm: float) -> np.ndarray | None:
    """Newton polish: make every positive-side candidate error equal (equioscillation)."""
    m = half.size

    def gaps(a):
        pts = _mirror(a, T)
        pos = pts[pts >= 0] if T % 2 else pts[pts > 0]
        errs = []
        if T % 2 == 0:
            th, val = intersection(-pos[0], pos[0])
            errs.append(val - math.cos(th))
        for lo, hi in zip(pos, pos[1:]):
            th, val = intersection(lo, hi)
            errs.append(val - math.cos(th))
        errs.append(b1(tdm, pos[-1]) - math.cos(tdm))
        errs = np.array(errs)
        return errs[1:] - errs[0]

    if m == 0:
        return half
    try:
        sol, _, ier, _ = fsolve(gaps, half, full_output=True, xtol=1e-14)
    except (DegenerateTangents, ValueError):
        return None
    if ier != 1 or np.any(sol <= 0) or np.any(sol > tdm) or np.max(np.abs(gaps(sol))) > 1e-12:
        return None
    return np.sort(sol)


def optimal_tangent_points(T: int, theta_delta_max: float = math.pi / 2, n_starts: int = 64,
                           seed: int = 0, tol: float = 1e-10) -> TangentSet:
    """Tangent set minimising the worst envelope-vs-cos gap, under mirror symmetry.

    Multistart Nelder-Mead on the candidate-point error, followed by a Newton
    polish that equalises the active errors. Starts are generated from
    ``seed`` so the result does not depend on scheduling.
    """
    if T < 1:
        raise ValueError("need at least one tangent point")
    tdm = theta_delta_max
    m = T // 2
    if m == 0:
        return TangentSet((0.0,), tdm)

    def objective(a):
        return _error_of(_mirror(np.clip(a, 1e-9, tdm), T), tdm)

    rng = np.random.default_rng(seed)
    best_x, best_f = None, math.inf
    for _ in range(n_starts):
        a0 = np.sort(rng.uniform(0.0, tdm, m))
        res = minimize(objective, a0, method="Nelder-Mead",
                       options={"xatol": tol, "fatol": tol * 1e-3, "maxiter": 4000 * m})
        if res.fun < best_f - 1e-15:
            best_x, best_f = np.clip(res.x, 1e-9, tdm), res.fun
    if best_x is None:
        raise ConvergenceError("no start converged")
    polished = _equalize(np.sort(best_x), T, tdm)
    if polished is not None and objective(polished) <= best_f + 1e-12:
        best_x, best_f = polished, objective(polished)

    result = TangentSet(tuple(_mirror(best_x, T)), tdm)
    if not is_locally_optimal(result):
        raise ConvergenceError("minimax search did not reach a local optimum", incumbent=result)
    return result


def is_locally_optimal(tangents: TangentSet, step: float = 1e-4) -> bool:
    """No single-point move of +-``step`` lowers the worst-case error."""
    base = max_relax_error(tangents)
    pts = np.array(tangents.points)
    tdm = tangents.theta_delta_max
    for i in range(pts.size):
        for d in (-step, step):
            trial = pts.copy()
            trial[i] = min(max(trial[i] + d, -tdm), tdm)
            if _error_of(trial, tdm) < base - 1e-12:
                return False
    return True


# ---------------------------------------------------------------------------
# disc polygons

@dataclass(frozen=True)
class DiscPolygon:
    angles: tuple[float, ...]

    def __post_init__(self):
        if not self.angles:
            raise ValueError("polygon needs at least one angle")
        if len(set(np.round(np.mod(self.angles, 2 * math.pi), 12))) != len(self.angles):
            raise ValueError("polygon angles must be distinct")

    @classmethod
    def regular(cls, n: int) -> "DiscPolygon":
        return cls(tuple(t * 2 * math.pi / n for t in range(1, n + 1)))

    def halfplanes(self) -> list[tuple[tuple[float, float], float]]:
        return disc_halfplanes(self.angles)

    def contains(self, p, q, s_max: float, beta: float = 1.0, tol: float = 1e-12) -> bool:
        return all(a * p + b * q <= s_max * beta * rhs + tol for (a, b), rhs in self.halfplanes())

    def vertices(self, s_max: float) -> np.ndarray:
        """Corners of the polygon ``{cos(a) p + sin(a) q <= s_max}``, counter-clockwise."""
        ang = np.sort(np.mod(self.angles, 2 * math.pi))
        out = []
        for a, b in zip(ang, np.roll(ang, -1)):
            half = (np.mod(b - a, 2 * math.pi)) / 2
            out.append(s_max / math.cos(half) * np.array([math.cos(a + half), math.sin(a + half)]))
        return np.array(out)


SQUARE = DiscPolygon.regular(4)
DODECAGON = DiscPolygon.regular(12)


def disc_halfplanes(angles: Sequence[float]) -> list[tuple[tuple[float, float], float]]:
    """One ``cos(a) p + sin(a) q <= rhs * s_max * beta`` row per angle; ``rhs`` is 1."""
    if len(angles) == 0:
        raise ValueError("need at least one angle")
    rows = []
    for a in angles:
        c, s = math.cos(a), math.sin(a)
        # snap the axis-aligned angles so the square stays exactly a box
        c = 0.0 if abs(c) < 1e-15 else c
        s = 0.0 if abs(s) < 1e-15 else s
        rows.append(((c, s), 1.0))
    return rows


# ---------------------------------------------------------------------------
# per-variant geometry

@dataclass(frozen=True)
class VariantGeometry:
    variant: str
    tangents: TangentSet | None = None
    polygon: DiscPolygon | None = None
    exact_disc: bool = False
    quadratic_cos: bool = False

    @property
    def unit_cos(self) -> bool:
        return self.variant in ("DC", "LPAC_C")


_T7_CACHE: dict[tuple[int, float], TangentSet] = {}


def cached_optimal_tangents(T: int, theta_delta_max: float) -> TangentSet:
    key = (T, float(theta_delta_max))
    if key not in _T7_CACHE:
        _T7_CACHE[key] = optimal_tangent_points(T, theta_delta_max)
    return _T7_CACHE[key]


def variant_geometry(variant: str, theta_delta_max: float = math.pi / 2, t_cos: int = 7,
                     tangents: TangentSet | None = None) -> VariantGeometry:
    variant = variant.upper().replace("-", "_")
    if variant == "DC":
        return VariantGeometry("DC")
    if variant == "LPAC_C":
        return VariantGeometry("LPAC_C", polygon=SQUARE)
    if variant == "LPAC_F":
        tangents = tangents or cached_optimal_tangents(t_cos, theta_delta_max)
        return VariantGeometry("LPAC_F", tangents=tangents, polygon=DODECAGON)
    if variant == "QPAC":
        return VariantGeometry("QPAC", polygon=SQUARE, exact_disc=True, quadratic_cos=True)
    raise ValueError(f"unknown power-flow variant {variant!r}; expected one of {VARIANTS}")


def envelope_samples(tangent_sets: dict[str, TangentSet], theta_delta_max: float,
                     n: int = 201) -> list[dict]:
    """Rows of (theta, cos, one envelope column per set, quadratic bound) for plotting."""
    rows = []
    for th in np.linspace(-theta_delta_max, theta_delta_max, n):
        row = {"theta": float(th), "cos": math.cos(th)}
        for name, ts in tangent_sets.items():
            row[name] = float(ts.envelope(th))
        row["quadratic"] = float(b2(th, theta_delta_max))
        rows.append(row)
    return rows
