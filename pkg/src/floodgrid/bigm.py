"""Big-M constants for the conditional Ohm's-law rows.

Each constant is stored as the interval ``[L, U]`` that the Ohm right-hand
side (the expression without the flow variable) can reach while the branch is
open; builders emit ``L (1 - beta) <= rhs <= U (1 - beta)``. Bounds come from
optimizing every variable of the expression over its own box independently,
which is exact for a separable objective.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .grid import Branch, Bus, Config, GridCase


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __iter__(self) -> Iterator[float]:
        yield self.lo
        yield self.hi

    def contains(self, values, tol: float = 0.0) -> bool:
        v = np.asarray(values)
        return bool(np.all(v >= self.lo - tol) and np.all(v <= self.hi + tol))


def _term(coef: float, lo: float, hi: float) -> tuple[float, float]:
    a, b = coef * lo, coef * hi
    return min(a, b), max(a, b)


def _sum(terms) -> Interval:
    lo = math.fsum(t[0] for t in terms)
    hi = math.fsum(t[1] for t in terms)
    return Interval(lo, hi)


def sin_range(config: Config) -> tuple[float, float]:
    return -2.0 * config.theta_max, 2.0 * config.theta_max


def cos_range(variant: str, config: Config) -> tuple[float, float]:
    """Range of the cosine stand-in on an open branch."""
    if variant in ("DC", "LPAC_C"):
        return 1.0, 1.0
    return math.cos(config.theta_delta_max), 1.0


def dc_big_m(branch: Branch, config: Config) -> Interval:
    """Range of ``-b * sin_hat`` with ``sin_hat`` in ``[-2 theta_max, 2 theta_max]``."""
    lo, hi = sin_range(config)
    return _sum([_term(-branch.b, lo, hi)])


@dataclass(frozen=True)
class LpacBigM:
    p: Interval
    q: Interval


def lpac_big_m(branch: Branch, bus_n: Bus, bus_m: Bus, variant: str, config: Config) -> LpacBigM:
    """Intervals of the active and reactive Ohm right-hand sides for flow ``n -> m``.

    ``sin_hat`` is taken in the ``n -> m`` orientation; its box is symmetric so
    the reverse orientation yields the same range.
    """
    g, b = branch.g, branch.b
    vn, vm = bus_n.v_target, bus_m.v_target
    s_lo, s_hi = sin_range(config)
    c_lo, c_hi = cos_range(variant, config)
    phi_n = (bus_n.v_min - vn, bus_n.v_max - vn)
    phi_m = (bus_m.v_min - vm, bus_m.v_max - vm)

    active = [
        _term(vn * g * (vm - vn), 0.0, 1.0),  # chi
        (vn * vn * g, vn * vn * g),
        _term(-vn * vm * g, c_lo, c_hi),
        _term(-vn * vm * b, s_lo, s_hi),
    ]
    reactive = [
        _term(vn * b * (vn - vm), 0.0, 1.0),  # chi
        (-vn * vn * b, -vn * vn * b),
        _term(-vn * vm * g, s_lo, s_hi),
        _term(vn * vm * b, c_lo, c_hi),
        _term(-vn * b - (vn - vm) * b, *phi_n),
        _term(vn * b, *phi_m),
    ]
    return LpacBigM(_sum(active), _sum(reactive))


def lpac_rhs_samples(branch: Branch, bus_n: Bus, bus_m: Bus, variant: str, config: Config,
                     n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Ohm right-hand sides at ``n`` random points of the open-branch box."""
    g, b = branch.g, branch.b
    vn, vm = bus_n.v_target, bus_m.v_target
    s = rng.uniform(*sin_range(config), n)
    c = rng.uniform(*cos_range(variant, config), n)
    chi = rng.integers(0, 2, n)
    fn = rng.uniform(bus_n.v_min - vn, bus_n.v_max - vn, n)
    fm = rng.uniform(bus_m.v_min - vm, bus_m.v_max - vm, n)
    p = vn * g * (vm - vn) * chi + vn * vn * g - vn * vm * (g * c + b * s)
    q = (vn * b * (vn - vm) * chi - vn * vn * b - vn * vm * (g * s - b * c)
         - vn * b * (fn - fm) - (vn - vm) * b * fn)
    return p, q


@dataclass(frozen=True)
class BigMSet:
    """``dc[branch_id]`` and ``lpac[(branch_id, "from"|"to")]`` intervals."""

    variant: str
    dc: dict
    lpac: dict


def calibrate(case: GridCase, variant: str) -> BigMSet:
    cfg = case.config
    dc = {l.id: dc_big_m(l, cfg) for l in case.branches}
    lpac = {}
    if variant != "DC":
        for l in case.branches:
            bn, bm = case.bus(l.from_bus), case.bus(l.to_bus)
            lpac[(l.id, "from")] = lpac_big_m(l, bn, bm, variant, cfg)
            lpac[(l.id, "to")] = lpac_big_m(l, bm, bn, variant, cfg)
    return BigMSet(variant, dc, lpac)


def audit(case: GridCase, variant: str, samples: int = 100_000, seed: int = 0) -> list[dict]:
    """Per-branch report of each interval and how far random samples escape it (<= 0 is good)."""
    rng = np.random.default_rng(seed)
    cfg = case.config
    bm = calibrate(case, variant)
    rows = []
    for l in case.branches:
        if variant == "DC":
            s = rng.uniform(*sin_range(cfg), samples)
            vals = -l.b * s
            iv = bm.dc[l.id]
            rows.append(_audit_row(l.id, "-", variant, "p", iv, vals))
            continue
        for side, n, m in (("from", l.from_bus, l.to_bus), ("to", l.to_bus, l.from_bus)):
            p, q = lpac_rhs_samples(l, case.bus(n), case.bus(m), variant, cfg, samples, rng)
            ivs = bm.lpac[(l.id, side)]
            rows.append(_audit_row(l.id, side, variant, "p", ivs.p, p))
            rows.append(_audit_row(l.id, side, variant, "q", ivs.q, q))
    return rows


def _audit_row(branch_id, side, variant, kind, iv: Interval, vals: np.ndarray) -> dict:
    violation = max(float(np.max(vals)) - iv.hi, iv.lo - float(np.min(vals)))
    return {"branch": branch_id, "side": side, "variant": variant, "equation": kind,
            "lower": iv.lo, "upper": iv.hi, "max_violation": violation}


def write_audit(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["branch"])
        w.writeheader()
        w.writerows(rows)
