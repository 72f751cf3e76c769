import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from floodgrid.engine import (CAP_REACHED, INFEASIBLE, OPTIMAL, EngineConfig, SolverError,
                              cut_for, oa_refine, solve, solve_lp, solve_milp)
from floodgrid.model import GE, LE, ModelIR, QuadRow


def test_single_variable_max():
    m = ModelIR()
    x = m.add_var("x", 0, math.inf)
    m.add_row({x: 1}, LE, 1)
    m.add_objective({x: -1})
    res = solve_lp(m)
    assert res.status == OPTIMAL and res.objective == pytest.approx(-1.0, abs=1e-12)
    assert res.value("x") == pytest.approx(1.0)


def test_knapsack():
    w, v, cap = [3, 4, 5, 9, 4], [3, 4, 4, 10, 4], 11
    m = ModelIR()
    xs = [m.add_var(f"x{i}", binary=True) for i in range(5)]
    m.add_row(dict(zip(xs, w)), LE, cap)
    m.add_objective({i: -vi for i, vi in zip(xs, v)})
    best = min(-sum(vi * b for vi, b in zip(v, bits))
               for bits in itertools.product((0, 1), repeat=5)
               if sum(wi * b for wi, b in zip(w, bits)) <= cap)
    res = solve(m)
    assert res.objective == pytest.approx(best)
    assert res.bound <= res.objective + 1e-9


def test_infeasible_detected():
    m = ModelIR()
    a = m.add_var("a", binary=True)
    b = m.add_var("b", binary=True)
    m.add_row({a: 1, b: 1}, GE, 1.5)
    m.add_row({a: 1, b: 1}, LE, 1.2)
    assert solve(m).status == INFEASIBLE
    m = ModelIR()
    x = m.add_var("x", 0, 1)
    m.add_row({x: 1}, GE, 2)
    assert solve_lp(m).status == INFEASIBLE


def test_config_validation():
    with pytest.raises(ValueError):
        EngineConfig(gap_tol=0)


def _random_binary(seed, nb):
    rng = np.random.default_rng(seed)
    m_rows = int(rng.integers(1, 5))
    A = rng.integers(-5, 10, size=(m_rows, nb))
    b = A.clip(min=0).sum(axis=1) * rng.uniform(0.2, 0.7, m_rows)
    c = rng.integers(-10, 10, nb).astype(float)
    m = ModelIR()
    xs = [m.add_var(f"x{i}", binary=True) for i in range(nb)]
    for row, rhs in zip(A, b):
        m.add_row(dict(zip(xs, row)), LE, float(rhs))
    m.add_objective(dict(zip(xs, c)))
    grid = np.array(list(itertools.product((0, 1), repeat=nb)))
    ok = np.all(grid @ A.T <= b + 1e-12, axis=1)
    best = float((grid[ok] @ c).min()) if ok.any() else math.inf
    return m, best


@pytest.mark.parametrize("seed", range(100))
def test_branch_and_bound_matches_enumeration(seed):
    m, best = _random_binary(seed, 4 + seed % 9)
    res = solve_milp(m)
    if math.isinf(best):
        assert res.status == INFEASIBLE
    else:
        assert res.objective == pytest.approx(best, abs=1e-9)
        assert m.max_violation(res.x) <= 1e-7


@pytest.mark.parametrize("seed", range(15))
def test_mixed_integer_matches_enumeration(seed):
    rng = np.random.default_rng(100 + seed)
    nb, nc = 5, 3
    A = rng.normal(size=(4, nb + nc))
    rhs = rng.uniform(0.5, 2.0, 4)
    c = rng.normal(size=nb + nc)
    m = ModelIR()
    idx = [m.add_var(f"b{i}", binary=True) for i in range(nb)]
    idx += [m.add_var(f"y{i}", -2, 2) for i in range(nc)]
    for row, r in zip(A, rhs):
        m.add_row(dict(zip(idx, row)), LE, float(r))
    m.add_objective(dict(zip(idx, c)))
    best = math.inf
    for bits in itertools.product((0, 1), repeat=nb):
        lp = linprog(c[nb:], A_ub=A[:, nb:], b_ub=rhs - A[:, :nb] @ bits,
                     bounds=[(-2, 2)] * nc, method="highs")
        if lp.status == 0:
            best = min(best, lp.fun + c[:nb] @ bits)
    assert solve(m).objective == pytest.approx(best, abs=1e-8)


def test_warmstart_does_not_hurt():
    m, best = _random_binary(7, 12)
    cold = solve_milp(m)
    warm = solve_milp(m, warmstart={i: cold.x[i] for i in m.binaries})
    assert warm.objective == pytest.approx(cold.objective, abs=1e-9)
    assert warm.nodes <= cold.nodes


def test_node_cap_raises_with_incumbent():
    m, _ = _random_binary(3, 12)
    with pytest.raises(SolverError) as err:
        solve_milp(m, EngineConfig(node_cap=2))
    assert err.value.result.status == CAP_REACHED


def test_gradient_cut_is_valid():
    rng = np.random.default_rng(0)
    q = QuadRow({0: 1.0, 1: 2.0}, {2: -1.0}, 0.5)
    for _ in range(200):
        at = rng.normal(size=3) * 2
        coeffs, rhs = cut_for(q, at)
        y = rng.normal(size=3) * 2
        if q.value(y) <= 0:
            assert sum(c * y[i] for i, c in coeffs.items()) <= rhs + 1e-9


def test_cone_cut_is_valid_for_binary_beta():
    q = QuadRow({0: 1.0, 1: 1.0}, {}, 0.0, cone=(0, 1, 2, 1.5))
    rng = np.random.default_rng(1)
    for _ in range(200):
        coeffs, rhs = cut_for(q, np.array([*rng.normal(size=2) * 3, 1.0]))
        ang, rad = rng.uniform(0, 2 * math.pi), rng.uniform(0, 1.5)
        for beta, r in ((1.0, rad), (0.0, 0.0)):
            y = np.array([r * math.cos(ang), r * math.sin(ang), beta])
            assert sum(c * y[i] for i, c in coeffs.items()) <= rhs + 1e-12


def test_outer_approximation_on_circle():
    # max x + y on the unit disc: sqrt(2)
    m = ModelIR()
    x = m.add_var("x", -2, 2)
    y = m.add_var("y", -2, 2)
    m.add_quad_row({x: 1, y: 1}, {}, 1.0)
    m.add_objective({x: -1, y: -1})
    res = oa_refine(m, EngineConfig(oa_tol=1e-8))
    assert res.objective == pytest.approx(-math.sqrt(2), abs=1e-6)
    assert res.cuts > 0
    assert m.quad_rows[0].violation(res.x) <= 1e-8
