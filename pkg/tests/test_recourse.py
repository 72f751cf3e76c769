import dataclasses
import math

import numpy as np
import pytest

from floodgrid.engine import solve
from floodgrid.grid import IndicatorMatrix, component_status
from floodgrid.mitigation import enumerate_plans
from floodgrid.recourse import (build_dc, build_lpac, build_recourse, normalize_variant,
                                solve_recourse, trivial_solution, trivial_vector)
from floodgrid.toys import random_instance, toy_case
from oracles import dc_loss

VARIANTS = ("DC", "LPAC_C", "LPAC_F", "QPAC")
NONE = {"k1": (0, 0, 0), "k2": (0, 0, 0)}


def xi_of(k1, k2):
    return IndicatorMatrix({"k1": k1, "k2": k2})


def test_variant_names():
    assert normalize_variant("lpac-f") == "LPAC_F"
    with pytest.raises(ValueError):
        normalize_variant("ac")


def test_toy_dry_is_fully_served():
    case = toy_case()
    sol = solve_recourse(build_dc(case, xi_of((0, 0, 0), (0, 0, 0)), NONE))
    assert sol.objective == pytest.approx(0.0, abs=1e-9)
    assert sol.shed == pytest.approx(0.0, abs=1e-9) and sol.chi == 0
    assert sol.group("p_flow")[("l1", "from")] == pytest.approx(0.5, abs=1e-9)


def test_toy_load_flooded_prefers_the_switch():
    case = toy_case()
    xi = xi_of((0, 0, 0), (1, 0, 0))
    sol = solve_recourse(build_dc(case, xi, NONE))
    # the switch costs exactly the load; running the generator costs 1e-4 more
    assert sol.objective == pytest.approx(0.5, abs=1e-12)
    assert sol.chi == 1 and sol.overgeneration == 0.0


def test_toy_load_flooded_without_switch():
    case = toy_case()
    rm = build_dc(case, xi_of((0, 0, 0), (1, 0, 0)), NONE)
    rm.model.fix(rm.block.chi, 0.0)
    sol = solve_recourse(rm)
    assert sol.group("p_flow")[("l1", "from")] == pytest.approx(0.0, abs=1e-12)
    assert sol.shed == pytest.approx(0.5, abs=1e-9)
    assert sol.overgeneration == pytest.approx(0.1, abs=1e-9)
    assert sol.objective == pytest.approx(0.5 + 1e-4, abs=1e-9)


def test_toy_mitigated_serves_everything():
    case = toy_case()
    xi = xi_of((1, 0, 0), (1, 0, 0))
    plan = {"k1": (1, 0, 0), "k2": (1, 0, 0)}
    for variant in ("DC", "LPAC_C"):
        sol = solve_recourse(build_recourse(case, xi, plan, variant))
        assert sol.shed == pytest.approx(0.0, abs=1e-9)
    half = {"k1": (0, 0, 0), "k2": (1, 0, 0)}
    assert solve_recourse(build_dc(case, xi, half)).objective == pytest.approx(0.5)


def test_lpac_builder_refuses_dc():
    with pytest.raises(ValueError):
        build_lpac(toy_case(), xi_of((0, 0, 0), (0, 0, 0)), NONE, variant="DC")


def test_fixed_plan_must_be_attainable():
    with pytest.raises(ValueError):
        build_dc(toy_case(), xi_of((0, 0, 0), (0, 0, 0)), {"k1": (1, 1, 1)})


@pytest.mark.parametrize("seed", range(12))
def test_dc_matches_independent_lp(seed):
    case, sc = random_instance(seed)
    rng = np.random.default_rng(seed)
    plans = enumerate_plans(case.substation_ids, 3, case.costs())
    for xi in sc.indicators(case.substation_ids):
        plan = plans[int(rng.integers(len(plans)))]
        sol = solve_recourse(build_dc(case, xi, plan))
        assert sol.objective == pytest.approx(dc_loss(case, xi, plan), abs=1e-7)


@pytest.mark.parametrize("seed", range(12))
def test_dc_and_lpac_c_agree_when_lossless(seed):
    case, sc = random_instance(seed)  # g = 0, no reactive data, flat voltages
    for xi in sc.indicators(case.substation_ids):
        for plan in enumerate_plans(case.substation_ids, 3, case.costs())[:6]:
            a = solve_recourse(build_recourse(case, xi, plan, "DC")).objective
            b = solve_recourse(build_recourse(case, xi, plan, "LPAC_C")).objective
            assert a == pytest.approx(b, abs=1e-6)


@pytest.mark.parametrize("variant", VARIANTS)
def test_everything_flooded_gives_the_trivial_value(variant):
    case, _ = random_instance(5, lpac=True)
    xi = IndicatorMatrix({k: (1, 1, 1) for k in case.substation_ids})
    plan = {k: (1, 1, 0) for k in case.substation_ids}
    sol = solve_recourse(build_recourse(case, xi, plan, variant))
    total = math.fsum(d.p_load for d in case.loads)
    # with no live generator the switch is a tie, so only the value is pinned
    assert sol.objective == pytest.approx(total, abs=1e-9)
    assert sol.shed == pytest.approx(total, abs=1e-9)


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("seed", range(6))
def test_recourse_properties(variant, seed):
    case, sc = random_instance(40 + seed, lpac=True)
    total = math.fsum(d.p_load for d in case.loads)
    rng = np.random.default_rng(seed)
    plans = enumerate_plans(case.substation_ids, 3, case.costs())
    for xi in sc.indicators(case.substation_ids):
        plan = plans[int(rng.integers(len(plans)))]
        rm = build_recourse(case, xi, plan, variant)
        # the trivial point is feasible for every variant
        assert rm.model.max_violation(trivial_vector(rm, xi, plan)) <= 1e-12
        res = solve(rm.model)
        assert res.optimal and res.objective <= total + 1e-9
        x, blk = res.x, rm.block
        alpha, beta = component_status(plan, xi, case)
        assert {n: round(x[i]) for n, i in blk.alpha.items()} == alpha
        assert {e: round(x[i]) for e, i in blk.beta.items()} == beta
        for l in case.branches:
            if alpha[l.from_bus] * alpha[l.to_bus] == 0:
                for side in ("from", "to"):
                    key = (l.id, side) if variant != "DC" else (l.id, "from")
                    assert abs(x[blk.p_flow[key]]) <= 1e-9
                    if variant != "DC":
                        assert abs(x[blk.q_flow[key]]) <= 1e-9
        if round(x[blk.chi]) == 1:
            assert math.fsum(x[i] for i in blk.p_over.values()) <= 1e-9


def test_trivial_solution_table():
    case, sc = random_instance(3, lpac=True)
    xi = sc.indicators(case.substation_ids)[0]
    sol = trivial_solution(case, xi, {}, "LPAC_F")
    assert sol.chi == 1 and sol.objective == pytest.approx(math.fsum(d.p_load for d in case.loads))
    assert all(v == 0 for v in sol.group("delta").values())
    assert all(v == 1 for v in sol.group("cos").values())
    assert all(v == 0 for g in ("p_gen", "p_flow", "sin", "theta", "phi")
               for v in sol.group(g).values())


@pytest.mark.parametrize("seed", range(4))
def test_weight_scaling_keeps_the_argmin(seed):
    case, sc = random_instance(seed)
    scaled = dataclasses.replace(case, config=dataclasses.replace(
        case.config, lambda_shed=3 * case.config.lambda_shed,
        lambda_over=3 * case.config.lambda_over))
    xi = sc.indicators(case.substation_ids)[0]
    for plan in enumerate_plans(case.substation_ids, 3, case.costs())[:5]:
        a = solve_recourse(build_dc(case, xi, plan)).objective
        b = solve_recourse(build_dc(scaled, xi, plan)).objective
        assert b == pytest.approx(3 * a, abs=1e-8)


def test_variable_plan_respects_budget():
    case = toy_case()
    xi = xi_of((1, 0, 0), (1, 0, 0))
    rm = build_dc(case, xi, budget=1)
    res = solve(rm.model)
    plan = rm.plan_vars.plan(res.x)
    assert sum(map(sum, plan.values())) <= 1
    assert res.objective == pytest.approx(0.5)
    rm = build_dc(case, xi, budget=2)
    assert solve(rm.model).objective == pytest.approx(0.0, abs=1e-9)


def test_qpac_without_reactive_range_stays_within_oa_tolerance():
    # with no reactive capability the reactive Ohm rows force cos_hat = 1, and
    # the quadratic cosine bound then pins the angle to zero through a tangency;
    # the OA loop stops at its violation tolerance, i.e. a relaxation
    case = toy_case(lossless=False)
    xi = xi_of((0, 0, 0), (0, 0, 0))
    rm = build_recourse(case, xi, NONE, "QPAC")
    res = solve(rm.model)
    assert max(q.violation(res.x) for q in rm.model.quad_rows) <= case.config.oa_tol
    assert res.objective <= 0.5 + 1e-9
    roomy = build_recourse(toy_case(lossless=False, reactive=0.5), xi, NONE, "QPAC")
    assert solve(roomy.model).objective == pytest.approx(0.0, abs=1e-9)
