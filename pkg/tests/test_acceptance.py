"""Acceptance criteria, one printed PASS/FAIL line each.

Run ``pytest tests/test_acceptance.py -s`` (or ``-v``) to see the lines; they
are written with capture disabled so they show up in a plain run too.
"""
import math
import time

import numpy as np
import pytest

from floodgrid.bigm import audit
from floodgrid.cli import main, read_ledger
from floodgrid.engine import solve
from floodgrid.geometry import (DODECAGON, PUBLISHED_T7, SQUARE, TangentSet, b2,
                                equidistant_tangent_points, max_relax_error,
                                optimal_tangent_points)
from floodgrid.grid import IndicatorMatrix
from floodgrid.mitigation import enumerate_plans
from floodgrid.model import export_lp
from floodgrid.recourse import build_recourse, solve_recourse, trivial_vector
from floodgrid.toys import (equiprobable, random_instance, symmetric_case, symmetric_scenarios,
                            toy_case, toy_scenarios)
from floodgrid.twostage import (TwoStageSpec, bound_ews, bound_mws, check_uniqueness, evpi,
                                solve_eev, solve_mmv, solve_ro, solve_sp, threshold)
from oracles import EnumerationOracle, close

VARIANTS = ("DC", "LPAC_C", "LPAC_F", "QPAC")
N_INSTANCES = 100


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    return emit


@pytest.fixture(scope="module")
def instances():
    return [random_instance(seed) for seed in range(N_INSTANCES)]


def test_criterion_1_minimax_tangents(report):
    t0 = time.perf_counter()
    ts = optimal_tangent_points(7)
    secs = time.perf_counter() - t0
    half = np.array(ts.points[3:])
    dev = float(np.max(np.abs(half - np.array(PUBLISHED_T7))))
    mirrored = np.allclose(ts.points[:3], -half[:0:-1], atol=1e-12)
    ok = dev <= 5e-3 and secs < 10 and mirrored
    report(1, ok, f"T=7 points {np.round(half, 4).tolist()}, max deviation {dev:.2e}, "
                  f"{secs:.2f} s")
    assert ok


def test_criterion_2_extensive_forms_match_enumeration(report, instances):
    t0 = time.perf_counter()
    worst, checked = 0.0, 0
    for case, sc in instances:
        oracle = EnumerationOracle(case, sc)
        top = threshold("SP", TwoStageSpec(case, sc)) + 1
        for f in range(top + 1):
            s = TwoStageSpec(case, sc, "SP", "DC", f)
            for z, ref in ((solve_sp(s).z, oracle.sp(f)), (solve_ro(s).z, oracle.ro(f))):
                worst = max(worst, abs(z - ref) / max(1.0, abs(ref)))
                checked += 1
    secs = time.perf_counter() - t0
    ok = worst <= 1e-7 and secs < 300
    report(2, ok, f"{checked} SP/RO solves on {len(instances)} instances, worst relative "
                  f"error {worst:.1e}, {secs:.1f} s")
    assert ok


def test_criterion_3_bounds_sandwich(report, instances):
    rng = np.random.default_rng(3)
    fails = []
    for i, (case, sc) in enumerate(instances):
        sc = equiprobable(sc)
        f = int(rng.integers(0, threshold("SP", TwoStageSpec(case, sc)) + 1))
        s = TwoStageSpec(case, sc, "SP", "DC", f)
        sp, ro = solve_sp(s).z, solve_ro(s).z
        ews, mws = bound_ews(s).z, bound_mws(s).z
        eev, mmv = solve_eev(s).z, solve_mmv(s).z
        tol = 1e-7
        checks = [ews <= sp + tol, sp <= eev + tol, mws <= ro + tol, ro <= mmv + tol,
                  eev - sp >= -tol, sp - ews >= -tol, ro >= sp - tol]
        if not all(checks):
            fails.append(i)
    ok = not fails
    report(3, ok, f"EWS<=SP<=EEV, MWS<=RO<=MMV, VSS>=0, EVPI>=0, RO>=SP on "
                  f"{len(instances)} equiprobable instances; failures {fails}")
    assert ok


def test_criterion_4_budget_monotonicity(report, instances):
    solvers = {"SP": solve_sp, "RO": solve_ro, "EWS": bound_ews, "MWS": bound_mws}
    suite = [(toy_case(), toy_scenarios())] + instances[:20]
    bad = []
    for i, (case, sc) in enumerate(suite):
        base = TwoStageSpec(case, sc)
        for kind, solver in solvers.items():
            t = threshold(kind, base)
            z = [solver(base.with_(kind=kind, budget=f)).z for f in range(t + 3)]
            mono = all(b <= a + 1e-9 for a, b in zip(z, z[1:]))
            flat = all(abs(v - z[t]) <= 1e-9 for v in z[t:])
            if not (mono and flat):
                bad.append((i, kind))
    ok = not bad
    report(4, ok, f"SP/RO/EWS/MWS nonincreasing and flat past threshold on {len(suite)} "
                  f"instances; violations {bad}")
    assert ok


def test_criterion_5_relatively_complete_recourse(report):
    rng = np.random.default_rng(0)
    worst_trivial, worst_excess, infeasible, pairs = 0.0, -math.inf, 0, 0
    for i in range(1000):
        case, _ = random_instance(1000 + i, lpac=True)
        plans = enumerate_plans(case.substation_ids, 3, case.costs())
        plan = plans[int(rng.integers(len(plans)))]
        xi = IndicatorMatrix({k: tuple(int(r < lev) for r in range(3)) for k, lev in
                              zip(case.substation_ids, rng.integers(0, 4, len(case.substations)))})
        total = math.fsum(d.p_load for d in case.loads)
        for variant in VARIANTS:
            rm = build_recourse(case, xi, plan, variant)
            worst_trivial = max(worst_trivial, rm.model.max_violation(trivial_vector(rm, xi, plan)))
            res = solve(rm.model)
            if not res.optimal:
                infeasible += 1
                continue
            worst_excess = max(worst_excess, res.objective - total)
        pairs += 1
    ok = infeasible == 0 and worst_excess <= 1e-9 and worst_trivial <= 1e-12
    report(5, ok, f"{pairs} (x, xi) pairs x {len(VARIANTS)} variants: {infeasible} infeasible, "
                  f"max(optimum - sum p_d) {worst_excess:.1e}, trivial-point violation "
                  f"{worst_trivial:.1e}")
    assert ok


def _ohm_residual_closed(rm, x):
    """Largest |Ohm right-hand side - flow| over rows whose branch is in service."""
    beta_ids = set(rm.block.beta.values())
    worst = 0.0
    for row in rm.model.rows:
        if "ohmlo" not in row.name:
            continue
        (b_idx,) = [i for i in row.coeffs if i in beta_ids]
        if round(x[b_idx]) != 1:
            continue
        lo = row.coeffs[b_idx]
        act = sum(c * x[i] for i, c in row.coeffs.items() if i != b_idx)
        worst = max(worst, abs(act + lo - row.rhs))
    return worst


def test_criterion_6_big_m(report):
    worst_escape, n_rows = -math.inf, 0
    for seed in range(5):
        case, _ = random_instance(seed, lpac=True)
        for variant in VARIANTS:
            rows = audit(case, variant, samples=100_000, seed=seed)
            n_rows += len(rows)
            worst_escape = max(worst_escape, max(r["max_violation"] for r in rows))
    rng = np.random.default_rng(6)
    worst_slack = 0.0
    for seed in range(30):
        case, sc = random_instance(200 + seed, lpac=True)
        plans = enumerate_plans(case.substation_ids, 3, case.costs())
        for xi in sc.indicators(case.substation_ids):
            plan = plans[int(rng.integers(len(plans)))]
            for variant in VARIANTS:
                rm = build_recourse(case, xi, plan, variant)
                worst_slack = max(worst_slack, _ohm_residual_closed(rm, solve(rm.model).x))
    ok = worst_escape <= 0 and worst_slack <= 1e-7
    report(6, ok, f"{n_rows} intervals x 1e5 samples, worst escape {worst_escape:.3g}; "
                  f"Ohm slack with beta=1 at most {worst_slack:.1e}")
    assert ok


def test_criterion_7_geometry(report):
    tdm = math.pi / 2
    grid = np.linspace(-tdm, tdm, 10_000)
    cos = np.cos(grid)
    envelopes = [equidistant_tangent_points(t) for t in range(2, 8)]
    envelopes += [optimal_tangent_points(t, n_starts=16) for t in range(1, 8)]
    below = min(float(np.min(ts.envelope(grid) - cos)) for ts in envelopes)
    below = min(below, float(np.min(b2(grid, tdm) - cos)))
    ang = np.linspace(0, 2 * math.pi, 10_000, endpoint=False)
    inside = all(poly.contains(math.cos(a), math.sin(a), 1.0, tol=1e-12)
                 for poly in (SQUARE, DODECAGON) for a in ang)
    better = {t: (max_relax_error(optimal_tangent_points(t)),
                  max_relax_error(equidistant_tangent_points(t))) for t in (5, 7)}
    ok = below >= -1e-9 and inside and all(o < e for o, e in better.values())
    report(7, ok, f"min(bound - cos) {below:.1e}; polygons contain disc: {inside}; "
                  f"optimal vs equidistant error "
                  + ", ".join(f"T={t}: {o:.4f} < {e:.4f}" for t, (o, e) in better.items()))
    assert ok


TOY_XI = IndicatorMatrix({"k1": (1, 0, 0), "k2": (1, 0, 0)})
LOAD_ONLY_XI = IndicatorMatrix({"k1": (0, 0, 0), "k2": (1, 0, 0)})
NONE = {"k1": (0, 0, 0), "k2": (0, 0, 0)}
BOTH = {"k1": (1, 0, 0), "k2": (1, 0, 0)}


def test_criterion_8_hand_toy(report):
    case = toy_case()
    unmitigated = solve_recourse(build_recourse(case, LOAD_ONLY_XI, NONE, "DC"))
    mitigated = {v: solve_recourse(build_recourse(case, TOY_XI, BOTH, v)) for v in ("DC", "LPAC_C")}
    agree = all(
        abs(solve_recourse(build_recourse(case, xi, p, "DC")).objective
            - solve_recourse(build_recourse(case, xi, p, "LPAC_C")).objective) <= 1e-6
        for xi in (TOY_XI, LOAD_ONLY_XI, IndicatorMatrix({"k1": (0, 0, 0), "k2": (0, 0, 0)}))
        for p in (NONE, BOTH))
    shed_ok = abs(unmitigated.shed - 0.5) <= 1e-9
    over_ok = abs(unmitigated.overgeneration - 0.1) <= 1e-9
    mit_ok = all(abs(s.shed) <= 1e-9 for s in mitigated.values())
    ok = shed_ok and over_ok and mit_ok and agree
    report(8, ok, f"unmitigated shed {unmitigated.shed:.4f}, overgeneration "
                  f"{unmitigated.overgeneration:.4f} (chi={unmitigated.chi}, objective "
                  f"{unmitigated.objective:.6f}); mitigated shed "
                  f"{mitigated['DC'].shed:.1e}; DC vs LPAC-C agree: {agree}"
                  + ("" if over_ok else "; the stated 0.1 overgeneration belongs to the chi=0 "
                                        "branch, whose value 0.5001 is beaten by chi=1 at 0.5"))
    # the attainable parts of the criterion
    assert shed_ok and mit_ok and agree


@pytest.mark.xfail(strict=True, reason="the stated unmitigated overgeneration of 0.1 is not "
                                       "optimal: the switch solution costs 0.5 < 0.5 + 1e-4")
def test_criterion_8_stated_overgeneration():
    sol = solve_recourse(build_recourse(toy_case(), LOAD_ONLY_XI, NONE, "DC"))
    assert sol.overgeneration == pytest.approx(0.1, abs=1e-9)


def test_criterion_9_qpac_external(report, tmp_path):
    pytest.importorskip("cvxpy")
    from external_solver import solve_file

    case = toy_case(lossless=False, reactive=0.5)
    worst = 0.0
    for xi in (IndicatorMatrix({"k1": (0, 0, 0), "k2": (0, 0, 0)}), TOY_XI, LOAD_ONLY_XI):
        for plan in (NONE, BOTH):
            rm = build_recourse(case, xi, plan, "QPAC")
            embedded = solve_recourse(rm).objective
            external = solve_file(str(export_lp(rm.model, tmp_path / "qpac.lp")))
            worst = max(worst, abs(embedded - external))
    ok = worst <= 1e-5
    report(9, ok, f"QPAC toy vs cvxpy/Clarabel over the exported LP file: max difference "
                  f"{worst:.1e}")
    assert ok


def test_criterion_10_uniqueness(report):
    sc = symmetric_scenarios()
    out = {}
    for label, case in (("symmetric", symmetric_case()),
                        ("asymmetric", symmetric_case(asymmetric=True))):
        s = TwoStageSpec(case, sc, "SP", "DC", 1)
        res = solve_sp(s)
        rep = check_uniqueness(res.plan, s, res.z)
        n_opt = len(EnumerationOracle(case, sc).optimal_plans(1))
        out[label] = (rep.unique, n_opt)
    ok = out["symmetric"] == (False, 2) and out["asymmetric"] == (True, 1)
    report(10, ok, f"symmetric: unique={out['symmetric'][0]} (enumeration finds "
                   f"{out['symmetric'][1]} optima); asymmetric: unique={out['asymmetric'][0]} "
                   f"(enumeration finds {out['asymmetric'][1]})")
    assert ok


def test_criterion_11_deterministic_ledgers(report, tmp_path):
    from floodgrid.cli import bundled

    digests = []
    for run in ("a", "b"):
        out = tmp_path / run
        for case, scen in (("toy_case.json", "toy_scenarios.json"),
                           ("symmetric_case.json", "symmetric_scenarios.json")):
            code = main(["sweep", "--case", str(bundled(case)), "--scenarios", str(bundled(scen)),
                         "--kind", "SP,RO,EEV,EWS,MMV,MWS", "--pf", "DC,LPAC_C",
                         "--budget", "0:4", "--out", str(out)])
            assert code == 0
        digests.append((out / "ledger.sha256").read_text())
    rows = len(read_ledger(tmp_path / "a" / "ledger.csv"))
    ok = digests[0] == digests[1]
    report(11, ok, f"two sweeps of {rows} rows; hashes {digests[0][:12]} / {digests[1][:12]}")
    assert ok
