"""``floodgrid`` command line.

Exit codes: 0 success, 1 invalid input, 2 solver failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import subprocess
import sys
import time
import uuid
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

from . import __version__
from .bigm import audit, write_audit
from .engine import SolverError
from .geometry import (envelope_samples, equidistant_tangent_points, grid_relax_error,
                       max_relax_error, optimal_tangent_points)
from .grid import (CaseError, CaseValidationError, Config, canonical_json, case_to_dict,
                   load_case, load_scenarios, validate_case, validate_scenarios)
from .mitigation import abs_sim, plan_from_json, rel_sim
from .model import export_lp
from .twostage import (KINDS, TwoStageSpec, build_extensive, check_uniqueness, cross_evaluate,
                       solve_kind, threshold)
from .validation import check_kind, check_pf

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3
CONFIG_ENV = "FLOODGRID_CONFIG"

LEDGER_FIELDS = ["run_id", "timestamp", "case_hash", "config_hash", "kind", "pf", "budget",
                 "status", "z", "plan", "plan_hash", "nodes", "seconds", "error"]
# columns that legitimately differ between otherwise identical runs
VOLATILE = ("run_id", "timestamp", "seconds")


class UsageError(Exception):
    pass


def bundled(name: str) -> Path:
    return Path(str(resources.files("floodgrid") / "data" / name))


def _config_overrides(path: str | None) -> dict:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _load_inputs(args, need_scenarios=True):
    case = load_case(args.case)
    overrides = _config_overrides(args.config)
    if overrides:
        case = case.with_config(case.config.merged(overrides))
        problems = validate_case(case)
        if problems:
            raise CaseValidationError(problems)
    scen = load_scenarios(args.scenarios) if need_scenarios else None
    if scen is not None:
        problems = validate_scenarios(scen, case)
        if problems:
            raise CaseValidationError(problems)
    return case, scen


def _digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def parse_budgets(text: str) -> list[int] | str:
    """``"0:4"`` (inclusive), ``"0,2,5"`` or ``"max"`` (0 through the kind's threshold)."""
    text = text.strip()
    if text == "max":
        return "max"
    if ":" in text:
        lo, hi = (int(p) for p in text.split(":"))
        out = list(range(lo, hi + 1))
    else:
        out = [int(p) for p in text.split(",") if p.strip()]
    if not out:
        raise UsageError("budget list is empty")
    if any(b < 0 for b in out):
        raise UsageError("budgets must be nonnegative integers")
    return out


# ---------------------------------------------------------------------------
# subcommands

def cmd_validate(args) -> int:
    problems = []
    try:
        case = load_case(args.case)
    except CaseValidationError as exc:
        problems.extend(exc.problems)
        case = None
    if args.scenarios:
        try:
            scen = load_scenarios(args.scenarios)
            problems.extend(validate_scenarios(scen, case) if case else [])
        except CaseValidationError as exc:
            problems.extend(exc.problems)
    for p in problems:
        print(f"error: {p}")
    if not problems:
        print("ok")
    return EXIT_INVALID if problems else EXIT_OK


def ledger_hash(rows: list[dict]) -> str:
    h = hashlib.sha256()
    for row in rows:
        stable = {k: v for k, v in row.items() if k not in VOLATILE}
        h.update(json.dumps(stable, sort_keys=True).encode())
        h.update(b"\n")
    return h.hexdigest()


def read_ledger(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_sweep(args) -> int:
    case, scen = _load_inputs(args)
    kinds = [check_kind(k) for k in args.kind.split(",")]
    pfs = [check_pf(p) for p in args.pf.split(",")]
    budgets = parse_budgets(args.budget)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run_id = str(uuid.uuid4())
    case_hash = _digest(case_to_dict(case))
    config_hash = _digest({"config": case_to_dict(case)["config"],
                           "thresholds": list(scen.level_thresholds)})
    rows, failed = [], 0
    for pf in pfs:
        for kind in kinds:
            base = TwoStageSpec(case, scen, kind, pf, 0)
            fs = budgets if budgets != "max" else list(range(threshold(kind, base) + 1))
            series = []
            for f in fs:
                row = {"run_id": run_id, "timestamp": datetime.now(timezone.utc).isoformat(),
                       "case_hash": case_hash, "config_hash": config_hash, "kind": kind,
                       "pf": pf, "budget": f, "status": "optimal", "z": "", "plan": "",
                       "plan_hash": "", "nodes": "", "seconds": "", "error": ""}
                t0 = time.perf_counter()
                try:
                    res = solve_kind(base.with_(budget=f))
                    row.update(z=repr(float(res.z)), nodes=res.nodes)
                    if res.plan is not None:
                        row.update(plan=res.plan.to_json(), plan_hash=res.plan.digest())
                    series.append((f, res.z))
                except SolverError as exc:
                    failed += 1
                    row.update(status="failed", error=str(exc))
                row["seconds"] = f"{time.perf_counter() - t0:.3f}"
                rows.append(row)
            with open(out / f"series_{kind}_{pf}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["budget", "z"])
                w.writerows((f, repr(float(z))) for f, z in series)
    ledger = out / "ledger.csv"
    fresh = not ledger.exists()
    with open(ledger, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LEDGER_FIELDS, lineterminator="\n")
        if fresh:
            w.writeheader()
        w.writerows(rows)
    digest = ledger_hash(read_ledger(ledger))
    (out / "ledger.sha256").write_text(digest + "\n")
    print(f"{len(rows)} rows, {failed} failed; ledger hash {digest}")
    return EXIT_SOLVER if failed else EXIT_OK


def cmd_similarity(args) -> int:
    case, scen = _load_inputs(args)
    a_rows = [r for r in read_ledger(args.ledger_a) if r["status"] == "optimal"]
    b_rows = [r for r in read_ledger(args.ledger_b) if r["status"] == "optimal"]

    def keyed(rows):
        return {(r["case_hash"], r["kind"], int(r["budget"])): r for r in rows if r["plan"]}

    a, b = keyed(a_rows), keyed(b_rows)
    if set(a) != set(b):
        raise UsageError(f"ledgers cover different (case, kind, budget) keys: "
                         f"{sorted(set(a) ^ set(b))[:5]}")
    costs = case.costs()
    n = scen.n_levels
    out_rows = []
    for key in sorted(a):
        ra, rb = a[key], b[key]
        if ra["plan"] == rb["plan"]:
            continue
        pa, pb = plan_from_json(ra["plan"], n), plan_from_json(rb["plan"], n)
        _, kind, f = key
        spec_a = TwoStageSpec(case, scen, kind, ra["pf"], f)
        spec_b = TwoStageSpec(case, scen, kind, rb["pf"], f)
        g_ab = cross_evaluate(pa, spec_b, float(rb["z"]))
        g_ba = cross_evaluate(pb, spec_a, float(ra["z"]))
        out_rows.append({"kind": kind, "budget": f, "pf_a": ra["pf"], "pf_b": rb["pf"],
                         "plan_a": ra["plan"], "plan_b": rb["plan"],
                         "abs_sim": abs_sim(pa, pb, costs), "rel_sim": repr(rel_sim(pa, pb, costs)),
                         "gap_a_in_b": repr(g_ab.gap), "gap_b_in_a": repr(g_ba.gap),
                         "absolute_gap": g_ab.absolute or g_ba.absolute})
    fields = ["kind", "budget", "pf_a", "pf_b", "plan_a", "plan_b", "abs_sim", "rel_sim",
              "gap_a_in_b", "gap_b_in_a", "absolute_gap"]
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(out_rows)
    print(f"{len(out_rows)} differing plans")
    return EXIT_OK


def cmd_geometry(args) -> int:
    tdm = args.theta_delta_max
    opt = optimal_tangent_points(args.T, tdm, seed=args.seed)
    # a single tangent has no equidistant counterpart
    eq = equidistant_tangent_points(args.T, tdm) if args.T >= 2 else None
    report = {
        "T": args.T, "theta_delta_max": tdm,
        "optimal": {"points": list(opt.points), "max_error": max_relax_error(opt)},
        "equidistant": ({"points": list(eq.points), "max_error": max_relax_error(eq)}
                        if eq else None),
        "grid_error_optimal": grid_relax_error(opt),
    }
    print(json.dumps(report, indent=2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "tangents.json").write_text(json.dumps(report, indent=2) + "\n")
        sets = {"optimal": opt, "equidistant": eq} if eq else {"optimal": opt}
        rows = envelope_samples(sets, tdm)
        with open(out / "envelope.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK


def _last_number(text: str) -> float:
    for tok in reversed(text.replace("=", " ").split()):
        try:
            return float(tok)
        except ValueError:
            continue
    raise ValueError("no number in external solver output")


def cmd_export_lp(args) -> int:
    case, scen = _load_inputs(args)
    kind = check_kind(args.kind)
    if kind not in ("SP", "RO"):
        raise UsageError("export-lp writes the SP or RO extensive form")
    f = parse_budgets(args.budget)
    if f == "max" or len(f) != 1:
        raise UsageError("export-lp takes a single budget")
    spec = TwoStageSpec(case, scen, kind, check_pf(args.pf), f[0])
    weights = list(scen.probs) if kind == "SP" else None
    ext = build_extensive(case, spec.xis, spec.n_levels, spec.pf, spec.budget, weights)
    path = export_lp(ext.model, args.out)
    print(f"wrote {path}")
    if args.external_solver:
        embedded = solve_kind(spec).z
        proc = subprocess.run([args.external_solver, str(path)], capture_output=True, text=True,
                              check=False)
        if proc.returncode != 0:
            print(proc.stderr, file=sys.stderr)
            return EXIT_SOLVER
        external = _last_number(proc.stdout)
        diff = abs(external - embedded)
        print(f"embedded {embedded!r} external {external!r} difference {diff:.3g}")
        return EXIT_OK if diff <= 1e-9 * (1 + abs(embedded)) else EXIT_SOLVER
    return EXIT_OK


def cmd_bigm_audit(args) -> int:
    case, _ = _load_inputs(args, need_scenarios=False)
    rows = []
    for pf in args.pf.split(","):
        rows.extend(audit(case, check_pf(pf), samples=args.samples, seed=args.seed))
    if args.out:
        write_audit(rows, args.out)
    worst = max(r["max_violation"] for r in rows)
    print(f"{len(rows)} intervals audited; worst excursion {worst:.3g}")
    return EXIT_OK if worst <= 0 else EXIT_INVALID


def cmd_uniqueness(args) -> int:
    case, scen = _load_inputs(args)
    f = parse_budgets(args.budget)
    if f == "max" or len(f) != 1:
        raise UsageError("uniqueness takes a single budget")
    spec = TwoStageSpec(case, scen, check_kind(args.kind), check_pf(args.pf), f[0])
    res = solve_kind(spec)
    rep = check_uniqueness(res.plan, spec, res.z)
    print(json.dumps({
        "kind": spec.kind, "pf": spec.pf, "budget": spec.budget, "z": res.z,
        "plan": res.plan.levels(), "unique": rep.unique,
        "alternate": rep.alternate.levels() if rep.alternate is not None else None,
        "z_alternate": rep.z_alternate,
    }, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="floodgrid", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def inputs(sp, scenarios=True):
        sp.add_argument("--case", default=str(bundled("toy_case.json")))
        if scenarios:
            sp.add_argument("--scenarios", default=str(bundled("toy_scenarios.json")))
        sp.add_argument("--config", default=None,
                        help=f"JSON config overrides (default: ${CONFIG_ENV})")

    def model(sp, budget="0"):
        sp.add_argument("--kind", default="SP")
        sp.add_argument("--pf", default="DC")
        sp.add_argument("--budget", default=budget)

    sp = sub.add_parser("validate", help="check a case and scenario file")
    sp.add_argument("--case", default=str(bundled("toy_case.json")))
    sp.add_argument("--scenarios", default=None)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("sweep", help="solve over a budget range and write a ledger")
    inputs(sp)
    model(sp, budget="max")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("similarity", help="compare plans of two ledgers")
    inputs(sp)
    sp.add_argument("ledger_a")
    sp.add_argument("ledger_b")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_similarity)

    sp = sub.add_parser("geometry", help="tangent points for the cosine relaxation")
    sp.add_argument("T", type=int)
    sp.add_argument("theta_delta_max", type=float, nargs="?", default=math.pi / 2)
    sp.add_argument("--out", default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_geometry)

    sp = sub.add_parser("export-lp", help="write the SP/RO extensive form as an LP file")
    inputs(sp)
    model(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--external-solver", default=None,
                    help="executable run as '<solver> <file.lp>'; last number printed is "
                         "compared with the embedded optimum")
    sp.set_defaults(func=cmd_export_lp)

    sp = sub.add_parser("bigm-audit", help="sample Ohm right-hand sides against big-M bounds")
    inputs(sp, scenarios=False)
    sp.add_argument("--pf", default="DC,LPAC_C,LPAC_F,QPAC")
    sp.add_argument("--samples", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_bigm_audit)

    sp = sub.add_parser("uniqueness", help="test whether the optimal plan is unique")
    inputs(sp)
    model(sp)
    sp.set_defaults(func=cmd_uniqueness)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CaseError, UsageError, ValueError) as exc:
        for line in getattr(exc, "problems", None) or [str(exc)]:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
