"""Solver-agnostic optimization model and its LP-format text representation.

A :class:`ModelIR` is a minimisation problem with bounded continuous/binary
variables, sparse linear rows, a linear objective with constant, and convex
quadratic rows of the diagonal form ``sum d_i y_i^2 + a.y <= rhs``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import scipy.sparse as sp

LE, GE, EQ = "<=", ">=", "="

Expr = dict  # var index -> coefficient


@dataclass
class Variable:
    name: str
    lb: float = 0.0
    ub: float = math.inf
    binary: bool = False
    group: str = ""


@dataclass
class Row:
    coeffs: Expr
    sense: str
    rhs: float
    name: str = ""


@dataclass
class QuadRow:
    """``sum(quad[i] * y_i**2) + sum(lin[i] * y_i) <= rhs``.

    ``kind`` is ``"disc"`` or ``"cos"``. Disc rows also carry ``cone =
    (p, q, beta, s_max)`` meaning ``||(p, q)|| <= s_max * beta``, which
    coincides with the quadratic row whenever ``beta`` is 0 or 1.
    """

    quad: Expr
    lin: Expr
    rhs: float
    name: str = ""
    kind: str = ""
    cone: tuple | None = None

    def value(self, x: np.ndarray) -> float:
        return (sum(c * x[i] ** 2 for i, c in self.quad.items())
                + sum(c * x[i] for i, c in self.lin.items()) - self.rhs)

    def violation(self, x: np.ndarray) -> float:
        if self.cone is not None:
            p, q, beta, s = self.cone
            return math.hypot(x[p], x[q]) - s * x[beta]
        return self.value(x)


@dataclass
class ModelIR:
    name: str = "model"
    variables: list[Variable] = field(default_factory=list)
    rows: list[Row] = field(default_factory=list)
    quad_rows: list[QuadRow] = field(default_factory=list)
    objective: Expr = field(default_factory=dict)
    obj_constant: float = 0.0
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    # -- building ---------------------------------------------------------
    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf, binary: bool = False,
                group: str = "") -> int:
        if name in self._index:
            raise ValueError(f"duplicate variable {name}")
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        self._index[name] = len(self.variables)
        self.variables.append(Variable(name, float(lb), float(ub), binary, group))
        return len(self.variables) - 1

    def add_row(self, coeffs: Mapping[int, float], sense: str, rhs: float, name: str = "") -> int:
        clean = {}
        for i, c in coeffs.items():
            if c != 0:
                clean[i] = clean.get(i, 0.0) + float(c)
        if sense not in (LE, GE, EQ):
            raise ValueError(f"bad sense {sense}")
        self.rows.append(Row(clean, sense, float(rhs), name or f"r{len(self.rows)}"))
        return len(self.rows) - 1

    def add_quad_row(self, quad: Mapping[int, float], lin: Mapping[int, float], rhs: float,
                     name: str = "", kind: str = "", cone: tuple | None = None) -> int:
        if any(c < 0 for c in quad.values()):
            raise ValueError("quadratic rows must be convex (nonnegative diagonal)")
        self.quad_rows.append(QuadRow(dict(quad), {i: c for i, c in lin.items() if c != 0},
                                      float(rhs), name or f"q{len(self.quad_rows)}", kind, cone))
        return len(self.quad_rows) - 1

    def add_objective(self, coeffs: Mapping[int, float], constant: float = 0.0) -> None:
        for i, c in coeffs.items():
            self.objective[i] = self.objective.get(i, 0.0) + c
        self.obj_constant += constant

    def index(self, name: str) -> int:
        return self._index[name]

    def fix(self, idx: int, value: float) -> None:
        v = self.variables[idx]
        v.lb = v.ub = float(value)

    # -- views ------------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.variables)

    @property
    def binaries(self) -> list[int]:
        return [i for i, v in enumerate(self.variables) if v.binary]

    def group(self, tag: str) -> list[int]:
        return [i for i, v in enumerate(self.variables) if v.group == tag]

    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([v.lb for v in self.variables]),
                np.array([v.ub for v in self.variables]))

    def cost_vector(self) -> np.ndarray:
        c = np.zeros(self.n)
        for i, v in self.objective.items():
            c[i] = v
        return c

    def row_matrix(self) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
        """Rows as ``lo <= A x <= hi``."""
        data, ri, ci = [], [], []
        lo = np.empty(len(self.rows))
        hi = np.empty(len(self.rows))
        for r, row in enumerate(self.rows):
            for i, c in row.coeffs.items():
                ri.append(r)
                ci.append(i)
                data.append(c)
            lo[r] = row.rhs if row.sense in (GE, EQ) else -math.inf
            hi[r] = row.rhs if row.sense in (LE, EQ) else math.inf
        A = sp.csr_matrix((data, (ri, ci)), shape=(len(self.rows), self.n))
        return A, lo, hi

    def objective_value(self, x) -> float:
        return self.obj_constant + sum(c * x[i] for i, c in self.objective.items())

    def max_violation(self, x, include_quadratic: bool = True) -> float:
        """Largest violation over bounds, linear rows and (optionally) quadratic rows."""
        x = np.asarray(x, dtype=float)
        lb, ub = self.bounds()
        worst = float(max(np.max(lb - x, initial=0.0), np.max(x - ub, initial=0.0)))
        for row in self.rows:
            act = sum(c * x[i] for i, c in row.coeffs.items())
            if row.sense == LE:
                worst = max(worst, act - row.rhs)
            elif row.sense == GE:
                worst = max(worst, row.rhs - act)
            else:
                worst = max(worst, abs(act - row.rhs))
        if include_quadratic:
            for q in self.quad_rows:
                worst = max(worst, q.value(x))
        return worst

    def copy(self) -> "ModelIR":
        return ModelIR(
            self.name,
            [Variable(**vars(v)) for v in self.variables],
            [Row(dict(r.coeffs), r.sense, r.rhs, r.name) for r in self.rows],
            [QuadRow(dict(q.quad), dict(q.lin), q.rhs, q.name, q.kind, q.cone)
             for q in self.quad_rows],
            dict(self.objective),
            self.obj_constant,
            dict(self._index),
        )


# ---------------------------------------------------------------------------
# LP text format

_NAME_OK = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")
OBJ_CONST = "obj_constant"


def _num(v: float) -> str:
    return repr(float(v))


def _terms(expr: Mapping[int, float], names, first: bool = True) -> str:
    parts = []
    for i in sorted(expr):
        c = expr[i]
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        token = names[i] if mag == 1 else f"{_num(mag)} {names[i]}"
        if first and not parts:
            parts.append(("- " if sign == "-" else "") + token)
        else:
            parts.append(f"{sign} {token}")
    return " ".join(parts) if parts else "0 " + (names[0] if names else OBJ_CONST)


def _wrap(text: str, width: int = 240) -> str:
    # LP readers cap line lengths; break between terms
    out, line = [], ""
    for tok in text.split(" "):
        if len(line) + len(tok) + 1 > width:
            out.append(line)
            line = "   " + tok
        else:
            line = f"{line} {tok}" if line else tok
    out.append(line)
    return "\n".join(out)


def to_lp(model: ModelIR) -> str:
    names = model.names()
    bad = [n for n in names if not _NAME_OK.match(n)]
    if bad:
        raise ValueError(f"names not representable in LP format: {bad[:5]}")
    names_ext = names + [OBJ_CONST]
    const_idx = len(names)
    obj = dict(model.objective)
    if model.obj_constant:
        obj[const_idx] = model.obj_constant
    lines = [f"\\ {model.name}", "Minimize", _wrap(" obj: " + _terms(obj, names_ext)),
             "Subject To"]
    for row in model.rows:
        sense = {LE: "<=", GE: ">=", EQ: "="}[row.sense]
        lines.append(_wrap(f" {row.name}: {_terms(row.coeffs, names_ext)} {sense} {_num(row.rhs)}"))
    for q in model.quad_rows:
        lin = _terms(q.lin, names_ext) if q.lin else ""
        quad = " + ".join(
            (f"{names[i]} ^ 2" if c == 1 else f"{_num(c)} {names[i]} ^ 2") for i, c in sorted(q.quad.items()))
        body = f"{lin} + [ {quad} ]" if lin else f"[ {quad} ]"
        lines.append(_wrap(f" {q.name}: {body} <= {_num(q.rhs)}"))
    lines.append("Bounds")
    for v in model.variables:
        if v.binary and v.lb == 0 and v.ub == 1:
            continue
        lb = "-inf" if v.lb == -math.inf else _num(v.lb)
        ub = "+inf" if v.ub == math.inf else _num(v.ub)
        if v.lb == v.ub:
            lines.append(f" {v.name} = {_num(v.lb)}")
        elif v.lb == -math.inf and v.ub == math.inf:
            lines.append(f" {v.name} free")
        else:
            lines.append(f" {lb} <= {v.name} <= {ub}")
    if model.obj_constant:
        lines.append(f" {OBJ_CONST} = 1")
    bins = [v.name for v in model.variables if v.binary]
    if bins:
        lines.append("Binaries")
        lines.extend(f" {b}" for b in bins)
    lines.append("End")
    return "\n".join(lines) + "\n"


def export_lp(model: ModelIR, path) -> Path:
    path = Path(path)
    path.write_text(to_lp(model))
    return path


_SECTION = re.compile(r"^(minimize|maximize|subject to|st|s\.t\.|bounds|binaries|binary|"
                      r"generals|general|end)$", re.I)
_TERM = re.compile(r"([+-]?)\s*((?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|inf)?\s*"
                   r"([A-Za-z_][A-Za-z0-9_.]*)(\s*\^\s*2)?")


def _parse_expr(text: str):
    lin, quad = {}, {}
    text = text.strip()
    pos = 0
    while pos < len(text):
        while pos < len(text) and text[pos] == " ":
            pos += 1
        if pos >= len(text):
            break
        m = _TERM.match(text, pos)
        if not m or m.end() == pos:
            raise ValueError(f"cannot parse LP expression near {text[pos:pos + 30]!r}")
        sign, coef, name, sq = m.groups()
        c = float(coef) if coef else 1.0
        if sign == "-":
            c = -c
        target = quad if sq else lin
        target[name] = target.get(name, 0.0) + c
        pos = m.end()
    return lin, quad


def from_lp(text: str) -> ModelIR:
    """Parse the subset of LP format written by :func:`to_lp`."""
    sections: dict[str, list[str]] = {}
    current = None
    logical: list[str] = []
    for raw in text.splitlines():
        line = raw.split("\\", 1)[0].rstrip()
        if not line.strip():
            continue
        if _SECTION.match(line.strip()):
            current = line.strip().lower()
            sections.setdefault(current, [])
            continue
        if raw.startswith("   ") and sections.get(current):
            sections[current][-1] += " " + line.strip()
        else:
            sections.setdefault(current, []).append(line.strip())
    model = ModelIR("imported")
    declared: dict[str, int] = {}

    def var(name):
        if name not in declared:
            declared[name] = model.add_var(name, 0.0, math.inf)
        return declared[name]

    obj_lines = sections.get("minimize", [])
    obj_text = " ".join(obj_lines).split(":", 1)[-1]
    lin, _ = _parse_expr(obj_text)
    constant = lin.pop(OBJ_CONST, 0.0)
    obj = {var(n): c for n, c in lin.items()}
    for key in ("subject to", "st", "s.t."):
        for line in sections.get(key, []):
            name, body = line.split(":", 1)
            m = re.match(r"(.*?)(<=|>=|=)\s*(\S+)$", body.strip())
            lhs, sense, rhs = m.group(1), m.group(2), float(m.group(3))
            if "[" in lhs:
                outside, inside = re.match(r"(.*)\[(.*)\]", lhs).groups()
                outside = outside.strip().rstrip("+").strip()
                l_lin, _ = _parse_expr(outside) if outside else ({}, {})
                _, q_quad = _parse_expr(inside)
                model.add_quad_row({var(n): c for n, c in q_quad.items()},
                                   {var(n): c for n, c in l_lin.items()}, rhs, name.strip())
            else:
                l_lin, _ = _parse_expr(lhs)
                model.add_row({var(n): c for n, c in l_lin.items()},
                              {"<=": LE, ">=": GE, "=": EQ}[sense], rhs, name.strip())
    for line in sections.get("bounds", []):
        parts = line.split()
        if parts[0] == OBJ_CONST:
            continue
        if len(parts) == 2 and parts[1].lower() == "free":
            v = model.variables[var(parts[0])]
            v.lb, v.ub = -math.inf, math.inf
        elif len(parts) == 3 and parts[1] == "=":
            model.fix(var(parts[0]), float(parts[2]))
        elif len(parts) == 5:
            v = model.variables[var(parts[2])]
            v.lb, v.ub = float(parts[0]), float(parts[4])
        else:
            raise ValueError(f"unsupported bound line {line!r}")
    for key in ("binaries", "binary"):
        for line in sections.get(key, []):
            for name in line.split():
                v = model.variables[var(name)]
                v.binary = True
                v.lb, v.ub = max(v.lb, 0.0), min(v.ub, 1.0)
    model.add_objective(obj, constant)
    return model


def import_lp(path) -> ModelIR:
    return from_lp(Path(path).read_text())
