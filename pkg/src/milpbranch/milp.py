"""MILP data model, the text/JSON instance formats, and a brute-force oracle.

Every instance is stored as ``min c.x  s.t.  A x <= b,  l <= x <= u`` with an
integrality mask. Maximization objectives are negated and ``>=``/``=`` rows are
rewritten into ``<=`` rows when parsing.
"""
from __future__ import annotations

import enum
import itertools
import json
import math
import re
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

INF = math.inf


class SolveStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    LIMIT_REACHED = "LimitReached"


class InstanceError(ValueError):
    """Raised for malformed instance documents or inconsistent instance data."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)


class CapExceeded(RuntimeError):
    pass


class UnboundedIntegerDomain(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MilpInstance:
    """A minimization MILP with constraints in sparse triplet form.

    Triplets are kept sorted by (row, col) and explicit zeros are dropped, so
    two instances describing the same problem compare equal.
    """

    name: str
    c: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    is_integer: np.ndarray
    row_names: tuple = field(default=())

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        n, m = c.size, b.size
        rows = np.asarray(self.rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(self.cols, dtype=np.int64).reshape(-1)
        vals = np.asarray(self.vals, dtype=float).reshape(-1)
        if not (rows.size == cols.size == vals.size):
            raise InstanceError("triplet arrays must have equal length")
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        is_int = np.asarray(self.is_integer, dtype=bool).reshape(-1)
        if not (lower.size == upper.size == is_int.size == n):
            raise InstanceError("bound and integrality arrays must have length n")
        if rows.size and (rows.min() < 0 or rows.max() >= m):
            raise InstanceError("row index out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= n):
            raise InstanceError("column index out of range")
        if np.any(lower > upper):
            j = int(np.argmax(lower > upper))
            raise InstanceError(f"x{j}: lower bound {lower[j]} exceeds upper bound {upper[j]}")
        if np.any(np.isnan(c)) or np.any(np.isnan(b)) or np.any(~np.isfinite(vals)):
            raise InstanceError("objective, rhs and coefficients must be numbers")

        keep = vals != 0.0
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size > 1:
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if dup.any():
                k = int(np.argmax(dup))
                raise InstanceError(f"duplicate coefficient for row {rows[k]}, x{cols[k]}")

        row_names = tuple(self.row_names) or tuple(f"r{i}" for i in range(m))
        if len(row_names) != m:
            raise InstanceError("row_names must have one entry per row")

        # -0.0 is canonicalized to 0.0 everywhere
        for attr, arr in (("c", c + 0.0), ("b", b + 0.0), ("vals", vals + 0.0),
                          ("lower", lower + 0.0), ("upper", upper + 0.0),
                          ("rows", rows), ("cols", cols), ("is_integer", is_int)):
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)
        object.__setattr__(self, "row_names", row_names)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.b.size

    @property
    def p(self) -> int:
        return int(self.is_integer.sum())

    @property
    def nnz(self) -> int:
        return self.vals.size

    @cached_property
    def A(self) -> np.ndarray:
        dense = np.zeros((self.m, self.n))
        dense[self.rows, self.cols] = self.vals
        dense.setflags(write=False)
        return dense

    def __eq__(self, other):
        if not isinstance(other, MilpInstance):
            return NotImplemented
        return (
            self.name == other.name
            and self.row_names == other.row_names
            and all(
                np.array_equal(getattr(self, a), getattr(other, a))
                for a in ("c", "b", "rows", "cols", "vals", "lower", "upper", "is_integer")
            )
        )

    __hash__ = None

    def objective(self, x) -> float:
        return float(np.dot(self.c, x))

    def with_bounds(self, lower, upper) -> "MilpInstance":
        return MilpInstance(self.name, self.c, self.rows, self.cols, self.vals, self.b,
                            lower, upper, self.is_integer, self.row_names)


@dataclass(eq=False)
class Assignment:
    x: np.ndarray
    objective: float

    def __eq__(self, other):
        if not isinstance(other, Assignment):
            return NotImplemented
        return self.objective == other.objective and np.array_equal(self.x, other.x)


# ---------------------------------------------------------------------------
# text format

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<nl>\n)
  | (?P<semi>;)
  | (?P<op><=|>=|=<|=>|=)
  | (?P<colon>:)
  | (?P<sign>[+-](?![0-9.]|inf))
  | (?P<num>[+-]?(?:inf(?:inity)?|(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?))
  | (?P<var>x[0-9]+)
  | (?P<word>[A-Za-z_][A-Za-z0-9_.\[\]]*)
    """,
    re.VERBOSE,
)


def _tokenize(text):
    line, line_start, pos = 1, 0, 0
    statement = []
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        col = pos - line_start + 1
        if match is None:
            raise InstanceError(f"unexpected character {text[pos]!r}", line, col)
        kind = match.lastgroup
        value = match.group()
        pos = match.end()
        if kind in ("ws", "comment"):
            continue
        if kind == "nl" or kind == "semi":
            if statement:
                yield statement
                statement = []
            if kind == "nl":
                line += 1
                line_start = pos
            continue
        statement.append((kind, value, line, col))
    if statement:
        yield statement


def _parse_terms(tokens, what):
    """Parse ``<coeff> x<k>`` terms; returns list of (col, coeff) in order."""
    terms = []
    k = 0
    while k < len(tokens):
        sign = 1.0
        saw_sign = False
        while k < len(tokens) and tokens[k][0] == "sign":
            if tokens[k][1] == "-":
                sign = -sign
            saw_sign = True
            k += 1
        if k >= len(tokens):
            _, _, line, col = tokens[-1]
            raise InstanceError(f"dangling sign in {what}", line, col)
        kind, value, line, col = tokens[k]
        coeff = 1.0
        if kind == "num":
            saw_sign = saw_sign or value[0] in "+-"
            coeff = float(value)
            k += 1
            if k >= len(tokens) or tokens[k][0] != "var":
                raise InstanceError(f"expected variable after coefficient in {what}", line, col)
            kind, value, line, col = tokens[k]
        elif kind != "var":
            raise InstanceError(f"unexpected token {value!r} in {what}", line, col)
        if terms and not saw_sign:
            raise InstanceError(f"missing '+' or '-' between terms in {what}", line, col)
        terms.append((int(value[1:]), sign * coeff, line, col))
        k += 1
    return terms


def _number(token):
    kind, value, line, col = token
    if kind != "num":
        raise InstanceError(f"expected a number, got {value!r}", line, col)
    return float(value)


def parse_instance(text: str) -> MilpInstance:
    """Parse the line-oriented instance grammar into a :class:`MilpInstance`.

    Statements end at ``;`` or a newline::

        name knap
        vars 3
        min -5 x0 - 4 x1 - 3 x2 ;
        cap: 2 x0 + 3 x1 + x2 <= 4 ;
        bin x0 x1 x2
        bounds x2 -inf 7
    """
    name = "instance"
    declared_n = None
    objective = None
    sense = 1.0
    rows = []  # (name, [(col, coeff, line, col)], op, rhs)
    integer = {}
    binary = set()
    bounds = {}
    max_var = -1

    def see_var(j):
        nonlocal max_var
        max_var = max(max_var, j)

    for stmt in _tokenize(text):
        kind, value, line, col = stmt[0]
        if kind == "word" and value in ("min", "max", "minimize", "maximize"):
            if objective is not None:
                raise InstanceError("objective declared twice", line, col)
            sense = -1.0 if value.startswith("max") else 1.0
            objective = _parse_terms(stmt[1:], "objective")
            for j, *_ in objective:
                see_var(j)
        elif kind == "word" and value == "name" and len(stmt) == 2:
            name = stmt[1][1]
        elif kind == "word" and value == "vars":
            if len(stmt) != 2:
                raise InstanceError("expected 'vars <count>'", line, col)
            declared_n = int(_number(stmt[1]))
        elif kind == "word" and value in ("bin", "int"):
            for tok in stmt[1:]:
                if tok[0] != "var":
                    raise InstanceError(f"expected variable, got {tok[1]!r}", tok[2], tok[3])
                j = int(tok[1][1:])
                see_var(j)
                integer[j] = True
                if value == "bin":
                    binary.add(j)
        elif kind == "word" and value == "bounds":
            if len(stmt) != 4 or stmt[1][0] != "var":
                raise InstanceError("expected 'bounds x<k> <lo> <hi>'", line, col)
            j = int(stmt[1][1][1:])
            see_var(j)
            lo, hi = _number(stmt[2]), _number(stmt[3])
            if lo > hi:
                raise InstanceError(f"x{j}: lower bound {lo} exceeds upper bound {hi}",
                                    stmt[2][2], stmt[2][3])
            bounds[j] = (lo, hi)
        elif len(stmt) >= 2 and stmt[1][0] == "colon" and kind in ("word", "var"):
            body = stmt[2:]
            ops = [k for k, tok in enumerate(body) if tok[0] == "op"]
            if len(ops) != 1 or ops[0] != len(body) - 2:
                raise InstanceError(f"row {value!r}: expected '<terms> <=|>=|= <rhs>'", line, col)
            op = body[ops[0]][1]
            rhs = _number(body[-1])
            terms = _parse_terms(body[:ops[0]], f"row {value!r}")
            for j, *_ in terms:
                see_var(j)
            rows.append((value, terms, {"=<": "<=", "=>": ">="}.get(op, op), rhs))
        else:
            raise InstanceError(f"unexpected statement starting with {value!r}", line, col)

    n = max_var + 1 if declared_n is None else declared_n
    if max_var >= n:
        raise InstanceError(f"variable x{max_var} exceeds declared count {n}")

    c = np.zeros(n)
    for j, coeff, line, col in objective or []:
        if c[j] != 0.0:
            raise InstanceError(f"duplicate coefficient for x{j} in objective", line, col)
        c[j] = sense * coeff

    r_idx, c_idx, v_idx, rhs_list, names = [], [], [], [], []

    def emit(row_name, terms, flip, rhs):
        i = len(rhs_list)
        seen = set()
        for j, coeff, line, col in terms:
            if j in seen:
                raise InstanceError(f"duplicate coefficient for x{j} in row {row_name!r}", line, col)
            seen.add(j)
            r_idx.append(i)
            c_idx.append(j)
            v_idx.append(-coeff if flip else coeff)
        rhs_list.append(-rhs if flip else rhs)
        names.append(row_name)

    for row_name, terms, op, rhs in rows:
        if op == "<=":
            emit(row_name, terms, False, rhs)
        elif op == ">=":
            emit(row_name, terms, True, rhs)
        else:
            emit(row_name + "_le", terms, False, rhs)
            emit(row_name + "_ge", terms, True, rhs)

    lower = np.zeros(n)
    upper = np.full(n, INF)
    is_int = np.zeros(n, dtype=bool)
    for j in integer:
        is_int[j] = True
    for j in binary:
        lower[j], upper[j] = 0.0, 1.0
    for j, (lo, hi) in bounds.items():
        lower[j], upper[j] = lo, hi

    return MilpInstance(name, c, r_idx, c_idx, v_idx, rhs_list, lower, upper, is_int, tuple(names))


def _fmt(x: float) -> str:
    x = float(x) + 0.0
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _fmt_terms(pairs):
    out = []
    for j, coeff in pairs:
        if not out:
            out.append(f"{_fmt(coeff)} x{j}")
        elif coeff < 0:
            out.append(f"- {_fmt(-coeff)} x{j}")
        else:
            out.append(f"+ {_fmt(coeff)} x{j}")
    return " ".join(out)


def serialize_instance(inst: MilpInstance) -> str:
    lines = [f"name {inst.name}", f"vars {inst.n}"]
    obj = [(j, inst.c[j]) for j in range(inst.n) if inst.c[j] != 0.0]
    lines.append(f"min {_fmt_terms(obj)} ;".replace("min  ;", "min ;"))
    starts = np.searchsorted(inst.rows, np.arange(inst.m + 1))
    for i in range(inst.m):
        lo, hi = starts[i], starts[i + 1]
        terms = _fmt_terms(zip(inst.cols[lo:hi].tolist(), inst.vals[lo:hi].tolist()))
        body = f"{terms} <= {_fmt(inst.b[i])}" if terms else f"<= {_fmt(inst.b[i])}"
        lines.append(f"{inst.row_names[i]}: {body} ;")
    binary = [j for j in range(inst.n)
              if inst.is_integer[j] and inst.lower[j] == 0.0 and inst.upper[j] == 1.0]
    general = [j for j in range(inst.n) if inst.is_integer[j] and j not in set(binary)]
    if binary:
        lines.append("bin " + " ".join(f"x{j}" for j in binary))
    if general:
        lines.append("int " + " ".join(f"x{j}" for j in general))
    bset = set(binary)
    for j in range(inst.n):
        if j in bset:
            continue
        if inst.lower[j] != 0.0 or inst.upper[j] != INF:
            lines.append(f"bounds x{j} {_fmt(inst.lower[j])} {_fmt(inst.upper[j])}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# JSON mirror


def _json_num(x):
    x = float(x) + 0.0
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _from_json_num(x):
    if isinstance(x, str):
        return float(x)
    return float(x)


def instance_to_dict(inst: MilpInstance) -> dict:
    return {
        "name": inst.name,
        "num_vars": inst.n,
        "num_cons": inst.m,
        "objective": [_json_num(v) for v in inst.c],
        "rows": [[int(i), int(j), _json_num(a)] for i, j, a in zip(inst.rows, inst.cols, inst.vals)],
        "rhs": [_json_num(v) for v in inst.b],
        "lower": [_json_num(v) for v in inst.lower],
        "upper": [_json_num(v) for v in inst.upper],
        "is_integer": [bool(v) for v in inst.is_integer],
        "row_names": list(inst.row_names),
    }


def instance_from_dict(doc: dict) -> MilpInstance:
    n, m = int(doc["num_vars"]), int(doc["num_cons"])
    trip = doc.get("rows", [])
    inst = MilpInstance(
        doc.get("name", "instance"),
        [_from_json_num(v) for v in doc["objective"]],
        [t[0] for t in trip],
        [t[1] for t in trip],
        [_from_json_num(t[2]) for t in trip],
        [_from_json_num(v) for v in doc["rhs"]],
        [_from_json_num(v) for v in doc["lower"]],
        [_from_json_num(v) for v in doc["upper"]],
        doc["is_integer"],
        tuple(doc.get("row_names", ())),
    )
    if inst.n != n or inst.m != m:
        raise InstanceError("num_vars/num_cons disagree with array lengths")
    return inst


def dumps_json(inst: MilpInstance) -> str:
    return json.dumps(instance_to_dict(inst), indent=1)


def loads_json(text: str) -> MilpInstance:
    return instance_from_dict(json.loads(text))


def read_instance(path) -> MilpInstance:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if str(path).endswith(".json"):
        return loads_json(text)
    return parse_instance(text)


def write_instance(inst: MilpInstance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_json(inst) if str(path).endswith(".json") else serialize_instance(inst))


# ---------------------------------------------------------------------------
# validation and the enumeration oracle


def validate_solution(inst: MilpInstance, x, tol: float = 1e-6) -> bool:
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = np.asarray(x, dtype=float)
    if x.shape != (inst.n,):
        raise ValueError(f"expected a vector of length {inst.n}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        return False
    if inst.m and np.any(inst.A @ x > inst.b + tol):
        return False
    if np.any(x < inst.lower - tol) or np.any(x > inst.upper + tol):
        return False
    xi = x[inst.is_integer]
    return bool(np.all(np.abs(xi - np.round(xi)) <= tol))


def brute_force_solve(inst: MilpInstance, cap: int = 10**6):
    """Enumerate every integer lattice point and solve the remaining LP at each.

    Returns ``(status, Assignment or None)``. Ties keep the first lattice point
    in lexicographic order.
    """
    from .simplex import LpRelaxation, solve_lp

    int_idx = np.flatnonzero(inst.is_integer)
    ranges = []
    size = 1
    for j in int_idx:
        lo, hi = inst.lower[j], inst.upper[j]
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise UnboundedIntegerDomain(f"integer variable x{j} needs finite bounds")
        lo, hi = math.ceil(lo - 1e-9), math.floor(hi + 1e-9)
        if hi < lo:
            return SolveStatus.INFEASIBLE, None
        ranges.append(range(lo, hi + 1))
        size *= hi - lo + 1
        if size > cap:
            raise CapExceeded(f"lattice has more than {cap} points")

    best = None
    lower = np.array(inst.lower)
    upper = np.array(inst.upper)
    for point in itertools.product(*ranges):
        lower[int_idx] = point
        upper[int_idx] = point
        sol = solve_lp(LpRelaxation(inst, lower, upper))
        if sol.status == SolveStatus.UNBOUNDED:
            return SolveStatus.UNBOUNDED, None
        if sol.status == SolveStatus.LIMIT_REACHED:
            raise RuntimeError("LP iteration limit reached inside brute force")
        if sol.status != SolveStatus.OPTIMAL:
            continue
        if best is None or sol.objective < best.objective - 1e-9:
            x = sol.x.copy()
            x[int_idx] = point
            best = Assignment(x, inst.objective(x))
    if best is None:
        return SolveStatus.INFEASIBLE, None
    return SolveStatus.OPTIMAL, best
