"""Exact-rational LPs: the scheduling relaxation, its Sherali-Adams lift,
conditioning of lifted solutions, and a phase-one simplex over rationals.

No tolerance exists anywhere in this module: every number is a rational.
"""

from __future__ import annotations

import hashlib
import itertools
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Iterable, Mapping, Sequence

try:  # gmpy2 rationals are an order of magnitude faster than Fraction
    from gmpy2 import mpq as _Q
except ImportError:  # pragma: no cover
    _Q = Fraction

from .core_model import Instance, TaskRef

DEFAULT_MAX_LIFTED_VARIABLES = 200_000
DEFAULT_MAX_LEVEL = 4
DEFAULT_MAX_SOLVER_ROWS = 20_000


class SizeBlowup(RuntimeError):
    pass


class ZeroMass(ValueError):
    pass


class LevelExhausted(RuntimeError):
    pass


@dataclass(frozen=True, order=True)
class Event:
    task: TaskRef
    machine: int
    slot: int

    def __str__(self) -> str:
        return f"({self.task},{self.machine},{self.slot})"


@dataclass(frozen=True)
class Constraint:
    terms: tuple  # ((variable, Fraction), ...)
    relation: str  # "<=", "=", ">="
    rhs: Fraction
    label: str = ""

    def __post_init__(self):
        if self.relation not in ("<=", "=", ">="):
            raise ValueError(f"bad relation {self.relation!r}")

    @classmethod
    def of(cls, coeffs: Mapping, relation: str, rhs, label: str = "") -> "Constraint":
        terms = tuple((v, Fraction(c)) for v, c in coeffs.items() if c != 0)
        return cls(terms, relation, Fraction(rhs), label)

    def lhs(self, values: Mapping) -> Fraction:
        return sum((c * Fraction(values.get(v, 0)) for v, c in self.terms), Fraction(0))

    def holds(self, values: Mapping) -> bool:
        s = self.lhs(values)
        if self.relation == "<=":
            return s <= self.rhs
        if self.relation == ">=":
            return s >= self.rhs
        return s == self.rhs


@dataclass(frozen=True)
class LinearProgram:
    """Feasibility LP; every variable carries the implicit bounds 0 <= x <= 1."""

    variables: tuple
    constraints: tuple
    name: str = "lp"
    level: int = 1
    base: "LinearProgram | None" = None
    bounds_implied: bool = False

    def __post_init__(self):
        known = set(self.variables)
        if len(known) != len(self.variables):
            raise ValueError("duplicate variable")
        for row in self.constraints:
            for v, _ in row.terms:
                if v not in known:
                    raise ValueError(f"constraint {row.label!r} references undeclared variable {v!r}")

    def violated(self, values: Mapping) -> list:
        bad = [row for row in self.constraints if not row.holds(values)]
        for v in self.variables:
            x = Fraction(values.get(v, 0))
            if x < 0 or x > 1:
                bad.append(Constraint(((v, Fraction(1)),), "<=", Fraction(1), f"bounds:{v}"))
        return bad

    def count(self, prefix: str) -> int:
        return sum(1 for row in self.constraints if row.label.startswith(prefix))


# ---------------------------------------------------------------------------
# the scheduling relaxation
# ---------------------------------------------------------------------------

def task_precedence_pairs(instance: Instance, full: bool = False) -> list[tuple]:
    """Task pairs (a, a') with a before a'.

    By default only covering pairs are produced: consecutive tasks of a job
    and (last task of j, first task of j') for covering job pairs.  The
    remaining pairs are implied by transitivity.
    """
    pairs = []
    if full:
        tasks = list(instance.tasks())
        for a in tasks:
            for b in tasks:
                if instance.task_precedes(a, b):
                    pairs.append((a, b))
        return pairs
    for j in instance.job_ids:
        for k in range(1, instance.size(j)):
            pairs.append((TaskRef(j, k), TaskRef(j, k + 1)))
    for a, b in sorted(instance.precedence.reduction()):
        pairs.append((TaskRef(a, instance.size(a)), TaskRef(b, 1)))
    return pairs


def build_base_lp(instance: Instance, T: int, with_comm: bool = False, *,
                  with_no_migration: bool = True, full_precedence: bool = False,
                  beta: int | None = None) -> LinearProgram:
    """Time-indexed relaxation over events (task, machine, slot) in [m] x [T]."""
    if T < 1:
        raise ValueError("horizon must be at least 1")
    m = instance.machines
    tasks = list(instance.tasks())
    variables = tuple(Event(a, i, t) for a in tasks for i in range(1, m + 1) for t in range(1, T + 1))
    rows: list[Constraint] = []
    for a in tasks:
        rows.append(Constraint.of({Event(a, i, t): 1 for i in range(1, m + 1) for t in range(1, T + 1)},
                                  "=", 1, f"assign:{a}"))
    for i in range(1, m + 1):
        for t in range(1, T + 1):
            rows.append(Constraint.of({Event(a, i, t): 1 for a in tasks}, "<=", 1, f"capacity:{i}:{t}"))
    for a, b in task_precedence_pairs(instance, full=full_precedence):
        # t = 0 keeps a successor out of slot 1; without it an integral point
        # could run a task and its successor together in the first slot
        for t in range(0, T):
            coeffs: dict = {}
            for i in range(1, m + 1):
                for s in range(1, t + 2):
                    coeffs[Event(b, i, s)] = coeffs.get(Event(b, i, s), 0) + 1
                for s in range(1, t + 1):
                    coeffs[Event(a, i, s)] = coeffs.get(Event(a, i, s), 0) - 1
            rows.append(Constraint.of(coeffs, "<=", 0, f"precedence:{a}:{b}:{t}"))
    if with_no_migration:
        for j in instance.job_ids:
            for x, y in itertools.combinations(range(1, instance.size(j) + 1), 2):
                a, b = TaskRef(j, x), TaskRef(j, y)
                for i in range(1, m + 1):
                    coeffs = {Event(b, i, t): 1 for t in range(1, T + 1)}
                    coeffs.update({Event(a, i, t): -1 for t in range(1, T + 1)})
                    rows.append(Constraint.of(coeffs, "=", 0, f"nomigration:{a}:{b}:{i}"))
    if with_comm:
        width = beta if beta is not None else max(instance.beta, 1)
        for before, after in sorted(instance.precedence.pairs):
            last = TaskRef(before, instance.size(before))
            first = TaskRef(after, 1)
            for i in range(1, m + 1):
                for t in range(1, T):
                    coeffs = {Event(first, i, t + 1): 1}
                    for other in range(1, m + 1):
                        if other == i:
                            continue
                        for s in range(max(1, t - width + 1), t + 1):
                            coeffs[Event(last, other, s)] = 1
                    rows.append(Constraint.of(coeffs, "<=", 1, f"comm:{before}:{after}:{i}:{t}"))
    return LinearProgram(variables, tuple(rows), name=f"base_T{T}", bounds_implied=True)


# ---------------------------------------------------------------------------
# Sherali-Adams lift
# ---------------------------------------------------------------------------

def lifted_variable_count(n: int, r: int) -> int:
    return sum(math.comb(n, k) for k in range(0, r + 1))


def sa_lift(lp: LinearProgram, r: int, *, max_variables: int = DEFAULT_MAX_LIFTED_VARIABLES,
            max_level: int = DEFAULT_MAX_LEVEL) -> LinearProgram:
    """Level-``r`` lift: variables are subsets (frozensets) of size <= r.

    Each row ``a.x <= b`` (the 0/1 bounds included) is multiplied by
    ``prod_{S} x_i * prod_{T} (1 - x_i)`` for disjoint S, T with
    ``|S| + |T| <= r - 1`` and linearized; ``x_{}`` is fixed to 1.
    """
    if r < 1:
        raise ValueError("lift level must be >= 1")
    if r > max_level:
        raise SizeBlowup(f"lift level {r} exceeds the configured maximum {max_level}")
    n = len(lp.variables)
    count = lifted_variable_count(n, r)
    if count > max_variables:
        raise SizeBlowup(f"lift would create {count} variables (cap {max_variables})")

    base_rows: list[tuple[dict, str, Fraction, str]] = []
    for row in lp.constraints:
        coeffs = dict(row.terms)
        if row.relation == ">=":
            base_rows.append(({v: -c for v, c in coeffs.items()}, "<=", -row.rhs, row.label))
        else:
            base_rows.append((coeffs, row.relation, row.rhs, row.label))
    for v in lp.variables:
        base_rows.append(({v: Fraction(1)}, "<=", Fraction(1), f"upper:{v}"))
        base_rows.append(({v: Fraction(-1)}, "<=", Fraction(0), f"lower:{v}"))

    empty = frozenset()
    variables = [empty] + [frozenset(c) for k in range(1, r + 1) for c in itertools.combinations(lp.variables, k)]
    rows: list[Constraint] = [Constraint(((empty, Fraction(1)),), "=", Fraction(1), "empty")]
    seen = set()
    for s in range(0, r):
        for S in itertools.combinations(lp.variables, s):
            Sset = frozenset(S)
            rest = [v for v in lp.variables if v not in Sset]
            for t in range(0, r - s):
                for T in itertools.combinations(rest, t):
                    for coeffs, rel, rhs, label in base_rows:
                        lifted: dict = {}
                        for q in range(0, len(T) + 1):
                            for Tp in itertools.combinations(T, q):
                                sign = -1 if q % 2 else 1
                                base = Sset.union(Tp)
                                for v, c in coeffs.items():
                                    key = base | {v}
                                    lifted[key] = lifted.get(key, 0) + sign * c
                                if rhs:
                                    lifted[base] = lifted.get(base, 0) - sign * rhs
                        terms = tuple(sorted(((k, c) for k, c in lifted.items() if c != 0),
                                             key=lambda kc: _set_key(kc[0])))
                        if not terms:
                            continue
                        if rel == "<=" and len(terms) == 1 and terms[0][1] < 0:
                            continue  # plain nonnegativity, implicit
                        sig = (terms, rel)
                        if sig in seen:
                            continue
                        seen.add(sig)
                        rows.append(Constraint(terms, rel, Fraction(0), f"{label}|S={len(S)}|T={len(T)}"))
    return LinearProgram(tuple(variables), tuple(rows), name=f"{lp.name}_SA{r}", level=r, base=lp,
                         bounds_implied=True)


def _set_key(s: frozenset):
    return (len(s), sorted(map(repr, s)))


# ---------------------------------------------------------------------------
# lifted solutions and conditioning
# ---------------------------------------------------------------------------

class LiftedSolution:
    """Exact values ``x_S`` for event sets of size at most ``level``."""

    def __init__(self, level: int, values: Mapping[frozenset, Fraction]):
        self.level = level
        self.values = {frozenset(k): Fraction(v) for k, v in values.items()}
        self.values[frozenset()] = Fraction(1)

    def value(self, events: Iterable) -> Fraction:
        key = frozenset(events)
        if len(key) > self.level:
            raise LevelExhausted(f"set of size {len(key)} exceeds level {self.level}")
        return self.values.get(key, Fraction(0))

    def singletons(self) -> dict:
        return {next(iter(k)): v for k, v in self.values.items() if len(k) == 1 and v > 0}

    def condition(self, event) -> "LiftedSolution":
        if self.level < 2:
            raise LevelExhausted("conditioning needs level >= 2")
        mass = self.value({event})
        if mass == 0:
            raise ZeroMass(f"event {event} has zero mass")
        new = {}
        for key in self.values:
            if len(key) <= self.level - 1:
                new[key] = self.value(key | {event}) / mass
        return LiftedSolution(self.level - 1, new)

    def invariant_violations(self) -> list[str]:
        out = []
        if self.values.get(frozenset()) != 1:
            out.append("x_empty != 1")
        for key, v in self.values.items():
            if not 0 <= v <= 1:
                out.append(f"x_{set(key)} = {v} outside [0, 1]")
            for e in key:
                if self.values.get(key - {e}, Fraction(0)) < v:
                    out.append(f"monotonicity fails at {set(key)}")
        return out

    @classmethod
    def from_distribution(cls, points: Sequence[Iterable], weights: Sequence, level: int,
                          universe: Iterable | None = None) -> "LiftedSolution":
        """Moments ``x_S = P[S subset of point]`` of an explicit distribution."""
        pts = [frozenset(p) for p in points]
        ws = [Fraction(w) for w in weights]
        if sum(ws) != 1 or any(w < 0 for w in ws):
            raise ValueError("weights must form a probability vector")
        events = sorted(set().union(*pts) if universe is None else set(universe), key=repr)
        values = {}
        for k in range(0, level + 1):
            for combo in itertools.combinations(events, k):
                key = frozenset(combo)
                values[key] = sum((w for w, p in zip(ws, pts) if key <= p), Fraction(0))
        return cls(level, values)


class MixtureSolution:
    """A lifted solution given as an explicit convex combination of 0/1 points.

    Such a point lies in every level of the lift; ``level`` is the
    conditioning budget that remains.
    """

    def __init__(self, level: int, components: Sequence[tuple]):
        self.level = level
        comps = [(Fraction(w), frozenset(p)) for w, p in components if w != 0]
        total = sum((w for w, _ in comps), Fraction(0))
        if total != 1:
            raise ValueError("mixture weights must sum to 1")
        self.components = tuple(comps)

    def value(self, events: Iterable) -> Fraction:
        key = frozenset(events)
        if len(key) > self.level:
            raise LevelExhausted(f"set of size {len(key)} exceeds level {self.level}")
        return sum((w for w, p in self.components if key <= p), Fraction(0))

    def singletons(self) -> dict:
        out: dict = {}
        for w, p in self.components:
            for e in p:
                out[e] = out.get(e, Fraction(0)) + w
        return out

    def condition(self, event) -> "MixtureSolution":
        if self.level < 2:
            raise LevelExhausted("conditioning needs level >= 2")
        mass = self.value({event})
        if mass == 0:
            raise ZeroMass(f"event {event} has zero mass")
        kept = [(w / mass, p) for w, p in self.components if event in p]
        return MixtureSolution(self.level - 1, kept)


def condition(solution, event):
    """Condition a lifted solution on ``event``: x'_S = x_{S+event} / x_event."""
    return solution.condition(event)


# ---------------------------------------------------------------------------
# exact phase-one simplex
# ---------------------------------------------------------------------------

class Infeasible:
    def __init__(self, reason: str = "phase-one optimum is positive"):
        self.reason = reason

    def __bool__(self):
        return False

    def __repr__(self):
        return f"Infeasible({self.reason!r})"


def solve_feasible(lp: LinearProgram, *, max_rows: int = DEFAULT_MAX_SOLVER_ROWS):
    """Exact feasibility: a vertex of the LP as a LiftedSolution, or Infeasible."""
    index = {v: k for k, v in enumerate(lp.variables)}
    rows: list[tuple[dict, str, object]] = []
    for row in lp.constraints:
        rows.append(({index[v]: _Q(c.numerator, c.denominator) for v, c in row.terms}, row.relation,
                     _Q(row.rhs.numerator, row.rhs.denominator)))
    if not lp.bounds_implied:
        implied = _bounded_by_assignment(lp)
        for v in lp.variables:
            if v not in implied:
                rows.append(({index[v]: _Q(1)}, "<=", _Q(1)))
    if len(rows) > max_rows:
        raise SizeBlowup(f"{len(rows)} rows exceed the solver cap {max_rows}")
    x = _phase_one(rows, len(lp.variables))
    if x is None:
        return Infeasible()
    values = {v: Fraction(int(x[k].numerator), int(x[k].denominator)) for v, k in index.items()}
    if lp.level == 1 and lp.base is None:
        return LiftedSolution(1, {frozenset({v}): val for v, val in values.items()})
    return LiftedSolution(lp.level, values)


def _bounded_by_assignment(lp: LinearProgram) -> set:
    out = set()
    for row in lp.constraints:
        if row.relation == "=" and row.rhs == 1 and all(c >= 0 for _, c in row.terms):
            out.update(v for v, c in row.terms if c >= 1)
    return out


def _phase_one(rows, n):
    """Minimize the sum of artificials with Dantzig pricing, Bland on degeneracy."""
    zero = _Q(0)
    tab: list[dict] = []
    rhs: list = []
    basis: list[int] = []
    next_col = n
    artificial = set()
    for coeffs, rel, b in rows:
        coeffs = dict(coeffs)
        if b < 0:
            coeffs = {k: -c for k, c in coeffs.items()}
            b = -b
            rel = {"<=": ">=", ">=": "<=", "=": "="}[rel]
        if rel == "<=":
            coeffs[next_col] = _Q(1)
            basis.append(next_col)
            next_col += 1
        else:
            if rel == ">=":
                coeffs[next_col] = _Q(-1)
                next_col += 1
            coeffs[next_col] = _Q(1)
            artificial.add(next_col)
            basis.append(next_col)
            next_col += 1
        tab.append(coeffs)
        rhs.append(_Q(b))

    # reduced costs of the phase-one objective (sum of artificials)
    cost: dict = {}
    obj = zero
    for r, coeffs in enumerate(tab):
        if basis[r] in artificial:
            obj += rhs[r]
            for c, a in coeffs.items():
                if c not in artificial:
                    cost[c] = cost.get(c, zero) - a
    cost = {c: v for c, v in cost.items() if v != 0}

    colrows: dict = {}
    for r, coeffs in enumerate(tab):
        for c in coeffs:
            colrows.setdefault(c, set()).add(r)

    bland = False
    stall = 0
    while obj > 0:
        negative = [(v, c) for c, v in cost.items() if v < 0]
        if not negative:
            break
        if bland:
            enter = min(c for _, c in negative)
        else:
            enter = min(negative)[1]
        best = None
        for r in colrows.get(enter, ()):
            a = tab[r][enter]
            if a > 0:
                ratio = rhs[r] / a
                key = (ratio, basis[r])
                if best is None or key < best[0]:
                    best = (key, r)
        if best is None:  # unbounded direction cannot lower a bounded-below objective
            raise AssertionError("phase one is bounded below")
        r = best[1]
        before = obj
        _pivot(tab, rhs, basis, colrows, cost, r, enter)
        obj = before - 0  # placeholder for clarity; recomputed below
        obj = _objective(rhs, basis, artificial)
        if obj == before:
            stall += 1
            if stall > 50:
                bland = True
        else:
            stall = 0
    if obj > 0:
        return None
    x = [zero] * n
    for r, col in enumerate(basis):
        if col < n:
            x[col] = rhs[r]
    return x


def _objective(rhs, basis, artificial):
    total = 0
    for r, col in enumerate(basis):
        if col in artificial:
            total += rhs[r]
    return total


def _pivot(tab, rhs, basis, colrows, cost, r, enter):
    prow = tab[r]
    piv = prow[enter]
    if piv != 1:
        inv = 1 / piv
        for c in prow:
            prow[c] *= inv
        rhs[r] *= inv
    for k in list(colrows[enter]):
        if k == r:
            continue
        row = tab[k]
        f = row[enter]
        for c, a in prow.items():
            val = row.get(c, 0) - f * a
            if val == 0:
                if c in row:
                    del row[c]
                    colrows[c].discard(k)
            else:
                if c not in row:
                    colrows.setdefault(c, set()).add(k)
                row[c] = val
        rhs[k] -= f * rhs[r]
    f = cost.get(enter)
    if f:
        for c, a in prow.items():
            val = cost.get(c, 0) - f * a
            if val == 0:
                cost.pop(c, None)
            else:
                cost[c] = val
    basis[r] = enter


# ---------------------------------------------------------------------------
# LP text export
# ---------------------------------------------------------------------------

def _name(v) -> str:
    if isinstance(v, Event):
        raw = f"x_{v.task.job}_{v.task.index}_{v.machine}_{v.slot}"
        return re.sub(r"[^A-Za-z0-9_]", "_", raw)
    if isinstance(v, frozenset):
        if not v:
            return "x_empty"
        digest = hashlib.sha1("|".join(sorted(_name(e) for e in v)).encode()).hexdigest()[:12]
        return f"x_S{len(v)}_{digest}"
    return re.sub(r"[^A-Za-z0-9_]", "_", f"x_{v}")


def export_lp_text(lp: LinearProgram) -> str:
    """CPLEX-style LP text with objective ``min 0`` and integer-scaled rows."""
    lines = [f"\\ {lp.name}", "Minimize", " obj: 0 " + _name(lp.variables[0]) if lp.variables else " obj: 0",
             "Subject To"]
    for k, row in enumerate(lp.constraints):
        scale = math.lcm(*[c.denominator for _, c in row.terms], row.rhs.denominator)
        parts = []
        for v, c in row.terms:
            coef = int(c * scale)
            sign = "-" if coef < 0 else "+"
            parts.append(f"{sign} {abs(coef)} {_name(v)}")
        lhs = " ".join(parts).lstrip("+ ")
        rel = {"<=": "<=", ">=": ">=", "=": "="}[row.relation]
        lines.append(f" c{k + 1}: {lhs} {rel} {int(row.rhs * scale)}")
    lines.append("Bounds")
    for v in lp.variables:
        lines.append(f" 0 <= {_name(v)} <= 1")
    lines.append("End")
    return "\n".join(lines) + "\n"
