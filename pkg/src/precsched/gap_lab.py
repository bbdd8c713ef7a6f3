"""Gap instances and the single-machine discard problem.

Windows in this module are half-open integer ranges ``(r, d]``; a placement
``(job, start, length)`` occupies the core slots ``start+1 .. start+length``.

Contents:

* model-gap families (migratory vs non-migratory vs non-preemptive optima);
* the binary-tree instance for ``1 | r_j, d_j | sum p_j U'_j`` and its
  aligned placement set;
* the chain-job reduction between that problem and two-machine makespan;
* the closed-form lifted solution on the tree instance and an exact checker
  for its lifted constraints.
"""

from __future__ import annotations

import itertools
import json
import math
import random
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

from .core_model import Instance, TaskRef
from .schedule import Schedule
from .sa_lp import Constraint, LinearProgram, SizeBlowup


class WitnessSearchFailed(RuntimeError):
    pass


class HorizonTooSmall(ValueError):
    pass


# ---------------------------------------------------------------------------
# single-machine instances
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindowJob:
    id: str
    size: int
    release: int
    deadline: int


@dataclass(frozen=True)
class SingleMachineInstance:
    jobs: tuple
    horizon: int

    def __post_init__(self):
        object.__setattr__(self, "jobs", tuple(self.jobs))
        if len({j.id for j in self.jobs}) != len(self.jobs):
            raise ValueError("duplicate job id")
        for j in self.jobs:
            if j.size < 1 or j.release < 0 or j.deadline < j.release:
                raise ValueError(f"job {j.id!r}: bad size or window")
        if self.jobs and self.horizon < max(j.deadline for j in self.jobs):
            raise ValueError("horizon must cover every deadline")

    @property
    def by_id(self) -> dict:
        return {j.id: j for j in self.jobs}

    @property
    def total_size(self) -> int:
        return sum(j.size for j in self.jobs)

    def to_dict(self) -> dict:
        return {"horizon": self.horizon,
                "jobs": [{"id": j.id, "size": j.size, "release": j.release, "deadline": j.deadline}
                         for j in self.jobs]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "SingleMachineInstance":
        return cls(tuple(WindowJob(str(j["id"]), int(j["size"]), int(j["release"]), int(j["deadline"]))
                         for j in data["jobs"]), int(data["horizon"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def solution_cost(smi: SingleMachineInstance, placements: Iterable[tuple]) -> int:
    """Unprocessed units of a placement list ``[(job, start, length), ...]``."""
    done = {}
    for job, _, length in placements:
        done[job] = done.get(job, 0) + length
    return sum(j.size - done.get(j.id, 0) for j in smi.jobs)


def check_solution(smi: SingleMachineInstance, placements: Iterable[tuple]) -> list[str]:
    """Problems with a single-machine solution (empty list = valid)."""
    problems = []
    by_id = smi.by_id
    seen_jobs = set()
    busy: dict[int, str] = {}
    for job, start, length in placements:
        if job not in by_id:
            problems.append(f"unknown job {job!r}")
            continue
        j = by_id[job]
        if job in seen_jobs:
            problems.append(f"job {job!r} placed twice")
        seen_jobs.add(job)
        if not 1 <= length <= j.size:
            problems.append(f"job {job!r}: length {length} outside [1, {j.size}]")
        if start < j.release or start + length > j.deadline:
            problems.append(f"job {job!r}: ({start}, {start + length}] leaves its window")
        for unit in range(start + 1, start + length + 1):
            if unit in busy:
                problems.append(f"slot {unit} used by {busy[unit]!r} and {job!r}")
            busy[unit] = job
    return problems


# ---------------------------------------------------------------------------
# model-gap families
# ---------------------------------------------------------------------------

# Six unit jobs and one job of size 2 on two machines.  Found by
# ``search_bc_witness`` and certified with the exact oracle:
# non-migratory preemptive optimum 4, non-preemptive optimum 5.
BC_WITNESS = {
    "machines": 2,
    "jobs": [{"id": f"u{k}", "size": 1} for k in range(1, 7)] + [{"id": "long", "size": 2}],
    "precedence": [["u1", "u2"], ["u2", "u4"], ["u2", "u5"], ["u3", "u6"], ["u4", "u6"], ["u5", "u6"]],
    "delays": {"default": 0, "overrides": []},
}


def gen_model_gap_family(which: str, size: int = 2) -> Instance:
    """``AB``: size+1 jobs of length ``size`` on ``size`` machines.

    ``BC``: the persisted certified witness for ``size == 1``; larger sizes
    search 3*size unit jobs plus one job of length ``size``.
    """
    if which == "AB":
        if size < 2:
            raise ValueError("the AB family needs m >= 2")
        return Instance.build({f"j{k}": size for k in range(1, size + 2)}, machines=size)
    if which == "BC":
        if size < 1:
            raise ValueError("the BC family needs n >= 1")
        if size == 1:
            return Instance.from_dict(BC_WITNESS)
        return search_bc_witness(units=3 * size, long=size)
    raise ValueError(f"unknown family {which!r}")


def search_bc_witness(seed: int = 0, trials: int = 3000, *, units: int = 6, long: int = 2,
                      edge_probability: float = 0.35, target=Fraction(5, 4)) -> Instance:
    """Random DAG search for a two-machine instance with OPT_C / OPT_B >= target."""
    from .core_model import CycleDetected
    from .oracle import opt_makespan

    rng = random.Random(seed)
    ids = [f"u{k}" for k in range(1, units + 1)]
    for _ in range(trials):
        pairs = [(ids[a], ids[b]) for a in range(units) for b in range(a + 1, units)
                 if rng.random() < edge_probability]
        for u in ids:
            roll = rng.random()
            if roll < 0.15:
                pairs.append((u, "long"))
            elif roll < 0.3:
                pairs.append(("long", u))
        try:
            inst = Instance.build({**{u: 1 for u in ids}, "long": long}, pairs, machines=2)
        except CycleDetected:
            continue
        b = opt_makespan(inst, "B").value
        c = opt_makespan(inst, "C").value
        if Fraction(c, b) >= target:
            return inst
    raise WitnessSearchFailed(f"no witness with ratio >= {target} in {trials} trials")


# ---------------------------------------------------------------------------
# tree instance
# ---------------------------------------------------------------------------

def tree_job_id(level: int, position: int) -> str:
    return f"t{level}.{position}"


def gen_tree_instance(L: int) -> SingleMachineInstance:
    """Full binary tree of windows: level l, position k has size 2^(L-l) and
    window ((L+1)(k-1)2^(L-l), (L+1)k 2^(L-l)]."""
    if L < 0:
        raise ValueError("L must be >= 0")
    if (L + 1) & L:
        warnings.warn("L+1 is not a power of two; the lifted-solution analysis assumes it is", stacklevel=2)
    jobs = []
    for level in range(L + 1):
        size = 2 ** (L - level)
        for k in range(1, 2 ** level + 1):
            jobs.append(WindowJob(tree_job_id(level, k), size, (L + 1) * (k - 1) * size, (L + 1) * k * size))
    return SingleMachineInstance(tuple(jobs), (L + 1) * 2 ** L)


@dataclass(frozen=True, order=True)
class PlacementVar:
    """Job ``job`` processed in ``(start, start + length]``."""

    job: str
    start: int
    length: int

    @classmethod
    def aligned(cls, smi: SingleMachineInstance, job: str, start: int) -> "PlacementVar":
        j = smi.by_id[job]
        if not (j.release <= start < j.deadline and start % j.size == 0):
            raise ValueError(f"({job}, {start}) is not an aligned start in [{j.release}, {j.deadline})")
        return cls(job, start, j.size)

    @property
    def end(self) -> int:
        return self.start + self.length


def aligned_placements(smi: SingleMachineInstance) -> list[PlacementVar]:
    """All (job, start) with start in [r, d) a multiple of the job's size."""
    out = []
    for j in smi.jobs:
        first = -(-j.release // j.size) * j.size
        for start in range(first, j.deadline, j.size):
            if start + j.size <= j.deadline:
                out.append(PlacementVar(j.id, start, j.size))
    return out


def build_single_machine_lp(smi: SingleMachineInstance, B, aligned_only: bool = False) -> LinearProgram:
    """Discard LP: objective bound, at-most-once per job, one unit per slot."""
    B = Fraction(B)
    if B < 0:
        raise ValueError("B must be nonnegative")
    if aligned_only:
        variables = aligned_placements(smi)
    else:
        variables = [PlacementVar(j.id, t, length) for j in smi.jobs for length in range(1, j.size + 1)
                     for t in range(j.release, j.deadline - length + 1)]
    rows = []
    total = smi.total_size
    if aligned_only:
        rows.append(Constraint.of({v: v.length for v in variables}, ">=", total - B, "objective"))
    else:
        rows.append(Constraint.of({v: -v.length for v in variables}, "<=", B - total, "objective"))
    for j in smi.jobs:
        rows.append(Constraint.of({v: 1 for v in variables if v.job == j.id}, "<=", 1, f"once:{j.id}"))
    for unit in range(1, smi.horizon + 1):
        rows.append(Constraint.of({v: 1 for v in variables if v.start < unit <= v.end}, "<=", 1,
                                  f"congestion:{unit}"))
    rows = [r for r in rows if r.terms or not r.holds({})]  # drop vacuous rows such as 0 <= 1
    return LinearProgram(tuple(variables), tuple(dict.fromkeys(rows)), name="single_machine",
                         bounds_implied=True)


# ---------------------------------------------------------------------------
# chain-job reduction to two machines
# ---------------------------------------------------------------------------

def chain_job_id(t: int) -> str:
    return f"chain{t:04d}"


@dataclass(frozen=True)
class ChainReduction:
    smi: SingleMachineInstance
    instance: Instance

    @property
    def T(self) -> int:
        return self.smi.horizon


def chain_reduction(smi: SingleMachineInstance) -> ChainReduction:
    """Add T unit chain jobs with windows (t-1, t]; j before j' iff d_j <= r_j'."""
    T = smi.horizon
    if smi.jobs and T < max(j.deadline for j in smi.jobs):
        raise HorizonTooSmall(f"horizon {T} is below the latest deadline")
    windows = {j.id: (j.release, j.deadline) for j in smi.jobs}
    sizes = {j.id: j.size for j in smi.jobs}
    for t in range(1, T + 1):
        windows[chain_job_id(t)] = (t - 1, t)
        sizes[chain_job_id(t)] = 1
    pairs = [(a, b) for a in windows for b in windows if a != b and windows[a][1] <= windows[b][0]]
    return ChainReduction(smi, Instance.build(sizes, pairs, machines=2))


def forward_schedule(red: ChainReduction, placements: Sequence[tuple]) -> Schedule:
    """Two-machine non-preemptive schedule from a single-machine solution.

    Chain job t runs on machine 2 in column t; processed units run on
    machine 1.  The unprocessed units of each job are given fresh columns
    right after its processed part (or after its release for an unplaced
    job), shifting later columns right, so the makespan grows by at most the
    solution's cost.  When an unplaced job's release falls inside another
    job's processed stretch, its fresh columns use machine 2 and the cut job
    keeps running through them on machine 1, so no job is split.
    """
    smi = red.smi
    problems = check_solution(smi, placements)
    if problems:
        raise ValueError("; ".join(problems))
    T = red.T
    columns: list[list] = [[None, TaskRef(chain_job_id(t), 1)] for t in range(1, T + 1)]
    inserts = []
    placed = {job: (start, length) for job, start, length in placements}
    for j in smi.jobs:
        start, length = placed.get(j.id, (j.release, 0))
        for k in range(1, length + 1):
            columns[start + k - 1][0] = TaskRef(j.id, k)
        if length < j.size:
            inserts.append((start + length, j.id, length))
    # right to left; at a shared boundary unplaced jobs go in first so that a
    # partially processed job's remainder lands directly after its own units
    for boundary, job, done in sorted(inserts, key=lambda x: (-x[0], x[2] > 0, x[1])):
        size = smi.by_id[job].size
        units = [TaskRef(job, k) for k in range(done + 1, size + 1)]
        straddled = _job_across(columns, boundary)
        if straddled is None:
            columns[boundary:boundary] = [[u, None] for u in units]
            continue
        # the boundary cuts a processed job on machine 1: run the block on
        # machine 2 and let the cut job continue through the new columns
        columns[boundary:boundary] = [[None, u] for u in units]
        rows = [k for k, col in enumerate(columns) if col[0] is not None and col[0].job == straddled]
        tasks = [columns[k][0] for k in rows]
        for k in rows:
            columns[k][0] = None
        for offset, task in enumerate(tasks):
            columns[rows[0] + offset][0] = task
    # a remainder block emptied by a later compaction leaves a blank column
    columns = [col for col in columns if col != [None, None]]
    asg = {}
    for slot, (first, second) in enumerate(columns, start=1):
        if first is not None:
            asg[first] = (1, slot)
        if second is not None:
            asg[second] = (2, slot)
    return Schedule(asg, frozenset(), len(columns))


def _job_across(columns: list, boundary: int) -> str | None:
    """Job on machine 1 on both sides of ``boundary`` (a column index), if any."""
    if not 0 < boundary < len(columns):
        return None
    left, right = columns[boundary - 1][0], columns[boundary][0]
    if left is not None and right is not None and left.job == right.job:
        return left.job
    return None


def backward_solution(red: ChainReduction, schedule: Schedule) -> list[tuple]:
    """Single-machine solution from a valid non-preemptive two-machine schedule.

    Slots without a chain job are cut out together with whatever runs there;
    the remaining T columns carry chain job t in column t and at most one
    original unit each.
    """
    chain_slots = {}
    for task, (_, slot) in schedule.assignment.items():
        if task.job.startswith("chain"):
            chain_slots[slot] = task.job
    kept = sorted(chain_slots)
    column_of = {slot: k for k, slot in enumerate(kept, start=1)}
    units: dict[str, list[int]] = {}
    for task, (_, slot) in schedule.assignment.items():
        if task.job.startswith("chain") or slot not in column_of:
            continue
        units.setdefault(task.job, []).append(column_of[slot])
    out = []
    for job, cols in sorted(units.items()):
        cols.sort()
        if cols != list(range(cols[0], cols[0] + len(cols))):
            raise ValueError(f"job {job!r} is not contiguous; the schedule is not non-preemptive")
        out.append((job, cols[0] - 1, len(cols)))
    return out


# ---------------------------------------------------------------------------
# closed-form lifted solution on the tree instance
# ---------------------------------------------------------------------------

def check_contradiction(placements: Iterable[PlacementVar]) -> bool:
    """True iff a job repeats or two placement intervals overlap."""
    items = list(placements)
    jobs = [p.job for p in items]
    if len(set(jobs)) != len(jobs):
        return True
    spans = sorted((p.start, p.end) for p in items)
    return any(b[0] < a[1] for a, b in zip(spans, spans[1:]))


@dataclass(frozen=True)
class ClosedFormSolution:
    L: int
    eps_prime: Fraction

    def __post_init__(self):
        object.__setattr__(self, "eps_prime", Fraction(self.eps_prime))
        if not 0 < self.eps_prime < 1:
            raise ValueError("eps_prime must lie in (0, 1)")

    @property
    def base(self) -> Fraction:
        return (1 - self.eps_prime) / (self.L + 1)

    def value(self, placements: Iterable[PlacementVar]) -> Fraction:
        items = frozenset(placements)
        if check_contradiction(items):
            return Fraction(0)
        return self.base ** len(items)

    __call__ = value


def sa_closed_form(L: int, eps_prime) -> ClosedFormSolution:
    return ClosedFormSolution(L, Fraction(eps_prime))


# ---------------------------------------------------------------------------
# lifted-constraint verification
# ---------------------------------------------------------------------------

FAMILIES = ("scheduled", "congestion", "objective")
DEFAULT_EXHAUSTIVE_CAP = 2_000_000


@dataclass
class FamilyResult:
    checked: int = 0
    failed: int = 0
    examples: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"checked": self.checked, "failed": self.failed, "examples": list(self.examples)}


@dataclass
class VerificationReport:
    L: int
    eps_prime: Fraction
    q: int
    scope: str
    families: dict
    preconditions: dict

    @property
    def passed(self) -> bool:
        return all(f.failed == 0 for f in self.families.values())

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "eps_prime": f"{self.eps_prime.numerator}/{self.eps_prime.denominator}",
            "q": self.q,
            "scope": self.scope,
            "families": {k: v.to_dict() for k, v in self.families.items()},
            "preconditions": dict(self.preconditions),
        }


class _TreeContext:
    """Precomputed indexes of the tree instance for fast exact evaluation."""

    def __init__(self, L: int, eps_prime: Fraction):
        self.L = L
        self.smi = gen_tree_instance(L)
        self.sol = sa_closed_form(L, eps_prime)
        self.D = aligned_placements(self.smi)
        self.T = self.smi.horizon
        self.by_job: dict[str, list[PlacementVar]] = {}
        for d in self.D:
            self.by_job.setdefault(d.job, []).append(d)
        self.covering: dict[int, list[PlacementVar]] = {t: [] for t in range(1, self.T + 1)}
        for d in self.D:
            for unit in range(d.start + 1, d.end + 1):
                self.covering[unit].append(d)
        self.eps = 4 * Fraction(eps_prime)
        self.target = (1 - self.eps) * self.T
        self._cache: dict = {}

    def x(self, items) -> Fraction:
        return self.sol.value(items)

    def _sums(self, U: frozenset) -> tuple[Fraction, dict, dict, Fraction]:
        """x_U, per-job sums, per-slot sums and the weighted total for U."""
        hit = self._cache.get(U)
        if hit is not None:
            return hit
        xu = self.x(U)
        ext = {d: self.x(U | {d}) for d in self.D} if xu else {}
        per_job = {j: sum((ext.get(d, 0) for d in ds), Fraction(0)) for j, ds in self.by_job.items()}
        per_slot = {t: sum((ext.get(d, 0) for d in ds), Fraction(0)) for t, ds in self.covering.items()}
        weighted = sum((ext.get(d, 0) * d.length for d in self.D), Fraction(0))
        hit = (xu, per_job, per_slot, weighted)
        if len(self._cache) < 50_000:
            self._cache[U] = hit
        return hit

    def slacks(self, S: frozenset, R: frozenset):
        """Left-minus-right slack of every lifted row for (S, R); each must be >= 0."""
        sched = {j: Fraction(0) for j in self.by_job}
        cong = {t: Fraction(0) for t in self.covering}
        obj = Fraction(0)
        for k in range(len(R) + 1):
            for sub in itertools.combinations(sorted(R), k):
                sign = -1 if k % 2 else 1
                xu, per_job, per_slot, weighted = self._sums(S | frozenset(sub))
                if not xu:
                    continue
                for j in sched:
                    sched[j] += sign * (xu - per_job[j])
                for t in cong:
                    cong[t] += sign * (xu - per_slot[t])
                obj += sign * (weighted - self.target * xu)
        return sched, cong, obj


def verify_lifted_constraints(L: int, eps_prime, q: int, scope: str = "exhaustive", *, seed: int = 0,
                              count: int = 100_000, exhaustive_cap: int = DEFAULT_EXHAUSTIVE_CAP,
                              max_examples: int = 5) -> VerificationReport:
    """Check the lifted rows of the aligned LP at the closed-form solution.

    Rows, for all S, R with |S| + |R| <= q (each must have nonnegative slack):

    * scheduled (per job j): sum_{R'} (-1)^|R'| (x_{S+R'} - sum_t x_{S+R'+(j,t)});
    * congestion (per slot t'): same with the placements covering t';
    * objective: sum_{R'} (-1)^|R'| (sum_D p_j x_{S+R'+(j,t)} - (1-eps) T x_{S+R'}),
      with eps = 4 eps'.

    ``exhaustive`` visits every pair (S, R) of subsets; ``sampled`` draws
    contradiction-free S and arbitrary R until ``count`` (S, R, row) triples
    have been checked.
    """
    eps_prime = Fraction(eps_prime)
    if q < 1:
        raise ValueError("q must be >= 1")
    ctx = _TreeContext(L, eps_prime)
    fams = {f: FamilyResult() for f in FAMILIES}
    rows_per_pair = len(ctx.by_job) + ctx.T + 1

    def record(S, R):
        sched, cong, obj = ctx.slacks(S, R)
        for name, items in (("scheduled", sched.items()), ("congestion", cong.items()),
                            ("objective", [("total", obj)])):
            fam = fams[name]
            for key, slack in items:
                fam.checked += 1
                if slack < 0:
                    fam.failed += 1
                    if len(fam.examples) < max_examples:
                        fam.examples.append({"S": _show(S), "R": _show(R), "row": str(key),
                                             "slack": f"{slack.numerator}/{slack.denominator}"})

    if scope == "exhaustive":
        n = len(ctx.D)
        pairs = sum(math.comb(n, s) * math.comb(n, r) for s in range(q + 1) for r in range(q + 1 - s))
        if pairs * rows_per_pair > exhaustive_cap:
            raise SizeBlowup(f"exhaustive check needs {pairs * rows_per_pair} row evaluations")
        for s in range(q + 1):
            for S in itertools.combinations(ctx.D, s):
                for r in range(q + 1 - s):
                    for R in itertools.combinations(ctx.D, r):
                        record(frozenset(S), frozenset(R))
        scope_name = "exhaustive"
    elif scope == "sampled":
        rng = random.Random(seed)
        shapes = [(s, r) for s in range(q + 1) for r in range(q + 1 - s)]
        while fams["scheduled"].checked + fams["congestion"].checked + fams["objective"].checked < count:
            s, r = rng.choice(shapes)
            S = _sample_consistent(rng, ctx.D, s)
            R = frozenset(rng.sample(ctx.D, r))
            record(S, R)
        scope_name = f"sampled(seed={seed}, count={count})"
    else:
        raise ValueError(f"unknown scope {scope!r}")
    pre = {"q_le_eps_L1": q <= eps_prime * (L + 1), "q_le_L1_over_4": Fraction(q) <= Fraction(L + 1, 4)}
    return VerificationReport(L, eps_prime, q, scope_name, fams, pre)


def _sample_consistent(rng: random.Random, D: Sequence[PlacementVar], size: int) -> frozenset:
    while True:
        pick = frozenset(rng.sample(D, size))
        if not check_contradiction(pick):
            return pick


def _show(items) -> list[str]:
    return [f"{p.job}@{p.start}" for p in sorted(items)]


def base_solution_check(L: int) -> dict:
    """The level-one point x = 1/(L+1) on every aligned placement: row checks and cost."""
    smi = gen_tree_instance(L)
    lp = build_single_machine_lp(smi, 0, aligned_only=True)
    values = {v: Fraction(1, L + 1) for v in lp.variables}
    processed = sum((values[v] * v.length for v in lp.variables), Fraction(0))
    return {"violated": [r.label for r in lp.violated(values)], "cost": smi.total_size - processed}
