"""Recursive rounding over a binary laminar decomposition of the horizon.

The driver works on a fractional solution ``x`` that supports
``value``/``singletons``/``condition`` (``LiftedSolution`` or
``MixtureSolution`` from :mod:`precsched.sa_lp`).  One call handles an
interval ``I*`` together with

* ``jobs``      -- jobs whose whole support lies inside ``I*``;
* ``specials``  -- jobs pinned to one machine, whose tasks are either
  completely inside ``I*`` or absent from it.

A call either rounds directly (short intervals) or cuts long chains, splits
pinned jobs, discards the middle band of levels, recurses on the bottom
intervals with independent copies of ``x`` and finally inserts the top jobs
with a matching followed by EDF+ECT.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import random
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import networkx as nx

from .core_model import Instance, TaskRef, transitive_closure
from .deadline_sched import DeadlineInstance, DeadlineJob, edf_ect, edf_ect_comm
from .list_sched import graham_list, graham_list_comm
from .sa_lp import Event, LevelExhausted, MixtureSolution
from .schedule import DELAY, NO_DELAY, Schedule, reinsert_discarded, validate

log = logging.getLogger(__name__)

MODES = (NO_DELAY, DELAY)


class SupportOutsideRoot(ValueError):
    pass


class LevelStarFallback(UserWarning):
    pass


# ---------------------------------------------------------------------------
# laminar tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class Interval:
    level: int
    position: int  # 0-based, left to right
    begin: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.begin + 1

    def contains(self, lo: int, hi: int) -> bool:
        return self.begin <= lo and hi <= self.end

    def to_dict(self) -> dict:
        return {"level": self.level, "position": self.position, "begin": self.begin, "end": self.end}


@dataclass(frozen=True)
class LaminarTree:
    horizon: int          # padded, a power of two
    requested: int        # the horizon asked for
    depth: int            # log2(horizon)

    @property
    def padding(self) -> int:
        return self.horizon - self.requested

    @property
    def root(self) -> Interval:
        return self.interval(0, 0)

    def interval(self, level: int, position: int) -> Interval:
        if not 0 <= level <= self.depth or not 0 <= position < 2 ** level:
            raise IndexError(f"no interval at level {level}, position {position}")
        width = self.horizon >> level
        return Interval(level, position, position * width + 1, (position + 1) * width)

    def level(self, level: int) -> list[Interval]:
        return [self.interval(level, p) for p in range(2 ** level)]

    @property
    def intervals(self) -> list[Interval]:
        return [iv for lv in range(self.depth + 1) for iv in self.level(lv)]

    def children(self, iv: Interval) -> list[Interval]:
        if iv.level == self.depth:
            return []
        return [self.interval(iv.level + 1, 2 * iv.position), self.interval(iv.level + 1, 2 * iv.position + 1)]

    def parent(self, iv: Interval) -> Interval | None:
        return None if iv.level == 0 else self.interval(iv.level - 1, iv.position // 2)

    def relative_depth(self, iv: Interval) -> int:
        return self.depth - iv.level

    def sub_intervals(self, iv: Interval, relative_level: int) -> list[Interval]:
        """Intervals of ``iv``'s subtree that are ``relative_level`` levels below it."""
        lv = iv.level + relative_level
        if relative_level < 0 or lv > self.depth:
            raise IndexError(f"relative level {relative_level} outside {iv}")
        span = 2 ** relative_level
        return [self.interval(lv, iv.position * span + q) for q in range(span)]

    def owner(self, lo: int, hi: int, within: Interval | None = None) -> Interval:
        """Smallest tree interval containing the slot range ``[lo, hi]``."""
        node = within or self.root
        if not node.contains(lo, hi):
            raise SupportOutsideRoot(f"slots {lo}..{hi} are outside {node.begin}..{node.end}")
        while True:
            nxt = next((c for c in self.children(node) if c.contains(lo, hi)), None)
            if nxt is None:
                return node
            node = nxt


def build_laminar(T: int) -> LaminarTree:
    if T < 1:
        raise ValueError("horizon must be at least 1")
    padded = 1 << (T - 1).bit_length()
    return LaminarTree(padded, T, padded.bit_length() - 1)


# ---------------------------------------------------------------------------
# supports and ownership
# ---------------------------------------------------------------------------

def task_support(x) -> dict:
    """task -> sorted list of (machine, slot) with positive mass."""
    out: dict = {}
    for key, val in x.singletons().items():
        if val > 0:
            ev = key if isinstance(key, Event) else next(iter(key))
            out.setdefault(ev.task, []).append((ev.machine, ev.slot))
    return {t: sorted(v) for t, v in out.items()}


def job_hull(support: Mapping, instance: Instance, job: str) -> tuple[int, int] | None:
    slots = [s for k in range(1, instance.size(job) + 1) for _, s in support.get(TaskRef(job, k), ())]
    return (min(slots), max(slots)) if slots else None


def ownership(x, tree: LaminarTree, jobs: Iterable[str], instance: Instance, *,
              support: Mapping | None = None) -> dict:
    """job -> smallest tree interval containing its support (jobs without support are skipped)."""
    support = task_support(x) if support is None else support
    out = {}
    for j in jobs:
        hull = job_hull(support, instance, j)
        if hull is not None:
            out[j] = tree.owner(*hull)
    return out


# ---------------------------------------------------------------------------
# parameters and reference formulas
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HierarchyParams:
    k: int = 1
    delta: Fraction = Fraction(1, 4)
    epsilon: Fraction = Fraction(1, 2)
    level_budget: int = 256
    extra_points: int = 0
    seed: int = 0
    level_star: int | None = None
    strict_bounds: bool = False

    def __post_init__(self):
        object.__setattr__(self, "delta", Fraction(self.delta))
        object.__setattr__(self, "epsilon", Fraction(self.epsilon))
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if self.level_budget < 1:
            raise ValueError("level budget must be positive")

    def to_dict(self) -> dict:
        return {
            "k": self.k, "delta": _q(self.delta), "epsilon": _q(self.epsilon),
            "level_budget": self.level_budget, "extra_points": self.extra_points, "seed": self.seed,
            "level_star": self.level_star, "strict_bounds": self.strict_bounds,
        }


def reference_k(m: int, epsilon, T: int, constant: int = 1) -> int:
    """k = c * m / eps * log log T (display only)."""
    loglog = math.log2(max(math.log2(max(T, 2)), 1.0))
    return max(1, math.ceil(constant * m / float(epsilon) * loglog))


def reference_delta(k: int, m: int, epsilon, T: int) -> Fraction:
    return Fraction(epsilon) / (8 * k * k * m * 2 ** (2 * k * k) * max(1, math.ceil(math.log2(max(T, 2)))))


def reference_K(k: int, m: int, delta) -> Fraction:
    return m * k * k * 2 ** (k * k) / Fraction(delta)


def reference_K_prime(k: int, m: int, delta) -> Fraction:
    return reference_K(k, m, delta) * 2 ** (k * k)


def reference_parameters(m: int, epsilon, T: int) -> dict:
    k = reference_k(m, epsilon, T)
    delta = reference_delta(k, m, epsilon, T)
    return {"k": k, "delta": _q(delta), "K": _q(reference_K(k, m, delta)),
            "K_prime": _q(reference_K_prime(k, m, delta))}


def call_discard_bound(epsilon, interval_length: int, horizon: int, machines: int, work: int) -> Fraction:
    """(eps/2) * (log|I*| / log T) * |I*| + (eps / 2m) * |A*|."""
    eps = Fraction(epsilon)
    log_i = interval_length.bit_length() - 1
    log_t = horizon.bit_length() - 1
    first = eps / 2 * Fraction(log_i, log_t) * interval_length if log_t else Fraction(0)
    return first + eps / (2 * machines) * work


def _q(v) -> str:
    v = Fraction(v)
    return f"{v.numerator}/{v.denominator}"


# ---------------------------------------------------------------------------
# partial instances
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PartialInstance:
    interval: Interval
    jobs: frozenset
    specials: Mapping[str, int]   # job -> machine
    x: object

    def __post_init__(self):
        object.__setattr__(self, "jobs", frozenset(self.jobs))
        object.__setattr__(self, "specials", dict(self.specials))
        if self.jobs & set(self.specials):
            raise ValueError("a job cannot be both regular and special")


def special_tasks_in(support: Mapping, instance: Instance, specials: Mapping, iv: Interval) -> list[TaskRef]:
    """Tasks of pinned jobs whose support lies inside ``iv``."""
    out = []
    for j in specials:
        for k in range(1, instance.size(j) + 1):
            slots = [s for _, s in support.get(TaskRef(j, k), ())]
            if slots and iv.contains(min(slots), max(slots)):
                out.append(TaskRef(j, k))
    return out


def check_partial(partial: PartialInstance, instance: Instance, support: Mapping | None = None) -> list[str]:
    """Problems with the entry conditions of a call (empty list when well formed)."""
    x, iv = partial.x, partial.interval
    support = task_support(x) if support is None else support
    problems = []
    for j in sorted(partial.jobs):
        hull = job_hull(support, instance, j)
        if hull is None or not iv.contains(*hull):
            problems.append(f"job {j} is not supported inside {iv.begin}..{iv.end}")
    for j, machine in sorted(partial.specials.items()):
        for k in range(1, instance.size(j) + 1):
            ev = support.get(TaskRef(j, k), ())
            if any(i != machine for i, _ in ev):
                problems.append(f"special job {j} has mass off machine {machine}")
            inside = sum((x.value({Event(TaskRef(j, k), i, s)}) for i, s in ev if iv.contains(s, s)), Fraction(0))
            if inside not in (0, 1):
                problems.append(f"special task {j}#{k} is split across the border of {iv.begin}..{iv.end}")
    return problems


# ---------------------------------------------------------------------------
# split, chain cutting, level selection
# ---------------------------------------------------------------------------

def split_special(x, job: str, machine: int, interval: Interval, tree: LaminarTree, k: int,
                  instance: Instance) -> tuple[object, int]:
    """Confine every in-interval task of a pinned job to one level-k^2 sub-interval.

    Sweeps the sub-intervals left to right; in each one the rightmost slot
    with positive mass (for any of the job's tasks) is fixed by
    conditioning.  Returns the new solution and the number of conditionings.
    """
    support = task_support(x)
    tasks = special_tasks_in(support, instance, {job: machine}, interval)
    if not tasks:
        return x, 0
    depth = min(k * k, tree.relative_depth(interval))
    used = 0
    for sub in tree.sub_intervals(interval, depth):
        support = task_support(x)
        best = None
        for a in tasks:
            for i, s in support.get(a, ()):
                if i == machine and sub.contains(s, s) and (best is None or (s, a.index) > (best[1], best[0].index)):
                    best = (a, s)
        if best is None:
            continue
        ev = Event(best[0], machine, best[1])
        if x.value({ev}) == 1:
            continue
        x = x.condition(ev)
        used += 1
    return x, used


def longest_owned_chain(instance: Instance, jobs: Iterable[str]) -> tuple[int, list[str]]:
    """Heaviest precedence chain (total size) inside ``jobs`` and its members in order."""
    jobs = set(jobs)
    order = [j for j in instance.topological_jobs() if j in jobs]
    best: dict[str, int] = {}
    back: dict[str, str | None] = {}
    for j in order:
        preds = [p for p in instance.precedence.predecessors(j) if p in jobs]
        top = max(preds, key=lambda p: (best[p], p), default=None)
        best[j] = instance.size(j) + (best[top] if top is not None else 0)
        back[j] = top
    if not best:
        return 0, []
    end = max(order, key=lambda j: (best[j], j))
    chain = [end]
    while back[chain[-1]] is not None:
        chain.append(back[chain[-1]])
    return best[end], chain[::-1]


@dataclass
class CutOutcome:
    partial: PartialInstance
    iterations: int
    conditionings: int
    chain_bound: Fraction
    chain_after: int
    within_K: bool


def cut_chains(partial: PartialInstance, k: int, delta, tree: LaminarTree, instance: Instance, *,
               enforce_K: bool = False) -> CutOutcome:
    """Pin the first job of any long chain owned in the first k^2 levels of ``I*``.

    A chain owned by interval ``I`` is long when its total size is at least
    ``delta * |I|``.  The last task of its first job is fixed at its latest
    positive slot (lowest machine on ties); the job then becomes special and
    is split.  The loop repeats until no long chain is left.
    """
    delta = Fraction(delta)
    iv = partial.interval
    x, jobs, specials = partial.x, set(partial.jobs), dict(partial.specials)
    levels = min(k * k, tree.relative_depth(iv) + 1)
    iterations = used = 0
    while True:
        support = task_support(x)
        owners = ownership(x, tree, jobs, instance, support=support)
        target = None
        for rel in range(levels):
            for sub in tree.sub_intervals(iv, rel):
                owned = [j for j, o in owners.items() if o == sub]
                weight, chain = longest_owned_chain(instance, owned)
                if chain and weight >= delta * sub.length:
                    target = chain[0]
                    break
            if target:
                break
        if target is None:
            break
        last = TaskRef(target, instance.size(target))
        machine, slot = min(support[last], key=lambda e: (-e[1], e[0]))
        x = x.condition(Event(last, machine, slot))
        used += 1
        iterations += 1
        jobs.discard(target)
        specials[target] = machine
        x, extra = split_special(x, target, machine, iv, tree, k, instance)
        used += extra
    owners = ownership(x, tree, jobs, instance)
    upper = [j for j, o in owners.items() if o.level - iv.level < k * k]
    after = instance.max_chain(upper) if upper else 0
    bound = k * k * delta * iv.length
    if after > bound:
        raise AssertionError(f"chain of size {after} left among upper jobs (bound {bound})")
    K = reference_K(k, instance.machines, delta)
    within = iterations <= K
    if enforce_K and not within:
        raise AssertionError(f"{iterations} chain cuts exceed K = {K}")
    return CutOutcome(PartialInstance(iv, frozenset(jobs), specials, x), iterations, used, bound, after, within)


@dataclass(frozen=True)
class LevelChoice:
    level_star: int
    fallback: bool
    middle_work: int
    top_work: int


def select_level_star(level_work: Mapping[int, int], k: int, epsilon, m: int, T: int, T_star: int) -> LevelChoice:
    """Smallest level in [k, k^2] whose middle band is light enough.

    ``level_work`` maps a relative level to the number of tasks of jobs
    owned there.  The condition is
    ``mid <= eps/4 * T*/log T + eps/(2m) * (mid + top)``; when no level meets
    it the level with the lightest middle band is returned with
    ``fallback=True`` (and a warning).
    """
    eps = Fraction(epsilon)
    log_t = max(T.bit_length() - 1, 1)
    hi = min(k * k, T_star.bit_length() - 1) if T_star > 1 else k
    candidates = []
    for ls in range(k, max(hi, k) + 1):
        mid = sum(level_work.get(lv, 0) for lv in range(ls - k, ls))
        top = sum(level_work.get(lv, 0) for lv in range(0, ls - k))
        ok = mid <= eps / 4 * Fraction(T_star, log_t) + eps / (2 * m) * (mid + top)
        candidates.append((ls, mid, top, ok))
    for ls, mid, top, ok in candidates:
        if ok:
            return LevelChoice(ls, False, mid, top)
    ls, mid, top, _ = min(candidates, key=lambda c: (c[1], c[0]))
    warnings.warn(f"no level in [{k}, {k * k}] meets the middle-band bound; using {ls}", LevelStarFallback)
    return LevelChoice(ls, True, mid, top)


# ---------------------------------------------------------------------------
# top jobs
# ---------------------------------------------------------------------------

@dataclass
class TopWindows:
    support: tuple          # (r_j, d_j)
    aligned: tuple          # (r'_j, d'_j)
    window: tuple | None    # (r*_j, d*_j) or None when it vanishes


def top_windows(hull: tuple[int, int], bands: Sequence[Interval]) -> TopWindows:
    r, d = hull
    u = max(q for q, b in enumerate(bands) if b.begin <= r)
    v = min(q for q, b in enumerate(bands) if b.end >= d)
    aligned = (bands[u].begin, bands[v].end)
    if u + 1 > v - 1:
        return TopWindows(hull, aligned, None)
    return TopWindows(hull, aligned, (bands[u + 1].begin, bands[v - 1].end))


@dataclass
class TentativeResult:
    assignment: dict          # task -> (machine, slot)
    discarded: frozenset
    windows: dict             # job -> TopWindows
    matching_size: int
    flow_value: int
    precedence_problems: list


def tentative_top_assign(top_jobs: Iterable[str], x, schedule_so_far: Mapping[TaskRef, tuple],
                         tree: LaminarTree, interval: Interval, level_star: int, instance: Instance) -> TentativeResult:
    """Match top tasks to free (machine, slot) pairs inside their shrunken windows.

    Unmatched tasks are discarded, taking the highest task indices of a job
    first.  The matching size is cross-checked against a max-flow value.
    """
    top_jobs = sorted(top_jobs)
    support = task_support(x)
    bands = tree.sub_intervals(interval, level_star)
    used = {v for v in schedule_so_far.values()}
    free = [(i, t) for t in range(interval.begin, interval.end + 1) for i in range(1, instance.machines + 1)
            if (i, t) not in used]
    windows = {}
    graph = nx.Graph()
    left = []
    for j in top_jobs:
        hull = job_hull(support, instance, j)
        windows[j] = top_windows(hull, bands)
        win = windows[j].window
        for k in range(1, instance.size(j) + 1):
            node = ("task", j, k)
            left.append(node)
            graph.add_node(node, bipartite=0)
            if win is None:
                continue
            for i, t in free:
                if win[0] <= t <= win[1]:
                    graph.add_edge(node, ("slot", i, t))
    match = nx.bipartite.hopcroft_karp_matching(graph, top_nodes=left) if graph.number_of_edges() else {}
    matched = {n: match[n] for n in left if n in match}

    flow = nx.DiGraph()
    flow.add_nodes_from(("source", "sink"))
    for node in left:
        flow.add_edge("source", node, capacity=1)
        for _, other in graph.edges(node):
            flow.add_edge(node, other, capacity=1)
            flow.add_edge(other, "sink", capacity=1)
    flow_value = nx.maximum_flow_value(flow, "source", "sink",
                                       flow_func=nx.algorithms.flow.edmonds_karp) if left else 0
    if flow_value != len(matched):
        raise AssertionError(f"matching size {len(matched)} differs from max-flow value {flow_value}")

    counts = {j: sum(1 for n in matched if n[1] == j) for j in top_jobs}
    slots = {j: sorted((matched[n][2], matched[n][1]) for n in matched if n[1] == j) for j in top_jobs}
    assignment = {}
    discarded = set()
    for j in top_jobs:
        for k in range(1, instance.size(j) + 1):
            if k <= counts[j]:
                t, i = slots[j][k - 1]
                assignment[TaskRef(j, k)] = (i, t)
            else:
                discarded.add(TaskRef(j, k))

    problems = []
    for a, (_, s) in assignment.items():
        for b, (_, sb) in schedule_so_far.items():
            if instance.task_precedes(b, a) and b.job != a.job and sb >= s:
                problems.append(f"{b} must precede {a}")
            if instance.task_precedes(a, b) and b.job != a.job and s >= sb:
                problems.append(f"{a} must precede {b}")
    return TentativeResult(assignment, frozenset(discarded), windows, len(matched), flow_value, problems)


def insert_top_jobs(tentative: TentativeResult, schedule_so_far: Mapping[TaskRef, tuple], tree: LaminarTree,
                    interval: Interval, level_star: int, instance: Instance, mode: str):
    """EDF+ECT over the free slots; windows are the shrunken top windows.

    Returns (assignment, stage-two discards, trace).
    """
    offset = interval.begin - 1
    sizes = {}
    for task in tentative.assignment:
        sizes[task.job] = sizes.get(task.job, 0) + 1
    jobs = []
    for j, n in sorted(sizes.items()):
        r, d = tentative.windows[j].window
        jobs.append(DeadlineJob(j, n, r - offset, d - offset))
    if not jobs:
        return {}, frozenset(), None
    used = set(schedule_so_far.values())
    capacity = tuple(tuple(0 if (i, t + offset) in used else 1 for t in range(1, interval.length + 1))
                     for i in range(1, instance.machines + 1))
    prec = transitive_closure([(a, b) for a, b in instance.precedence.pairs if a in sizes and b in sizes],
                              list(sizes))
    dl = DeadlineInstance(tuple(jobs), prec, interval.length, 2 ** level_star, instance.machines, capacity,
                          max(instance.beta, 1))
    trace = (edf_ect_comm if mode == DELAY else edf_ect)(dl)
    asg = {t: (i, s + offset) for t, (i, s) in trace.schedule.assignment.items()}
    return asg, frozenset(trace.discarded), trace


def repair_delays(assignment: dict, movable: set, instance: Instance) -> set:
    """Drop first/last tasks of movable jobs until no delay constraint is violated."""
    dropped = set()
    while True:
        report = validate(Schedule(assignment), instance, DELAY)
        bad = [v for v in report.violations if v.kind == "comm_delay"]
        if not bad:
            return dropped
        last, first = bad[0].tasks
        victim = first if first.job in movable else last if last.job in movable else None
        if victim is None:
            raise AssertionError(f"delay violation between fixed tasks {last} and {first}")
        del assignment[victim]
        dropped.add(victim)


# ---------------------------------------------------------------------------
# the recursive driver
# ---------------------------------------------------------------------------

@dataclass
class CallRecord:
    interval: Interval
    work: int
    base_case: bool
    level_star: int | None = None
    fallback: bool = False
    cut_iterations: int = 0
    conditionings: int = 0
    subtree_conditionings: int = 0
    discards: dict = field(default_factory=lambda: {
        "middle": 0, "bottom_recursive": 0, "top_stage1": 0, "top_stage2": 0, "last_slot": 0})
    bound: Fraction = Fraction(0)
    specials: dict = field(default_factory=dict)
    stage1_bound: Fraction | None = None

    @property
    def total_discarded(self) -> int:
        return sum(self.discards.values())

    @property
    def within_bound(self) -> bool:
        return self.total_discarded <= self.bound

    def to_dict(self) -> dict:
        return {
            "interval": self.interval.to_dict(), "work": self.work, "base_case": self.base_case,
            "level_star": self.level_star, "fallback": self.fallback, "cut_iterations": self.cut_iterations,
            "conditionings": self.conditionings, "subtree_conditionings": self.subtree_conditionings,
            "discards": dict(self.discards), "total_discarded": self.total_discarded,
            "bound": _q(self.bound), "within_bound": self.within_bound,
            "specials": dict(sorted(self.specials.items())),
            "stage1_bound": None if self.stage1_bound is None else _q(self.stage1_bound),
        }


@dataclass
class PartialResult:
    assignment: dict
    discarded: frozenset
    calls: list
    sigma: dict               # every job that became special anywhere -> machine

    def schedule(self, horizon: int) -> Schedule:
        return Schedule(self.assignment, self.discarded, horizon)


class _Driver:
    def __init__(self, instance: Instance, tree: LaminarTree, params: HierarchyParams, mode: str,
                 branch_order: str = "left_to_right"):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.inst = instance
        self.tree = tree
        self.params = params
        self.mode = mode
        self.branch_order = branch_order
        self.calls: list[CallRecord] = []
        self.sigma: dict = {}

    def run(self, partial: PartialInstance) -> tuple[dict, frozenset, int]:
        inst, tree, p = self.inst, self.tree, self.params
        iv = partial.interval
        support = task_support(partial.x)
        problems = check_partial(partial, inst, support)
        if problems:
            raise AssertionError("; ".join(problems))
        self.sigma.update(partial.specials)
        work_tasks = [TaskRef(j, k) for j in partial.jobs for k in range(1, inst.size(j) + 1)]
        work_tasks += special_tasks_in(support, inst, partial.specials, iv)
        rec = CallRecord(iv, len(work_tasks), iv.length < 2 ** (p.k * p.k))
        rec.bound = call_discard_bound(p.epsilon, iv.length, tree.horizon, inst.machines, rec.work)
        self.calls.append(rec)
        if not work_tasks:
            return {}, frozenset(), 0
        if rec.base_case:
            asg, dropped, used = self._base_case(partial.x, work_tasks, iv)
            rec.conditionings = rec.subtree_conditionings = used
            rec.discards["last_slot"] = len(dropped)
            return asg, dropped, used

        x = partial.x
        used = 0
        for j, machine in sorted(partial.specials.items()):
            x, n = split_special(x, j, machine, iv, tree, p.k, inst)
            used += n
        cut = cut_chains(PartialInstance(iv, partial.jobs, partial.specials, x), p.k, p.delta, tree, inst,
                         enforce_K=p.strict_bounds)
        used += cut.conditionings
        rec.cut_iterations = cut.iterations
        x, jobs, specials = cut.partial.x, cut.partial.jobs, cut.partial.specials
        rec.specials = {j: specials[j] for j in specials if j not in partial.specials}
        self.sigma.update(specials)

        owners = ownership(x, tree, jobs, inst)
        level_work: dict[int, int] = {}
        for j, o in owners.items():
            level_work[o.level - iv.level] = level_work.get(o.level - iv.level, 0) + inst.size(j)
        if p.level_star is not None:
            choice = LevelChoice(p.level_star, False, 0, 0)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", LevelStarFallback)
                choice = select_level_star(level_work, p.k, p.epsilon, inst.machines, tree.horizon, iv.length)
        ls = choice.level_star
        rec.level_star, rec.fallback = ls, choice.fallback
        top = sorted(j for j, o in owners.items() if o.level - iv.level < ls - p.k)
        middle = sorted(j for j, o in owners.items() if ls - p.k <= o.level - iv.level < ls)
        bands = tree.sub_intervals(iv, ls)
        bottom = {b: sorted(j for j, o in owners.items() if o.level - iv.level >= ls and b.contains(o.begin, o.end))
                  for b in bands}
        discarded = {TaskRef(j, k) for j in middle for k in range(1, inst.size(j) + 1)}
        rec.discards["middle"] = len(discarded)

        asg: dict = {}
        order = bands if self.branch_order == "left_to_right" else bands[::-1]
        child_used = 0
        for b in order:
            sub_asg, sub_drop, sub_used = self.run(PartialInstance(b, frozenset(bottom[b]), specials, x))
            asg.update(sub_asg)
            discarded |= sub_drop
            rec.discards["bottom_recursive"] += len(sub_drop)
            child_used = max(child_used, sub_used)

        if top:
            tent = tentative_top_assign(top, x, asg, tree, iv, ls, inst)
            if tent.precedence_problems:
                raise AssertionError("; ".join(tent.precedence_problems))
            rec.discards["top_stage1"] = len(tent.discarded)
            rec.stage1_bound = Fraction(4 * inst.machines * iv.length, 2 ** p.k)
            top_asg, stage2, _ = insert_top_jobs(tent, asg, tree, iv, ls, inst, self.mode)
            if self.mode == DELAY:
                merged = {**asg, **top_asg}
                dropped = repair_delays(merged, set(top), inst)
                for t in dropped:
                    del top_asg[t]
                stage2 = stage2 | dropped
            asg.update(top_asg)
            discarded |= tent.discarded | stage2
            rec.discards["top_stage2"] = len(stage2)
        rec.conditionings = used
        rec.subtree_conditionings = used + child_used
        self._check(asg, iv)
        if p.strict_bounds and not rec.within_bound:
            raise AssertionError(f"{rec.total_discarded} discards exceed the bound {rec.bound} on {iv}")
        return asg, frozenset(discarded), used + child_used

    def _base_case(self, x, tasks: list[TaskRef], iv: Interval):
        inst = self.inst
        rank = {j: r for r, j in enumerate(inst.topological_jobs())}
        used = 0
        asg = {}
        for a in sorted(tasks, key=lambda t: (rank[t.job], t.index)):
            events = [(s, i) for i, s in task_support(x).get(a, ()) if iv.contains(s, s)]
            if not events:
                raise LevelExhausted(f"task {a} has no positive event inside {iv.begin}..{iv.end}")
            s, i = min(events)
            ev = Event(a, i, s)
            if x.value({ev}) != 1:
                x = x.condition(ev)
                used += 1
            asg[a] = (i, s)
        dropped = set()
        if self.mode == DELAY and self.inst.beta:
            cut = iv.end - self.inst.beta + 1
            dropped = {a for a, (_, s) in asg.items() if s >= cut}
            for a in dropped:
                del asg[a]
        self._check(asg, iv)
        return asg, frozenset(dropped), used

    def _check(self, asg: dict, iv: Interval) -> None:
        report = validate(Schedule(asg), self.inst, self.mode)
        if not report.valid:
            raise AssertionError(f"invalid partial schedule on {iv.begin}..{iv.end}: {report.violations[:3]}")
        if any(not iv.contains(s, s) for _, s in asg.values()):
            raise AssertionError("task placed outside its interval")


def partial_schedule(partial: PartialInstance, params: HierarchyParams, mode: str, *, instance: Instance,
                     tree: LaminarTree, branch_order: str = "left_to_right") -> PartialResult:
    """Round ``partial`` into a valid schedule of all but the discarded tasks."""
    drv = _Driver(instance, tree, params, mode, branch_order)
    asg, dropped, _ = drv.run(partial)
    return PartialResult(asg, dropped, drv.calls, drv.sigma)


# ---------------------------------------------------------------------------
# the fractional point and the full driver
# ---------------------------------------------------------------------------

def schedule_events(schedule: Schedule) -> frozenset:
    return frozenset(Event(t, i, s) for t, (i, s) in schedule.assignment.items())


def relabel_machines(schedule: Schedule, perm: Sequence[int]) -> Schedule:
    """Apply machine relabelling ``i -> perm[i-1]``."""
    return Schedule({t: (perm[i - 1], s) for t, (i, s) in schedule.assignment.items()}, schedule.discarded,
                    schedule.horizon)


def build_mixture(instance: Instance, witness: Schedule, horizon: int, mode: str, *, level: int,
                  extra_points: int = 0, seed: int = 0) -> MixtureSolution:
    """Uniform convex combination of valid schedules with makespan <= ``horizon``.

    The points are the witness under every machine relabelling plus up to
    ``extra_points`` list schedules from random priority orders (kept only
    when they fit the horizon).
    """
    points = []
    seen = set()

    def add(s: Schedule):
        ev = schedule_events(s)
        if ev not in seen and s.makespan <= horizon and validate(s, instance, mode).valid:
            seen.add(ev)
            points.append(ev)

    for perm in itertools.permutations(range(1, instance.machines + 1)):
        add(relabel_machines(witness, perm))
    rng = random.Random(seed)
    lister = graham_list_comm if mode == DELAY else graham_list
    for _ in range(extra_points):
        order = _random_topological(instance, rng)
        base = lister(instance, order)
        for perm in itertools.permutations(range(1, instance.machines + 1)):
            add(relabel_machines(base, perm))
    w = Fraction(1, len(points))
    return MixtureSolution(level, [(w, p) for p in points])


def _random_topological(instance: Instance, rng: random.Random) -> list[str]:
    remaining = set(instance.job_ids)
    order = []
    while remaining:
        ready = sorted(j for j in remaining if not (instance.precedence.predecessors(j) & remaining))
        pick = rng.choice(ready)
        order.append(pick)
        remaining.discard(pick)
    return order


@dataclass
class HierarchyRun:
    schedule: Schedule
    partial: Schedule
    horizon: int
    tree: LaminarTree
    calls: list
    sigma: dict
    mode: str
    params: HierarchyParams
    points: int

    @property
    def discarded(self) -> int:
        return len(self.partial.discarded)

    @property
    def makespan_bound(self) -> int:
        beta = self.schedule_beta
        return self.horizon + (2 * beta + 1 if self.mode == DELAY else 1) * self.discarded

    schedule_beta: int = 1

    def manifest(self) -> dict:
        return {
            "mode": self.mode,
            "params": self.params.to_dict(),
            "horizon": self.horizon,
            "padded_horizon": self.tree.horizon,
            "padding": self.tree.padding,
            "mixture_points": self.points,
            "discarded": self.discarded,
            "makespan": self.schedule.makespan,
            "makespan_bound": self.makespan_bound,
            "sigma": dict(sorted(self.sigma.items())),
            "level_budget_consumed": max((c.subtree_conditionings for c in self.calls), default=0),
            "calls": [c.to_dict() for c in self.calls],
        }

    def manifest_json(self) -> str:
        return json.dumps(self.manifest(), sort_keys=True)


def smallest_horizon(instance: Instance, mode: str, *, limit: int | None = None) -> tuple[int, Schedule]:
    """Smallest horizon with an integral non-migratory schedule, and a witness."""
    from .oracle import feasible_at

    lister = graham_list_comm if mode == DELAY else graham_list
    upper = lister(instance)
    lo = max(instance.max_chain(), math.ceil(instance.total_size / instance.machines), 1)
    hi = upper.makespan if limit is None else min(limit, upper.makespan)
    for T in range(lo, hi + 1):
        found = feasible_at(instance, T, "B", mode == DELAY)
        if found is not None:
            return T, found
    return upper.makespan, upper


def run_full(instance: Instance, mode: str = NO_DELAY, params: HierarchyParams | None = None, *,
             branch_order: str = "left_to_right", witness: Schedule | None = None) -> HierarchyRun:
    """Find the horizon, round on the root interval and reinsert discarded tasks.

    With ``witness`` the horizon search is skipped and the witness makespan
    is used instead (handy beyond the exact-search caps).
    """
    params = params or HierarchyParams()
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if instance.total_size == 0:
        empty = Schedule({}, frozenset(), 0)
        tree = build_laminar(1)
        return HierarchyRun(empty, empty, 0, tree, [], {}, mode, params, 0, instance.beta)
    if witness is None:
        T, witness = smallest_horizon(instance, mode)
    else:
        T = witness.makespan
    tree = build_laminar(T)
    x = build_mixture(instance, witness, T, mode, level=params.level_budget,
                      extra_points=params.extra_points, seed=params.seed)
    root = PartialInstance(tree.root, frozenset(instance.job_ids), {}, x)
    result = partial_schedule(root, params, mode, instance=instance, tree=tree, branch_order=branch_order)
    partial = result.schedule(tree.horizon)
    final = reinsert_discarded(partial, instance, mode)
    report = validate(final, instance, mode)
    if not report.valid:
        raise AssertionError(f"final schedule is invalid: {report.violations[:3]}")
    run = HierarchyRun(final, partial, T, tree, result.calls, result.sigma, mode, params,
                       len(x.components), instance.beta)
    if final.makespan > run.makespan_bound:
        raise AssertionError(f"makespan {final.makespan} exceeds {run.makespan_bound}")
    log.debug("hierarchy run: T=%d discarded=%d makespan=%d", T, run.discarded, final.makespan)
    return run
