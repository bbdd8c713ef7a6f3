"""Exact brute-force solvers for tiny instances.

Two independent search strategies find optimal makespans:

* ``slot`` walks time slot by slot and decides what every machine runs;
* ``sequence`` appends unit placements job by job, each at its earliest
  feasible slot on a chosen machine (an optimal schedule sorted by slot is
  reproduced this way, so the search is exact).

Models: ``A`` migratory and preemptive, ``B`` preemptive but every job stays
on one machine, ``C`` non-preemptive.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

from .core_model import Instance, TaskRef
from .schedule import DELAY, NO_DELAY, Schedule, validate

MODELS = ("A", "B", "C")
DEFAULT_TASK_CAP = 16
DEFAULT_MACHINE_CAP = 3
DEFAULT_HORIZON_CAP = 40


class CapExceeded(RuntimeError):
    pass


@dataclass
class OracleResult:
    value: int
    witness: object
    nodes: int = 0
    extra: dict = field(default_factory=dict)


def _lower_bound(instance: Instance) -> int:
    return max(math.ceil(instance.total_size / instance.machines), instance.max_chain(), 0)


def _upper_bound(instance: Instance, with_delays: bool) -> int:
    from .list_sched import graham_list, graham_list_comm

    sched = graham_list_comm(instance) if with_delays else graham_list(instance)
    return sched.makespan


def witness_is_valid(result: OracleResult, instance: Instance, model: str, with_delays: bool) -> bool:
    report = validate(result.witness, instance, DELAY if with_delays else NO_DELAY)
    bad = [v for v in report.violations if not (model == "A" and v.kind == "migration")]
    if bad:
        return False
    if model == "C":
        asg = result.witness.assignment
        for j in instance.job_ids:
            slots = [asg[TaskRef(j, k)][1] for k in range(1, instance.size(j) + 1)]
            if slots != list(range(slots[0], slots[0] + len(slots))):
                return False
    return result.witness.makespan == result.value


class _Problem:
    """Shared precomputation for both makespan strategies."""

    def __init__(self, instance: Instance, model: str, with_delays: bool):
        self.inst = instance
        self.model = model
        self.delays = with_delays
        self.ids = instance.topological_jobs()
        self.index = {j: k for k, j in enumerate(self.ids)}
        self.size = [instance.size(j) for j in self.ids]
        self.m = instance.machines
        n = len(self.ids)
        self.preds = [[self.index[p] for p in instance.precedence.predecessors(j)] for j in self.ids]
        self.succ = [[self.index[s] for s in instance.precedence.successors(j)] for j in self.ids]
        self.delay = {
            (a, b): (instance.delay(self.ids[a], self.ids[b]) if with_delays else 0)
            for b in range(n) for a in self.preds[b]
        }
        down = [0] * n
        for k in reversed(range(n)):
            down[k] = self.size[k] + max((down[s] for s in self.succ[k]), default=0)
        self.tail = [max((down[s] for s in self.succ[k]), default=0) for k in range(n)]
        self.nodes = 0

    def bound(self, rem: Sequence[int], now: int) -> int:
        """Lower bound on makespan given remaining work from slot ``now`` on."""
        total = sum(rem)
        if total == 0:
            return 0
        chain = max((rem[k] + self.tail[k] for k in range(len(rem)) if rem[k]), default=0)
        return now - 1 + max(chain, math.ceil(total / self.m))


# ---------------------------------------------------------------------------
# strategy 1: slot-by-slot search
# ---------------------------------------------------------------------------

def _slot_feasible(prob: _Problem, horizon: int):
    n = len(prob.ids)
    m = prob.m
    model = prob.model
    failed: set = set()

    def search(t, rem, mach, first, fin, plan):
        prob.nodes += 1
        if all(r == 0 for r in rem):
            return plan
        if prob.bound(rem, t) > horizon:
            return None
        # relative completion ages matter only up to the largest delay
        cap = max(prob.delay.values(), default=0) + 1
        key = (t, rem, mach, tuple(min(t - f, cap) if f else 0 for f in fin))
        if key in failed:
            return None
        ready = [k for k in range(n) if rem[k] and all(rem[p] == 0 for p in prob.preds[k])]
        forced = {}
        if model == "C":
            for k in ready:
                if 0 < rem[k] < prob.size[k]:
                    forced[k] = mach[k]
        used = {mach[k] for k in range(n) if mach[k]}
        options = [k for k in ready if k not in forced]
        for assignment in _slot_assignments(prob, t, options, forced, rem, mach, fin, used):
            new_rem = list(rem)
            new_mach = list(mach)
            new_first = list(first)
            new_fin = list(fin)
            step = []
            for k, i in assignment.items():
                new_rem[k] -= 1
                if rem[k] == prob.size[k]:
                    new_first[k] = i
                new_mach[k] = i
                if new_rem[k] == 0:
                    new_fin[k] = t
                step.append((k, prob.size[k] - rem[k] + 1, i, t))
            res = search(t + 1, tuple(new_rem), tuple(new_mach), tuple(new_first), tuple(new_fin), plan + step)
            if res is not None:
                return res
        failed.add(key)
        return None

    start = tuple(prob.size)
    zeros = tuple([0] * n)
    return search(1, start, zeros, zeros, zeros, [])


def _slot_assignments(prob, t, options, forced, rem, mach, fin, used):
    """Yield maps job -> machine for slot ``t`` (forced continuations included)."""
    m = prob.m
    busy = set(forced.values())
    free = [i for i in range(1, m + 1) if i not in busy]
    if prob.model == "A" and not prob.delays:
        # without delays a migratory schedule may relabel machines every slot
        for size in range(min(len(options), m), -1, -1):
            for subset in itertools.combinations(options, size):
                yield {k: q + 1 for q, k in enumerate(subset)}
        return
    # the largest subsets first: they tend to reach a solution sooner
    for size in range(min(len(options), len(free)), -1, -1):
        for subset in itertools.combinations(options, size):
            yield from _place(prob, t, list(subset), free, dict(forced), rem, mach, fin, set(used))


def _place(prob, t, jobs, free, acc, rem, mach, fin, used):
    if not jobs:
        yield dict(acc)
        return
    k, rest = jobs[0], jobs[1:]
    fresh_taken = False
    for i in free:
        if prob.model in ("B", "C") and mach[k] and mach[k] != i:
            continue
        if i not in used:  # never-used machines are interchangeable
            if fresh_taken:
                continue
            fresh_taken = True
        if rem[k] == prob.size[k] and not _delay_ok(prob, k, i, t, mach, fin):
            continue
        acc[k] = i
        added = i not in used
        used.add(i)
        yield from _place(prob, t, rest, [x for x in free if x != i], acc, rem, mach, fin, used)
        if added:
            used.discard(i)
        del acc[k]


def _delay_ok(prob, k, machine, t, last_machine, fin):
    for p in prob.preds[k]:
        c = prob.delay.get((p, k), 0)
        if c and last_machine[p] != machine and t - fin[p] <= c:
            return False
    return True


# ---------------------------------------------------------------------------
# strategy 2: sequence of unit placements at earliest feasible slots
# ---------------------------------------------------------------------------

def _sequence_feasible(prob: _Problem, horizon: int):
    n = len(prob.ids)
    m = prob.m
    model = prob.model
    failed: set = set()

    def search(free, rem, mach, last, plan):
        prob.nodes += 1
        if all(r == 0 for r in rem):
            return plan
        key = (free, rem, mach, last)
        if key in failed:
            return None
        # a job needs at least rem + tail more slots after its earliest start
        for k in range(n):
            if rem[k]:
                earliest = max(last[k] + 1, min(free))
                if earliest - 1 + rem[k] + prob.tail[k] > horizon:
                    failed.add(key)
                    return None
        for k in range(n):
            if not rem[k] or any(rem[p] for p in prob.preds[k]):
                continue
            starting = rem[k] == prob.size[k]
            for i in range(1, m + 1):
                if model in ("B", "C") and mach[k] and mach[k] != i:
                    continue
                is_fresh = free[i - 1] == 1 and i not in mach
                if is_fresh:
                    if i != next(x for x in range(1, m + 1) if free[x - 1] == 1 and x not in mach):
                        continue
                slot = max(free[i - 1], last[k] + 1)
                if starting:
                    for p in prob.preds[k]:
                        c = prob.delay.get((p, k), 0)
                        gap = c + 1 if (c and mach[p] != i) else 1
                        slot = max(slot, last[p] + gap)
                length = rem[k] if model == "C" else 1
                end = slot + length - 1
                if end > horizon:
                    continue
                new_free = list(free)
                new_free[i - 1] = end + 1
                new_rem = list(rem)
                new_rem[k] -= length
                new_mach = list(mach)
                new_mach[k] = i
                new_last = list(last)
                new_last[k] = end
                done = prob.size[k] - rem[k]
                step = [(k, done + q + 1, i, slot + q) for q in range(length)]
                res = search(tuple(new_free), tuple(new_rem), tuple(new_mach), tuple(new_last), plan + step)
                if res is not None:
                    return res
        failed.add(key)
        return None

    zeros = tuple([0] * n)
    return search(tuple([1] * m), tuple(prob.size), zeros, zeros, [])


_STRATEGIES = {"slot": _slot_feasible, "sequence": _sequence_feasible}


def opt_makespan(instance: Instance, model: str = "B", with_delays: bool = False, *,
                 strategy: str = "slot", task_cap: int = DEFAULT_TASK_CAP,
                 machine_cap: int = DEFAULT_MACHINE_CAP) -> OracleResult:
    """Exact optimal makespan under model A, B or C."""
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    if strategy not in _STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if instance.total_size > task_cap or instance.machines > machine_cap:
        raise CapExceeded(
            f"oracle caps exceeded: N={instance.total_size} (cap {task_cap}), "
            f"m={instance.machines} (cap {machine_cap})"
        )
    if instance.total_size == 0:
        return OracleResult(0, Schedule({}, frozenset(), 0))
    prob = _Problem(instance, model, with_delays)
    lo = _lower_bound(instance)
    hi = _upper_bound(instance, with_delays)
    for horizon in range(lo, hi + 1):
        plan = _STRATEGIES[strategy](prob, horizon)
        if plan is not None:
            asg = {TaskRef(prob.ids[k], idx): (i, s) for k, idx, i, s in plan}
            sched = Schedule(asg, frozenset(), horizon)
            return OracleResult(sched.makespan, sched, prob.nodes, {"strategy": strategy})
    raise AssertionError("list-schedule upper bound was not reached by the exact search")


def feasible_at(instance: Instance, horizon: int, model: str = "B", with_delays: bool = False,
                strategy: str = "slot") -> Schedule | None:
    """A schedule of makespan at most ``horizon``, or None."""
    prob = _Problem(instance, model, with_delays)
    plan = _STRATEGIES[strategy](prob, horizon)
    if plan is None:
        return None
    return Schedule({TaskRef(prob.ids[k], idx): (i, s) for k, idx, i, s in plan}, frozenset(), horizon)


# ---------------------------------------------------------------------------
# single-machine minimum discard
# ---------------------------------------------------------------------------

def opt_min_discard(smi, mode: str = "partial_allowed", *, horizon_cap: int = DEFAULT_HORIZON_CAP) -> OracleResult:
    """Minimum number of unprocessed units on one machine with (r, d] windows.

    The witness is a list of ``(job, start, length)`` placements occupying
    ``(start, start + length]``.
    """
    if mode not in ("partial_allowed", "full_jobs"):
        raise ValueError(f"unknown mode {mode!r}")
    if smi.horizon > horizon_cap:
        raise CapExceeded(f"horizon {smi.horizon} exceeds cap {horizon_cap}")
    jobs = list(smi.jobs)
    n = len(jobs)
    total = sum(j.size for j in jobs)
    counter = [0]

    @lru_cache(maxsize=None)
    def best(time: int, used: int) -> int:
        """Most units processable from ``time`` on, given the used-job mask."""
        counter[0] += 1
        if time >= smi.horizon:
            return 0
        value = best(time + 1, used)
        for k, job in enumerate(jobs):
            if used >> k & 1 or job.release > time:
                continue
            lengths = range(1, job.size + 1) if mode == "partial_allowed" else (job.size,)
            for length in lengths:
                if time + length > job.deadline:
                    break
                value = max(value, length + best(time + length, used | 1 << k))
        return value

    processed = best(0, 0)
    placements = []
    time, used, need = 0, 0, processed
    while need > 0:
        if best(time + 1, used) == need:
            time += 1
            continue
        for k, job in enumerate(jobs):
            if used >> k & 1 or job.release > time:
                continue
            lengths = range(1, job.size + 1) if mode == "partial_allowed" else (job.size,)
            hit = next((L for L in lengths if time + L <= job.deadline and L + best(time + L, used | 1 << k) == need), None)
            if hit is not None:
                placements.append((job.id, time, hit))
                time, used, need = time + hit, used | 1 << k, need - hit
                break
        else:  # pragma: no cover - the memo table guarantees a choice exists
            raise AssertionError("witness reconstruction failed")
    best.cache_clear()
    return OracleResult(total - processed, tuple(placements), counter[0], {"mode": mode})


def min_discard_ilp(smi, mode: str = "partial_allowed") -> int:
    """Independent minimum-discard value from a time-indexed integer program."""
    import numpy as np
    from scipy.optimize import Bounds, LinearConstraint, milp

    cols = []
    for job in smi.jobs:
        lengths = range(1, job.size + 1) if mode == "partial_allowed" else (job.size,)
        for length in lengths:
            for start in range(job.release, job.deadline - length + 1):
                cols.append((job.id, start, length))
    if not cols:
        return sum(j.size for j in smi.jobs)
    ids = [j.id for j in smi.jobs]
    rows = []
    for jid in ids:
        rows.append([1.0 if c[0] == jid else 0.0 for c in cols])
    for unit in range(1, smi.horizon + 1):
        rows.append([1.0 if c[1] < unit <= c[1] + c[2] else 0.0 for c in cols])
    A = np.array(rows)
    gain = -np.array([float(c[2]) for c in cols])
    res = milp(gain, constraints=LinearConstraint(A, -np.inf, 1.0), integrality=np.ones(len(cols)),
               bounds=Bounds(0, 1))
    if not res.success:  # pragma: no cover
        raise RuntimeError(res.message)
    return sum(j.size for j in smi.jobs) - int(round(-res.fun))


# ---------------------------------------------------------------------------
# LP versus integral feasibility
# ---------------------------------------------------------------------------

def lp_gap_report(instance: Instance, T_range: Iterable[int], *, with_comm: bool = False) -> dict:
    """Per horizon: base-LP feasibility with/without no-migration rows and integral feasibility."""
    from .sa_lp import build_base_lp, solve_feasible, Infeasible

    if instance.total_size > DEFAULT_TASK_CAP or instance.machines > DEFAULT_MACHINE_CAP:
        raise CapExceeded("lp_gap_report respects the oracle caps")
    rows = []
    columns = ("lp_migratory", "lp_no_migration", "int_A", "int_B", "int_C")
    for T in T_range:
        row = {"T": T}
        for name, with_sibling in (("lp_migratory", False), ("lp_no_migration", True)):
            lp = build_base_lp(instance, T, with_comm=with_comm, with_no_migration=with_sibling)
            row[name] = not isinstance(solve_feasible(lp), Infeasible)
        for model in MODELS:
            row[f"int_{model}"] = feasible_at(instance, T, model, with_comm) is not None
        rows.append(row)
    first = {c: next((r["T"] for r in rows if r[c]), None) for c in columns}
    return {"rows": rows, "smallest_feasible": first}
