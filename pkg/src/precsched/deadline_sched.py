"""Deadline scheduling with precedence on machines with 0/1 capacity profiles.

Jobs are dispatched earliest-deadline-first and each goes to the machine on
which it completes earliest.  Tasks that do not fit before the deadline are
discarded.  The ``*_comm`` variant keeps the first and last slot of every
active interval empty, which enforces unit communication delays.

Windows are inclusive slot ranges ``[release, deadline]``.  The horizon is
split into ``intervals`` equal blocks; a release is the first slot of a
block and a deadline the last slot of a block.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .core_model import Instance, InstanceError, Job, Precedence, TaskRef, transitive_closure, max_chain, topological_order
from .schedule import DELAY, NO_DELAY, Schedule, validate

DISCARDED = "DISCARDED"


class TraceMismatch(ValueError):
    pass


@dataclass(frozen=True)
class DeadlineJob:
    id: str
    size: int
    release: int
    deadline: int


@dataclass(frozen=True)
class DeadlineInstance:
    jobs: tuple
    precedence: Precedence
    horizon: int
    intervals: int
    machines: int
    capacity: tuple  # capacity[i-1][t-1] in {0, 1}
    beta: int = 1

    def __post_init__(self):
        object.__setattr__(self, "jobs", tuple(sorted(self.jobs, key=lambda j: j.id)))
        object.__setattr__(self, "capacity", tuple(tuple(int(c) for c in row) for row in self.capacity))
        if self.intervals < 1 or self.horizon % self.intervals:
            raise InstanceError("horizon must split into equal intervals")
        if len(self.capacity) != self.machines or any(len(r) != self.horizon for r in self.capacity):
            raise InstanceError("capacity must be a machines x horizon 0/1 matrix")
        if any(c not in (0, 1) for r in self.capacity for c in r):
            raise InstanceError("capacities must be 0 or 1")
        width = self.interval_length
        ids = {j.id for j in self.jobs}
        if len(ids) != len(self.jobs):
            raise InstanceError("duplicate job id")
        for j in self.jobs:
            if j.size < 1:
                raise InstanceError(f"job {j.id!r}: size must be positive")
            if (j.release - 1) % width or j.deadline % width or not 1 <= j.release <= j.deadline <= self.horizon:
                raise InstanceError(f"job {j.id!r}: window must align with interval boundaries")
        by_id = self.by_id
        for a, b in self.precedence.pairs:
            if a not in ids or b not in ids:
                raise InstanceError(f"precedence ({a!r}, {b!r}) references an undeclared job")
            if by_id[a].release > by_id[b].release or by_id[a].deadline > by_id[b].deadline:
                raise InstanceError(f"precedence ({a!r}, {b!r}) is not monotone in the windows")

    @property
    def by_id(self) -> dict:
        return {j.id: j for j in self.jobs}

    @property
    def interval_length(self) -> int:
        return self.horizon // self.intervals

    def interval_of(self, slot: int) -> int:
        return (slot - 1) // self.interval_length + 1

    def interval_bounds(self, q: int) -> tuple[int, int]:
        w = self.interval_length
        return (q - 1) * w + 1, q * w

    def max_chain(self) -> int:
        return max_chain([Job(j.id, j.size) for j in self.jobs], self.precedence)

    def to_instance(self, delay: int = 0) -> Instance:
        return Instance.build({j.id: j.size for j in self.jobs}, self.precedence.pairs, self.machines, delay)

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "intervals": self.intervals,
            "machines": self.machines,
            "capacity": [list(r) for r in self.capacity],
            "jobs": [{"id": j.id, "size": j.size, "release": j.release, "deadline": j.deadline} for j in self.jobs],
            "precedence": [list(p) for p in sorted(self.precedence.reduction())],
            "beta": self.beta,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "DeadlineInstance":
        try:
            jobs = tuple(DeadlineJob(str(j["id"]), int(j["size"]), int(j["release"]), int(j["deadline"]))
                         for j in data["jobs"])
            prec = transitive_closure([(str(a), str(b)) for a, b in data.get("precedence", [])],
                                      [j.id for j in jobs])
            return cls(jobs, prec, int(data["horizon"]), int(data["intervals"]), int(data["machines"]),
                       tuple(tuple(r) for r in data["capacity"]), int(data.get("beta", 1)))
        except (KeyError, TypeError) as exc:
            raise InstanceError(f"malformed deadline instance: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DeadlineInstance":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class JobRecord:
    begin: object  # slot or DISCARDED
    completion: int
    machine: int | None
    scheduled: int
    discarded: int

    @property
    def fully_discarded(self) -> bool:
        return self.begin == DISCARDED


@dataclass(frozen=True)
class RunTrace:
    mode: str
    records: Mapping[str, JobRecord]
    schedule: Schedule
    order: tuple = ()

    @property
    def discarded(self) -> frozenset:
        return self.schedule.discarded

    @property
    def total_discarded(self) -> int:
        return len(self.schedule.discarded)


def dispatch_order(instance: DeadlineInstance) -> list[str]:
    """Nondecreasing deadline; equal deadlines follow the id-smallest topological order."""
    rank = {j: k for k, j in enumerate(topological_order([j.id for j in instance.jobs], instance.precedence))}
    return sorted((j.id for j in instance.jobs), key=lambda j: (instance.by_id[j].deadline, rank[j]))


def edf_ect(instance: DeadlineInstance) -> RunTrace:
    return _run(instance, comm=False)


def edf_ect_comm(instance: DeadlineInstance) -> RunTrace:
    return _run(instance, comm=True)


def _run(instance: DeadlineInstance, comm: bool) -> RunTrace:
    m = instance.machines
    free = [[False] + [bool(c) for c in row] for row in instance.capacity]  # free[i-1][t]
    by_id = instance.by_id
    preds = {j.id: instance.precedence.predecessors(j.id) for j in instance.jobs}
    records: dict[str, JobRecord] = {}
    asg: dict[TaskRef, tuple] = {}
    discarded: set[TaskRef] = set()
    order = dispatch_order(instance)

    def free_slots(i: int, lo: int, hi: int) -> list[int]:
        return [t for t in range(max(lo, 1), min(hi, instance.horizon) + 1) if free[i - 1][t]]

    for jid in order:
        job = by_id[jid]
        ready = max((records[p].completion for p in preds[jid]), default=0) + 1
        begin = None
        for t in range(max(job.release, ready), job.deadline + 1):
            if any(free[i][t] for i in range(m)):
                begin = t
                break
        if begin is None:
            records[jid] = JobRecord(DISCARDED, job.deadline, None, 0, job.size)
            discarded.update(TaskRef(jid, k) for k in range(1, job.size + 1))
            continue
        lo, hi = (begin + 1, job.deadline - 1) if comm else (begin, job.deadline)
        slots = {i: free_slots(i, lo, hi) for i in range(1, m + 1)}
        full = [(slots[i][job.size - 1], i) for i in range(1, m + 1) if len(slots[i]) >= job.size]
        if full:
            finish, machine = min(full)
            used = slots[machine][: job.size]
            completion = finish + 1 if comm else finish
        else:
            machine = min(range(1, m + 1), key=lambda i: (-len(slots[i]), i))
            used = slots[machine]
            completion = job.deadline
        for k, t in enumerate(used, start=1):
            asg[TaskRef(jid, k)] = (machine, t)
            free[machine - 1][t] = False
        for k in range(len(used) + 1, job.size + 1):
            discarded.add(TaskRef(jid, k))
        records[jid] = JobRecord(begin, completion, machine, len(used), job.size - len(used))
        if comm:
            assert all(t not in (begin, completion) for t in used), "task placed on an active-interval endpoint"
    schedule = Schedule(asg, frozenset(discarded), instance.horizon)
    return RunTrace("comm" if comm else NO_DELAY, records, schedule, tuple(order))


def discard_bound(instance: DeadlineInstance, comm: bool = False) -> int:
    """2 p^2 m Delta(J), or 6 p^2 m Delta(J) for the communication variant."""
    factor = 6 if comm else 2
    return factor * instance.intervals ** 2 * instance.machines * instance.max_chain()


def validate_trace(trace: RunTrace, instance: DeadlineInstance):
    """Validate the schedule (unit delays in comm mode) plus window and capacity use."""
    comm = trace.mode == "comm"
    report = validate(trace.schedule, instance.to_instance(1 if comm else 0), DELAY if comm else NO_DELAY)
    problems = [v.kind for v in report.violations]
    by_id = instance.by_id
    for task, (i, t) in trace.schedule.assignment.items():
        job = by_id[task.job]
        if not job.release <= t <= job.deadline:
            problems.append(f"window:{task}")
        if not instance.capacity[i - 1][t - 1]:
            problems.append(f"no-capacity:{task}")
    return problems


# ---------------------------------------------------------------------------
# idle-slot audit
# ---------------------------------------------------------------------------

@dataclass
class AuditReport:
    mode: str
    checks: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"mode": self.mode, "ok": self.ok, "checks": dict(self.checks),
                "violations": list(self.violations), "notes": list(self.notes)}


def idle_audit(trace: RunTrace, instance: DeadlineInstance, mode: str | None = None) -> AuditReport:
    """Count idle slots and check them against the per-job and per-interval bounds.

    Idle means: capacity 1 and no task placed.  Checked statements:

    * per job: idle slots of any other machine inside the active interval are
      at most the job's scheduled task count (plus 2 in comm mode);
    * per sub-interval of a block with a witness job that is released, not
      yet begun and not past its deadline: at most Delta idle slots per
      machine (3 Delta in comm mode); with a witness that lost any task:
      2 Delta (6 Delta);
    * per idle slot with a waiting witness: some predecessor of the witness
      is active there (and, without delays, on a different machine).
    """
    mode = mode or trace.mode
    comm = mode == "comm"
    if set(trace.records) != {j.id for j in instance.jobs}:
        raise TraceMismatch("trace does not cover exactly the instance's jobs")
    for task in trace.schedule.assignment:
        if task.job not in trace.records:
            raise TraceMismatch(f"unknown task {task}")
    report = AuditReport(mode)
    report.notes.append("fully discarded jobs are taken to complete at their deadline")
    if not instance.jobs:
        return report
    m, T = instance.machines, instance.horizon
    used = {(i, t) for i, t in trace.schedule.assignment.values()}
    idle = [[0] * (T + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        for t in range(1, T + 1):
            idle[i][t] = int(instance.capacity[i - 1][t - 1] == 1 and (i, t) not in used)
    prefix = [[0] * (T + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        for t in range(1, T + 1):
            prefix[i][t] = prefix[i][t - 1] + idle[i][t]

    def count(i, a, b):
        if a > b:
            return 0
        return prefix[i][min(b, T)] - prefix[i][max(a, 1) - 1]

    slack = 2 if comm else 0
    checked = 0
    for jid, rec in sorted(trace.records.items()):
        if rec.fully_discarded:
            continue
        for i in range(1, m + 1):
            if i == rec.machine:
                continue
            checked += 1
            got = count(i, rec.begin, rec.completion)
            if got > rec.scheduled + slack:
                report.violations.append({"check": "active_interval", "job": jid, "machine": i,
                                          "idle": got, "bound": rec.scheduled + slack})
    report.checks["active_interval"] = checked

    delta = instance.max_chain()
    plain, partial = (3 * delta, 6 * delta) if comm else (delta, 2 * delta)
    by_id = instance.by_id
    checked = 0
    for q in range(1, instance.intervals + 1):
        lo, hi = instance.interval_bounds(q)
        for a in range(lo, hi + 1):
            for b in range(a, hi + 1):
                waiting = lost = False
                for jid, rec in trace.records.items():
                    job = by_id[jid]
                    if not (job.release <= a and b <= job.deadline):
                        continue
                    if rec.fully_discarded or rec.begin > b:
                        waiting = True
                    if rec.discarded:
                        lost = True
                if not (waiting or lost):
                    continue
                bound = plain if waiting else partial
                for i in range(1, m + 1):
                    checked += 1
                    got = count(i, a, b)
                    if got > bound:
                        report.violations.append({"check": "interval", "interval": [a, b], "machine": i,
                                                  "idle": got, "bound": bound})
    report.checks["interval"] = checked

    checked = 0
    preds = {j.id: instance.precedence.predecessors(j.id) for j in instance.jobs}
    for i in range(1, m + 1):
        for t in range(1, T + 1):
            if not idle[i][t]:
                continue
            for jid, rec in trace.records.items():
                job = by_id[jid]
                if not job.release <= t <= job.deadline:
                    continue
                if not (rec.fully_discarded or rec.begin > t):
                    continue
                checked += 1
                active = [p for p in preds[jid] if not trace.records[p].fully_discarded
                          and trace.records[p].begin <= t <= trace.records[p].completion]
                if not active:
                    report.violations.append({"check": "blocking_predecessor", "slot": t, "machine": i, "job": jid})
                elif not comm and all(trace.records[p].machine == i for p in active):
                    report.violations.append({"check": "blocking_machine", "slot": t, "machine": i, "job": jid})
    report.checks["blocking_predecessor"] = checked
    return report


# ---------------------------------------------------------------------------
# witness-first generator
# ---------------------------------------------------------------------------

def witness_first_instance(seed: int, *, max_intervals: int = 4, max_machines: int = 3, max_tasks: int = 30,
                           max_interval_length: int = 6, capacity_density: float = 0.8,
                           edge_probability: float = 0.35) -> tuple[DeadlineInstance, dict]:
    """Random instance built around a full window-respecting placement of all tasks.

    The placement (returned alongside) may migrate jobs and ignore precedence;
    it only proves that every task fits into free capacity inside its window.
    """
    rng = random.Random(seed)
    p = rng.randint(1, max_intervals)
    m = rng.randint(1, max_machines)
    width = rng.randint(1, max_interval_length)
    T = p * width
    capacity = [[1 if rng.random() < capacity_density else 0 for _ in range(T)] for _ in range(m)]
    open_slots = {(i, t) for i in range(1, m + 1) for t in range(1, T + 1) if capacity[i - 1][t - 1]}
    jobs: list[DeadlineJob] = []
    witness: dict = {}
    budget = rng.randint(1, max_tasks)
    attempts = 0
    while budget > 0 and open_slots and attempts < 4 * max_tasks:
        attempts += 1
        qa = rng.randint(1, p)
        qb = rng.randint(qa, p)
        release, deadline = (qa - 1) * width + 1, qb * width
        room = sorted(s for s in open_slots if release <= s[1] <= deadline)
        if not room:
            continue
        size = rng.randint(1, min(len(room), budget, 2 * width))
        chosen = rng.sample(room, size)
        jid = f"j{len(jobs):02d}"
        jobs.append(DeadlineJob(jid, size, release, deadline))
        for k, slot in enumerate(sorted(chosen, key=lambda s: (s[1], s[0])), start=1):
            witness[TaskRef(jid, k)] = slot
            open_slots.discard(slot)
        budget -= size
    ordered = sorted(jobs, key=lambda j: (j.release, j.deadline, j.id))
    pairs = []
    for x in range(len(ordered)):
        for y in range(x + 1, len(ordered)):
            a, b = ordered[x], ordered[y]
            if a.release <= b.release and a.deadline <= b.deadline and rng.random() < edge_probability:
                pairs.append((a.id, b.id))
    prec = transitive_closure(pairs, [j.id for j in jobs])
    inst = DeadlineInstance(tuple(jobs), prec, T, p, m, tuple(tuple(r) for r in capacity))
    return inst, witness


def random_batch(count: int, seed: int = 0, **kwargs) -> list[DeadlineInstance]:
    return [witness_first_instance(seed * 100_003 + k, **kwargs)[0] for k in range(count)]
