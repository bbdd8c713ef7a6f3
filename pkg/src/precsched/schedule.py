"""Schedules, validity checks and reinsertion of discarded tasks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .core_model import Instance, TaskRef

NO_DELAY = "no_delay"
DELAY = "delay"
MODES = (NO_DELAY, DELAY)


class UnknownTask(KeyError):
    pass


@dataclass(frozen=True)
class Schedule:
    assignment: Mapping[TaskRef, tuple] = field(default_factory=dict)
    discarded: frozenset = frozenset()
    horizon: int = 0

    def __post_init__(self):
        object.__setattr__(self, "assignment", dict(self.assignment))
        object.__setattr__(self, "discarded", frozenset(self.discarded))
        overlap = self.discarded & set(self.assignment)
        if overlap:
            raise ValueError(f"tasks both assigned and discarded: {sorted(overlap)}")

    def __hash__(self):
        return hash((tuple(sorted(self.assignment.items())), self.discarded, self.horizon))

    def machine_of(self, task: TaskRef) -> int:
        return self.assignment[task][0]

    def slot_of(self, task: TaskRef) -> int:
        return self.assignment[task][1]

    @property
    def makespan(self) -> int:
        return makespan(self)

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "assignments": [
                {"job": t.job, "index": t.index, "machine": m, "slot": s}
                for t, (m, s) in sorted(self.assignment.items())
            ],
            "discarded": [{"job": t.job, "index": t.index} for t in sorted(self.discarded)],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Schedule":
        assignment = {
            TaskRef(str(a["job"]), int(a["index"])): (int(a["machine"]), int(a["slot"]))
            for a in data.get("assignments", [])
        }
        discarded = {TaskRef(str(d["job"]), int(d["index"])) for d in data.get("discarded", [])}
        return cls(assignment, frozenset(discarded), int(data.get("horizon", 0)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Schedule":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Violation:
    kind: str
    tasks: tuple
    slots: tuple


@dataclass(frozen=True)
class ValidationReport:
    mode: str
    violations: tuple = ()

    @property
    def valid(self) -> bool:
        return not self.violations

    def count(self, kind: str) -> int:
        return sum(1 for v in self.violations if v.kind == kind)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "valid": self.valid,
            "violations": [
                {"kind": v.kind, "tasks": [str(t) for t in v.tasks], "slots": list(v.slots)}
                for v in self.violations
            ],
        }


def makespan(schedule: Schedule) -> int:
    return max((s for _, s in schedule.assignment.values()), default=0)


def _check_known(schedule: Schedule, instance: Instance) -> None:
    for t in list(schedule.assignment) + list(schedule.discarded):
        if t.job not in instance._sizes or not 1 <= t.index <= instance.size(t.job):
            raise UnknownTask(t)


def validate(schedule: Schedule, instance: Instance, mode: str = NO_DELAY) -> ValidationReport:
    """Check capacity, no-migration, precedence and (in delay mode) delays."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    _check_known(schedule, instance)
    out: list[Violation] = []
    asg = schedule.assignment

    seen: dict[tuple, TaskRef] = {}
    for t in sorted(asg):
        m, s = asg[t]
        if not 1 <= m <= instance.machines or s < 1:
            out.append(Violation("capacity", (t,), (s,)))
            continue
        other = seen.get((m, s))
        if other is not None:
            out.append(Violation("capacity", (other, t), (s, s)))
        else:
            seen[(m, s)] = t

    by_job: dict[str, list[TaskRef]] = {}
    for t in sorted(asg):
        by_job.setdefault(t.job, []).append(t)
    for job, ts in by_job.items():
        if len({asg[t][0] for t in ts}) > 1:
            out.append(Violation("migration", tuple(ts), tuple(asg[t][1] for t in ts)))

    for job, ts in by_job.items():
        for x in range(len(ts)):
            for y in range(x + 1, len(ts)):
                a, b = ts[x], ts[y]
                if asg[a][1] >= asg[b][1]:
                    out.append(Violation("precedence", (a, b), (asg[a][1], asg[b][1])))
    for before, after in sorted(instance.precedence.pairs):
        for a in by_job.get(before, ()):
            for b in by_job.get(after, ()):
                if asg[a][1] >= asg[b][1]:
                    out.append(Violation("precedence", (a, b), (asg[a][1], asg[b][1])))

    if mode == DELAY:
        for before, after in sorted(instance.precedence.pairs):
            last = TaskRef(before, instance.size(before))
            first = TaskRef(after, 1)
            if last in asg and first in asg and asg[last][0] != asg[first][0]:
                gap = asg[first][1] - asg[last][1]
                if gap <= instance.delay(before, after):
                    out.append(Violation("comm_delay", (last, first), (asg[last][1], asg[first][1])))
    return ValidationReport(mode, tuple(out))


def reinsertion_order(tasks: Iterable[TaskRef], instance: Instance) -> list[TaskRef]:
    """Topological order of the task precedence; ties by job id then index."""
    rank = {j: r for r, j in enumerate(instance.topological_jobs())}
    return sorted(tasks, key=lambda t: (rank[t.job], t.job, t.index))


def reinsert_discarded(schedule: Schedule, instance: Instance, mode: str = NO_DELAY) -> Schedule:
    """Give every discarded task a private block of fresh slots.

    Each task gets one new slot (no-delay) or ``2*beta + 1`` new slots
    (delay).  The block opens right after the latest assigned predecessor;
    everything from that slot on moves right.  Inside the block the task sits
    in the middle, or at the block's end when nothing follows the block, so
    every insertion raises the makespan by exactly the block width.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if not schedule.discarded:
        return schedule
    _check_known(schedule, instance)
    beta = instance.beta if mode == DELAY else 0
    width = 2 * beta + 1
    asg = dict(schedule.assignment)
    horizon = schedule.horizon
    for task in reinsertion_order(schedule.discarded, instance):
        pred_slots = [s for t, (_, s) in asg.items() if instance.task_precedes(t, task)]
        start = max(pred_slots, default=0) + 1
        machines = {m for t, (m, _) in asg.items() if t.job == task.job}
        machine = min(machines) if machines else 1
        appended = start > makespan(Schedule(asg))
        asg = {t: (m, s + width if s >= start else s) for t, (m, s) in asg.items()}
        asg[task] = (machine, start + (2 * beta if appended else beta))
        horizon += width
    return Schedule(asg, frozenset(), max(horizon, makespan(Schedule(asg))))
