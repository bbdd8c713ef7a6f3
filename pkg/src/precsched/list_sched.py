"""Greedy list scheduling baselines (with and without communication delays)."""

from __future__ import annotations

from typing import Mapping, Sequence

from .core_model import Instance, TaskRef
from .schedule import Schedule


class InvalidOrder(ValueError):
    pass


def _check_order(instance: Instance, order: Sequence[str] | None) -> list[str]:
    if order is None:
        return instance.topological_jobs()
    order = [str(j) for j in order]
    if sorted(order) != sorted(instance.job_ids):
        raise InvalidOrder("priority order must be a permutation of the job ids")
    pos = {j: k for k, j in enumerate(order)}
    for a, b in instance.precedence.pairs:
        if pos[a] > pos[b]:
            raise InvalidOrder(f"{a!r} must come before its successor {b!r}")
    return order


def graham_list(instance: Instance, priority_order: Sequence[str] | None = None) -> Schedule:
    """Non-idling, non-preemptive list schedule: free machines take the best ready job."""
    return _list_schedule(instance, priority_order, with_delays=False, pinned=None)


def graham_list_comm(instance: Instance, priority_order: Sequence[str] | None = None,
                     pinned: Mapping[str, int] | None = None) -> Schedule:
    """List schedule that waits out communication delays.

    A job may start on machine ``i`` at slot ``t`` once every predecessor has
    finished, plus its delay when the predecessor ran elsewhere.  Among the
    machines that allow the earliest start the lowest index wins.  ``pinned``
    optionally forces jobs onto given machines.
    """
    return _list_schedule(instance, priority_order, with_delays=True, pinned=pinned)


def _list_schedule(instance, priority_order, with_delays, pinned) -> Schedule:
    order = _check_order(instance, priority_order)
    pinned = dict(pinned or {})
    m = instance.machines
    preds = {j: instance.precedence.predecessors(j) for j in order}
    free_at = [1] * (m + 1)          # first free slot per machine (1-based machines)
    done: dict[str, tuple[int, int]] = {}  # job -> (machine, completion slot)
    asg: dict[TaskRef, tuple] = {}
    pending = list(order)
    t = 1
    while pending:
        started = []
        for j in pending:
            if any(p not in done or done[p][1] >= t for p in preds[j]):
                continue
            candidates = [pinned[j]] if j in pinned else range(1, m + 1)
            choice = None
            for i in candidates:
                if free_at[i] > t:
                    continue
                if with_delays:
                    ready = max(
                        (done[p][1] + 1 + (0 if done[p][0] == i else instance.delay(p, j)) for p in preds[j]),
                        default=1,
                    )
                    if ready > t:
                        continue
                choice = i
                break
            if choice is None:
                continue
            size = instance.size(j)
            for k in range(size):
                asg[TaskRef(j, k + 1)] = (choice, t + k)
            free_at[choice] = t + size
            done[j] = (choice, t + size - 1)
            started.append(j)
        pending = [j for j in pending if j not in started]
        t += 1
    horizon = max((s for _, s in asg.values()), default=0)
    return Schedule(asg, frozenset(), horizon)
