"""Instances for precedence-constrained scheduling of unit-task jobs.

A job of size ``p`` is a chain of ``p`` unit tasks.  Tasks are never stored;
they are produced on demand from ``(job, index)`` pairs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Sequence


class CycleDetected(ValueError):
    """Raised when a precedence relation contains a cycle."""

    def __init__(self, cycle: Sequence[str]):
        self.cycle = list(cycle)
        super().__init__("precedence cycle: " + " -> ".join(self.cycle))


class InvalidEpsilon(ValueError):
    pass


class InstanceError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Job:
    id: str
    size: int

    def __post_init__(self):
        if not isinstance(self.size, int) or self.size < 1:
            raise InstanceError(f"job {self.id!r}: size must be a positive integer")


@dataclass(frozen=True, order=True)
class TaskRef:
    job: str
    index: int

    def __str__(self) -> str:
        return f"{self.job}#{self.index}"


@dataclass(frozen=True)
class Precedence:
    """A transitively closed, acyclic relation on job ids."""

    pairs: frozenset = frozenset()

    def __contains__(self, pair) -> bool:
        return pair in self.pairs

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(sorted(self.pairs))

    def predecessors(self, job: str) -> set[str]:
        return {a for a, b in self.pairs if b == job}

    def successors(self, job: str) -> set[str]:
        return {b for a, b in self.pairs if a == job}

    def reduction(self) -> frozenset:
        """Covering pairs only: (a, b) with no c such that a < c < b."""
        succ: dict[str, set[str]] = {}
        for a, b in self.pairs:
            succ.setdefault(a, set()).add(b)
        out = set()
        for a, b in self.pairs:
            if not any(c in succ.get(a, ()) and b in succ.get(c, ()) for c in succ.get(a, ())):
                out.add((a, b))
        return frozenset(out)


@dataclass(frozen=True)
class DelaySpec:
    default: int = 0
    overrides: Mapping[tuple, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.default < 0 or any(c < 0 for c in self.overrides.values()):
            raise InstanceError("communication delays must be nonnegative")
        object.__setattr__(self, "overrides", dict(self.overrides))

    @property
    def beta(self) -> int:
        return max([self.default, *self.overrides.values()])

    def delay(self, before: str, after: str) -> int:
        return self.overrides.get((before, after), self.default)

    def __hash__(self):
        return hash((self.default, tuple(sorted(self.overrides.items()))))


def transitive_closure(pairs: Iterable[tuple], jobs: Iterable[str]) -> Precedence:
    """Smallest transitive superset of ``pairs``; raises CycleDetected."""
    ids = sorted(set(jobs))
    known = set(ids)
    succ: dict[str, set[str]] = {j: set() for j in ids}
    for a, b in pairs:
        if a not in known or b not in known:
            raise InstanceError(f"precedence ({a!r}, {b!r}) references an undeclared job")
        if a == b:
            raise CycleDetected([a, a])
        succ[a].add(b)

    # iterative DFS for a topological order, reporting a witness cycle
    color = {j: 0 for j in ids}
    order: list[str] = []
    for root in ids:
        if color[root]:
            continue
        stack = [(root, iter(sorted(succ[root])))]
        path = [root]
        color[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = 2
                order.append(node)
                stack.pop()
                path.pop()
            elif color[nxt] == 1:
                start = path.index(nxt)
                raise CycleDetected(path[start:] + [nxt])
            elif color[nxt] == 0:
                color[nxt] = 1
                path.append(nxt)
                stack.append((nxt, iter(sorted(succ[nxt]))))

    reach: dict[str, set[str]] = {}
    for node in order:  # reverse topological: successors first
        r = set()
        for s in succ[node]:
            r.add(s)
            r |= reach[s]
        reach[node] = r
    return Precedence(frozenset((a, b) for a in ids for b in reach[a]))


def max_chain(jobs: Sequence[Job], precedence: Precedence, subset: Iterable[str] | None = None) -> int:
    """Largest total size along a precedence chain inside ``subset``."""
    sizes = {j.id: j.size for j in jobs}
    members = set(sizes) if subset is None else set(subset)
    if not members:
        return 0
    preds: dict[str, list[str]] = {j: [] for j in members}
    for a, b in precedence.pairs:
        if a in members and b in members:
            preds[b].append(a)
    best: dict[str, int] = {}
    for j in topological_order(members, precedence):
        best[j] = sizes[j] + max((best[p] for p in preds[j]), default=0)
    return max(best.values())


def topological_order(job_ids: Iterable[str], precedence: Precedence) -> list[str]:
    """Kahn's algorithm with lexicographic tie-breaking."""
    import heapq

    members = set(job_ids)
    indeg = {j: 0 for j in members}
    succ: dict[str, list[str]] = {j: [] for j in members}
    for a, b in precedence.pairs:
        if a in members and b in members:
            indeg[b] += 1
            succ[a].append(b)
    heap = [j for j, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        j = heapq.heappop(heap)
        out.append(j)
        for s in succ[j]:
            indeg[s] -= 1
            if indeg[s] == 0:
                heapq.heappush(heap, s)
    if len(out) != len(members):
        raise CycleDetected(sorted(members - set(out)))
    return out


@dataclass(frozen=True)
class Instance:
    jobs: tuple
    precedence: Precedence
    delays: DelaySpec
    machines: int

    def __post_init__(self):
        object.__setattr__(self, "jobs", tuple(sorted(self.jobs, key=lambda j: j.id)))
        if self.machines < 1:
            raise InstanceError("machine count must be at least 1")
        ids = [j.id for j in self.jobs]
        if len(set(ids)) != len(ids):
            raise InstanceError("duplicate job id")
        known = set(ids)
        for a, b in self.precedence.pairs:
            if a not in known or b not in known:
                raise InstanceError(f"precedence ({a!r}, {b!r}) references an undeclared job")
        for pair in self.delays.overrides:
            if tuple(pair) not in self.precedence.pairs:
                raise InstanceError(f"delay override on non-precedence pair {pair!r}")

    @classmethod
    def build(cls, sizes: Mapping[str, int], precedence: Iterable[tuple] = (), machines: int = 1,
              delay: int = 0, overrides: Mapping[tuple, int] | None = None) -> "Instance":
        jobs = tuple(Job(str(j), int(p)) for j, p in sizes.items())
        closed = transitive_closure(precedence, [j.id for j in jobs])
        return cls(jobs, closed, DelaySpec(delay, dict(overrides or {})), machines)

    # -- lookups ---------------------------------------------------------
    @property
    def job_ids(self) -> list[str]:
        return [j.id for j in self.jobs]

    def size(self, job: str) -> int:
        return self._sizes[job]

    @property
    def _sizes(self) -> dict:
        cache = self.__dict__.get("_size_cache")
        if cache is None:
            cache = {j.id: j.size for j in self.jobs}
            object.__setattr__(self, "_size_cache", cache)
        return cache

    @property
    def n(self) -> int:
        return len(self.jobs)

    @property
    def total_size(self) -> int:
        return sum(j.size for j in self.jobs)

    @property
    def beta(self) -> int:
        """Largest delay over precedence pairs; 0 means no delays bind."""
        return max((self.delays.delay(a, b) for a, b in self.precedence.pairs), default=0)

    def delay(self, before: str, after: str) -> int:
        return self.delays.delay(before, after)

    def tasks(self, job: str | None = None) -> Iterator[TaskRef]:
        jobs = [job] if job is not None else self.job_ids
        for j in jobs:
            for k in range(1, self.size(j) + 1):
                yield TaskRef(j, k)

    def task_precedes(self, a: TaskRef, b: TaskRef) -> bool:
        if a.job == b.job:
            return a.index < b.index
        return (a.job, b.job) in self.precedence.pairs

    def siblings(self, a: TaskRef, b: TaskRef) -> bool:
        return a.job == b.job and a.index != b.index

    def topological_jobs(self) -> list[str]:
        return topological_order(self.job_ids, self.precedence)

    def topological_tasks(self) -> list[TaskRef]:
        return [t for j in self.topological_jobs() for t in self.tasks(j)]

    def max_chain(self, subset: Iterable[str] | None = None) -> int:
        return max_chain(self.jobs, self.precedence, subset)

    def with_machines(self, machines: int) -> "Instance":
        return Instance(self.jobs, self.precedence, self.delays, machines)

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "machines": self.machines,
            "jobs": [{"id": j.id, "size": j.size} for j in self.jobs],
            "precedence": [list(p) for p in sorted(self.precedence.reduction())],
            "delays": {
                "default": self.delays.default,
                "overrides": [[a, b, c] for (a, b), c in sorted(self.delays.overrides.items())],
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Instance":
        try:
            sizes = {str(j["id"]): int(j["size"]) for j in data["jobs"]}
            delays = data.get("delays") or {}
            overrides = {(str(a), str(b)): int(c) for a, b, c in delays.get("overrides", [])}
            return cls.build(
                sizes,
                [(str(a), str(b)) for a, b in data.get("precedence", [])],
                machines=int(data["machines"]),
                delay=int(delays.get("default", 0)),
                overrides=overrides,
            )
        except (KeyError, TypeError) as exc:
            raise InstanceError(f"malformed instance: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Instance":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class NormalizationReport:
    unit: Fraction
    discarded: tuple
    total_discarded_size: int
    task_bound: Fraction
    within_task_bound: bool


def normalize_sizes(instance: Instance, epsilon) -> tuple[Instance, NormalizationReport]:
    """Round sizes down to multiples of ``eps * p_max / n``, dropping tiny jobs."""
    eps = Fraction(epsilon)
    if not (0 < eps < 1):
        raise InvalidEpsilon(f"epsilon must lie in (0, 1), got {epsilon}")
    if not instance.jobs:
        raise InstanceError("normalization needs at least one job")
    n = instance.n
    p_max = max(j.size for j in instance.jobs)
    unit = eps * p_max / n
    kept, dropped = {}, []
    for j in instance.jobs:
        if j.size < unit:
            dropped.append(j.id)
        else:
            kept[j.id] = math.floor(Fraction(j.size) / unit)
    keep = set(kept)
    pairs = [(a, b) for a, b in instance.precedence.pairs if a in keep and b in keep]
    overrides = {k: c for k, c in instance.delays.overrides.items() if k[0] in keep and k[1] in keep}
    new = Instance(
        tuple(Job(j, p) for j, p in kept.items()),
        Precedence(frozenset(pairs)),
        DelaySpec(instance.delays.default, overrides),
        instance.machines,
    )
    bound = Fraction(n * n) / eps
    report = NormalizationReport(
        unit=unit,
        discarded=tuple(dropped),
        total_discarded_size=sum(instance.size(j) for j in dropped),
        task_bound=bound,
        within_task_bound=new.total_size <= bound,
    )
    return new, report


def random_instance(seed: int, *, jobs: int = 5, machines: int = 2, max_size: int = 3,
                    edge_probability: float = 0.3, delay: int = 0, max_total: int | None = None) -> Instance:
    """Seeded random DAG instance; edges only go from lower to higher job numbers."""
    import random

    rng = random.Random(seed)
    sizes = {f"j{k}": rng.randint(1, max_size) for k in range(jobs)}
    if max_total is not None:
        while sum(sizes.values()) > max_total:
            big = max(sizes, key=lambda j: (sizes[j], j))
            if sizes[big] == 1:
                sizes.pop(big)
            else:
                sizes[big] -= 1
    ids = sorted(sizes, key=lambda j: int(j[1:]))
    pairs = [(a, b) for x, a in enumerate(ids) for b in ids[x + 1:] if rng.random() < edge_probability]
    return Instance.build(sizes, pairs, machines, delay)
