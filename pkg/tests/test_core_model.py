import itertools
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from precsched.core_model import (
    CycleDetected, Instance, InstanceError, InvalidEpsilon, Job, TaskRef,
    max_chain, normalize_sizes, random_instance, topological_order, transitive_closure,
)


def reachability(pairs, nodes):
    """All-pairs reachability by repeated squaring of the boolean adjacency matrix."""
    idx = {v: k for k, v in enumerate(nodes)}
    n = len(nodes)
    reach = [[False] * n for _ in range(n)]
    for a, b in pairs:
        reach[idx[a]][idx[b]] = True
    for _ in range(max(1, n.bit_length())):
        reach = [[reach[i][j] or any(reach[i][k] and reach[k][j] for k in range(n)) for j in range(n)]
                 for i in range(n)]
    return {(nodes[i], nodes[j]) for i in range(n) for j in range(n) if reach[i][j]}


def random_dag(seed, n=8, p=0.3):
    rng = random.Random(seed)
    nodes = [f"v{k}" for k in range(n)]
    return nodes, [(nodes[a], nodes[b]) for a in range(n) for b in range(a + 1, n) if rng.random() < p]


class TestTransitiveClosure:
    def test_two_step_chain(self):
        closed = transitive_closure([("a", "b"), ("b", "c")], "abc")
        assert closed.pairs == {("a", "b"), ("b", "c"), ("a", "c")}

    def test_empty(self):
        assert transitive_closure([], "ab").pairs == frozenset()

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_reachability_oracle(self, seed):
        nodes, pairs = random_dag(seed)
        assert transitive_closure(pairs, nodes).pairs == reachability(pairs, nodes)

    def test_cycle_reports_witness(self):
        with pytest.raises(CycleDetected) as err:
            transitive_closure([("a", "b"), ("b", "c"), ("c", "a")], "abc")
        cyc = err.value.cycle
        assert cyc[0] == cyc[-1] and set(cyc) == {"a", "b", "c"}

    def test_self_loop(self):
        with pytest.raises(CycleDetected):
            transitive_closure([("a", "a")], "a")

    def test_unknown_job(self):
        with pytest.raises(InstanceError):
            transitive_closure([("a", "z")], "a")

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_idempotent(self, seed):
        nodes, pairs = random_dag(seed, n=6)
        once = transitive_closure(pairs, nodes)
        assert transitive_closure(once.pairs, nodes) == once

    def test_reduction_regenerates_closure(self):
        nodes, pairs = random_dag(3)
        closed = transitive_closure(pairs, nodes)
        assert transitive_closure(closed.reduction(), nodes) == closed


class TestMaxChain:
    def test_chain_sums_sizes(self):
        inst = Instance.build({"a": 2, "b": 3, "c": 4}, [("a", "b"), ("b", "c")])
        assert inst.max_chain() == 9

    def test_antichain_is_largest_job(self):
        assert Instance.build({"a": 5, "b": 1, "c": 2}).max_chain() == 5

    def test_subset(self):
        inst = Instance.build({"a": 2, "b": 3, "c": 4}, [("a", "b"), ("b", "c")])
        assert inst.max_chain({"a", "c"}) == 6
        assert max_chain(inst.jobs, inst.precedence, []) == 0

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_chain_enumeration(self, seed):
        inst = random_instance(seed, jobs=10, max_size=5, edge_probability=0.35)
        ids = inst.job_ids
        best = 0
        # every chain is a subset that is totally ordered by the precedence
        for r in range(1, len(ids) + 1):
            for combo in itertools.combinations(ids, r):
                if all((a, b) in inst.precedence or (b, a) in inst.precedence
                       for a, b in itertools.combinations(combo, 2)):
                    best = max(best, sum(inst.size(j) for j in combo))
        assert inst.max_chain() == best


class TestNormalization:
    def test_rational_unit_and_discard(self):
        inst = Instance.build({"a": 100, "b": 40, "c": 7})
        new, rep = normalize_sizes(inst, Fraction(1, 2))
        assert rep.unit == Fraction(50, 3)
        assert rep.discarded == ("c",)
        assert {j.id: j.size for j in new.jobs} == {"a": 6, "b": 2}
        assert rep.total_discarded_size == 7

    def test_equal_sizes(self):
        new, rep = normalize_sizes(Instance.build({"a": 4, "b": 4, "c": 4}), "1/2")
        assert rep.discarded == ()
        assert len({j.size for j in new.jobs}) == 1

    def test_single_job(self):
        new, _ = normalize_sizes(Instance.build({"a": 13}), Fraction(1, 3))
        assert new.jobs[0].size == 3  # floor(n / eps) with n = 1

    @pytest.mark.parametrize("eps", [0, 1, Fraction(3, 2), -1])
    def test_bad_epsilon(self, eps):
        with pytest.raises(InvalidEpsilon):
            normalize_sizes(Instance.build({"a": 1}), eps)

    def test_precedence_restricted_to_kept_jobs(self):
        inst = Instance.build({"a": 100, "b": 1, "c": 50}, [("a", "b"), ("b", "c")])
        new, rep = normalize_sizes(inst, Fraction(1, 2))
        assert rep.discarded == ("b",)
        assert ("a", "c") in new.precedence

    @given(st.integers(0, 10_000), st.sampled_from([Fraction(1, 4), Fraction(1, 2), Fraction(9, 10)]))
    @settings(max_examples=50, deadline=None)
    def test_task_bound(self, seed, eps):
        inst = random_instance(seed, jobs=6, max_size=50)
        new, rep = normalize_sizes(inst, eps)
        assert rep.within_task_bound and new.total_size <= inst.n ** 2 / eps


class TestInstance:
    def test_tasks_and_precedence(self):
        inst = Instance.build({"a": 2, "b": 1}, [("a", "b")])
        assert list(inst.tasks()) == [TaskRef("a", 1), TaskRef("a", 2), TaskRef("b", 1)]
        assert inst.task_precedes(TaskRef("a", 1), TaskRef("a", 2))
        assert inst.task_precedes(TaskRef("a", 2), TaskRef("b", 1))
        assert not inst.task_precedes(TaskRef("b", 1), TaskRef("a", 1))

    def test_beta_uses_overrides(self):
        inst = Instance.build({"a": 1, "b": 1, "c": 1}, [("a", "b"), ("b", "c")], delay=1,
                              overrides={("a", "c"): 3})
        assert inst.beta == 3 and inst.delay("a", "b") == 1

    def test_json_round_trip(self):
        inst = random_instance(4, delay=2)
        assert Instance.from_json(inst.to_json()) == inst

    @pytest.mark.parametrize("bad", [
        {"machines": 0, "jobs": [{"id": "a", "size": 1}]},
        {"machines": 1, "jobs": [{"id": "a", "size": 0}]},
        {"machines": 1, "jobs": [{"id": "a", "size": 1}], "precedence": [["a", "b"]]},
        {"jobs": []},
    ])
    def test_malformed(self, bad):
        with pytest.raises(InstanceError):
            Instance.from_dict(bad)

    def test_duplicate_job(self):
        with pytest.raises(InstanceError):
            Instance((Job("a", 1), Job("a", 2)), transitive_closure([], ["a"]), Instance.build({}).delays, 1)

    def test_topological_order_respects_precedence(self):
        inst = random_instance(11, jobs=8)
        order = topological_order(inst.job_ids, inst.precedence)
        pos = {j: k for k, j in enumerate(order)}
        assert all(pos[a] < pos[b] for a, b in inst.precedence.pairs)

    def test_random_instance_is_seeded(self):
        assert random_instance(7) == random_instance(7)
        assert random_instance(7, max_total=4).total_size <= 4
