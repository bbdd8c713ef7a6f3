import random
from fractions import Fraction

import pytest

from precsched.core_model import TaskRef
from precsched.gap_lab import (
    BC_WITNESS, PlacementVar, SingleMachineInstance, WindowJob, aligned_placements, backward_solution,
    base_solution_check, build_single_machine_lp, chain_job_id, chain_reduction, check_contradiction,
    check_solution, forward_schedule, gen_model_gap_family, gen_tree_instance, sa_closed_form,
    solution_cost, verify_lifted_constraints,
)
from precsched.oracle import opt_makespan, opt_min_discard
from precsched.sa_lp import Infeasible, solve_feasible
from precsched.schedule import validate


def random_smi(rng, jobs=3, horizon=5):
    out = []
    for k in range(jobs):
        r = rng.randint(0, horizon - 1)
        d = rng.randint(r + 1, horizon)
        out.append(WindowJob(f"w{k}", rng.randint(1, 2), r, d))
    return SingleMachineInstance(tuple(out), horizon)


def random_solution(rng, smi):
    """Greedy random placements that respect windows and the single machine."""
    busy, out = set(), []
    for j in rng.sample(list(smi.jobs), len(smi.jobs)):
        length = rng.randint(0, j.size)
        starts = [s for s in range(j.release, j.deadline - length + 1)
                  if not busy & set(range(s + 1, s + length + 1))]
        if length and starts:
            s = rng.choice(starts)
            busy |= set(range(s + 1, s + length + 1))
            out.append((j.id, s, length))
    return out


def contiguous(schedule):
    by_job = {}
    for t, (_, s) in schedule.assignment.items():
        by_job.setdefault(t.job, []).append((t.index, s))
    return all(sorted(s for _, s in v) == list(range(min(s for _, s in v), min(s for _, s in v) + len(v)))
               and [s for _, s in sorted(v)] == sorted(s for _, s in v) for v in by_job.values())


class TestFamilies:
    def test_ab_two(self):
        inst = gen_model_gap_family("AB", 2)
        assert inst.machines == 2 and sorted(j.size for j in inst.jobs) == [2, 2, 2]

    def test_ab_three(self):
        inst = gen_model_gap_family("AB", 3)
        assert (opt_makespan(inst, "A").value, opt_makespan(inst, "B").value) == (4, 6)

    def test_bc_witness_ratio(self):
        inst = gen_model_gap_family("BC", 1)
        assert inst.to_dict()["jobs"] == sorted(BC_WITNESS["jobs"], key=lambda j: j["id"])
        b, c = opt_makespan(inst, "B").value, opt_makespan(inst, "C").value
        assert (b, c) == (4, 5) and Fraction(c, b) >= Fraction(5, 4)

    @pytest.mark.parametrize("which, size", [("AB", 1), ("BC", 0), ("XY", 2)])
    def test_bad_arguments(self, which, size):
        with pytest.raises(ValueError):
            gen_model_gap_family(which, size)


class TestTree:
    def test_two_levels(self):
        smi = gen_tree_instance(2)
        assert smi.horizon == 12
        assert sorted((j.size for j in smi.jobs), reverse=True) == [4, 2, 2, 1, 1, 1, 1]
        windows = {j.id: (j.release, j.deadline) for j in smi.jobs}
        assert windows["t0.1"] == (0, 12)
        assert [windows[f"t2.{k}"] for k in range(1, 5)] == [(0, 3), (3, 6), (6, 9), (9, 12)]

    def test_single_job(self):
        smi = gen_tree_instance(0)
        assert [(j.size, j.release, j.deadline) for j in smi.jobs] == [(1, 0, 1)] and smi.horizon == 1

    @pytest.mark.parametrize("L", [0, 1, 3, 7])
    def test_total_equals_horizon(self, L):
        smi = gen_tree_instance(L)
        assert smi.total_size == smi.horizon == (L + 1) * 2 ** L

    def test_warns_off_power_of_two(self):
        with pytest.warns(UserWarning):
            gen_tree_instance(2)


class TestReduction:
    def test_trivial(self):
        smi = SingleMachineInstance((WindowJob("a", 1, 0, 1),), 1)
        red = chain_reduction(smi)
        assert sorted(red.instance.job_ids) == ["a", chain_job_id(1)]
        sched = forward_schedule(red, [("a", 0, 1)])
        assert sched.makespan == 1 and solution_cost(smi, backward_solution(red, sched)) == 0

    def test_tree_zero_cost(self):
        smi = gen_tree_instance(1)
        red = chain_reduction(smi)
        sched = forward_schedule(red, [("t1.1", 0, 1), ("t0.1", 1, 2), ("t1.2", 3, 1)])
        assert sched.makespan == 4
        assert validate(sched, red.instance).valid and contiguous(sched)

    def test_precedence_rule(self):
        red = chain_reduction(gen_tree_instance(1))
        prec = red.instance.precedence
        assert ("t1.1", "t1.2") in prec and (chain_job_id(2), "t1.2") in prec
        assert ("t0.1", "t1.2") not in prec

    def test_unplaced_job_inside_processed_stretch(self):
        smi = SingleMachineInstance((WindowJob("long", 3, 0, 3), WindowJob("short", 1, 1, 2)), 3)
        red = chain_reduction(smi)
        sched = forward_schedule(red, [("long", 0, 3)])
        assert sched.makespan == 4
        assert validate(sched, red.instance).valid and contiguous(sched)
        assert sched.machine_of(TaskRef("short", 1)) == 2
        back = backward_solution(red, sched)
        assert check_solution(smi, back) == [] and solution_cost(smi, back) <= 2

    @pytest.mark.parametrize("seed", range(400))
    def test_forward_and_back(self, seed):
        rng = random.Random(seed)
        smi = random_smi(rng)
        red = chain_reduction(smi)
        sol = random_solution(rng, smi)
        cost = solution_cost(smi, sol)
        sched = forward_schedule(red, sol)
        assert validate(sched, red.instance).valid and contiguous(sched)
        assert sched.makespan <= smi.horizon + cost
        back = backward_solution(red, sched)
        assert check_solution(smi, back) == [] and solution_cost(smi, back) <= 2 * cost

    @pytest.mark.parametrize("seed", range(12))
    def test_back_conversion_of_optimal_schedules(self, seed):
        rng = random.Random(1000 + seed)
        smi = SingleMachineInstance(random_smi(rng, jobs=3, horizon=4).jobs, 4)
        red = chain_reduction(smi)
        opt = opt_makespan(red.instance, "C")
        delta_t = opt.value - smi.horizon
        back = backward_solution(red, opt.witness)
        assert check_solution(smi, back) == []
        assert solution_cost(smi, back) <= 2 * delta_t
        assert opt_min_discard(smi).value <= 2 * delta_t

    def test_invalid_solution_rejected(self):
        red = chain_reduction(gen_tree_instance(1))
        with pytest.raises(ValueError):
            forward_schedule(red, [("t1.1", 0, 1), ("t1.1", 1, 1)])


class TestSingleMachineLp:
    def test_full_placement_forced(self):
        smi = SingleMachineInstance((WindowJob("j", 2, 0, 2),), 2)
        sol = solve_feasible(build_single_machine_lp(smi, 0))
        assert sol.value({PlacementVar("j", 0, 2)}) == 1

    def test_aligned_variable_count(self):
        lp = build_single_machine_lp(gen_tree_instance(1), 0, aligned_only=True)
        assert len(lp.variables) == 3 * 2

    def test_forced_discard(self):
        smi = SingleMachineInstance((WindowJob("a", 2, 0, 2), WindowJob("b", 2, 0, 2)), 2)
        assert isinstance(solve_feasible(build_single_machine_lp(smi, 1)), Infeasible)
        assert solve_feasible(build_single_machine_lp(smi, 2))

    def test_aligned_placements(self):
        assert [(p.job, p.start) for p in aligned_placements(gen_tree_instance(1))] == [
            ("t0.1", 0), ("t0.1", 2), ("t1.1", 0), ("t1.1", 1), ("t1.2", 2), ("t1.2", 3)]

    def test_negative_budget(self):
        with pytest.raises(ValueError):
            build_single_machine_lp(gen_tree_instance(0), -1)


class TestClosedForm:
    def test_contradiction(self):
        smi = gen_tree_instance(1)
        assert not check_contradiction([PlacementVar("t0.1", 0, 2)])
        assert check_contradiction([PlacementVar("t0.1", 0, 2), PlacementVar("t0.1", 2, 2)])
        assert check_contradiction([PlacementVar.aligned(smi, "t0.1", 0), PlacementVar.aligned(smi, "t1.1", 0)])
        assert not check_contradiction([PlacementVar("t0.1", 0, 2), PlacementVar("t1.2", 2, 1)])

    def test_values(self):
        x = sa_closed_form(3, Fraction(1, 4))
        assert x([]) == 1
        assert x([PlacementVar("a", 0, 2), PlacementVar("a", 2, 2)]) == 0
        assert x([PlacementVar("a", 0, 2), PlacementVar("b", 2, 2)]) == Fraction(9, 256)

    def test_small_eps_recovers_base(self):
        x = sa_closed_form(3, Fraction(1, 10 ** 9))
        assert abs(x([PlacementVar("a", 0, 1)]) - Fraction(1, 4)) < Fraction(1, 10 ** 8)

    @pytest.mark.parametrize("eps", [0, 1, 2])
    def test_eps_range(self, eps):
        with pytest.raises(ValueError):
            sa_closed_form(3, eps)

    def test_aligned_start_checked(self):
        with pytest.raises(ValueError):
            PlacementVar.aligned(gen_tree_instance(1), "t0.1", 1)


class TestVerification:
    def test_exhaustive_small(self):
        rep = verify_lifted_constraints(3, Fraction(1, 4), 1)
        assert rep.passed and all(f.checked for f in rep.families.values())
        assert rep.preconditions == {"q_le_eps_L1": True, "q_le_L1_over_4": True}

    def test_sampled(self):
        rep = verify_lifted_constraints(7, Fraction(1, 4), 2, "sampled", seed=1, count=5000)
        assert rep.passed and sum(f.checked for f in rep.families.values()) >= 5000

    def test_precondition_breach_is_reported(self):
        rep = verify_lifted_constraints(3, Fraction(1, 4), 2, "sampled", count=2000)
        assert rep.preconditions["q_le_L1_over_4"] is False
        assert rep.to_dict()["eps_prime"] == "1/4"

    def test_base_level(self):
        assert base_solution_check(1) == {"violated": [], "cost": 0}
        assert base_solution_check(3)["cost"] == 0

    def test_bad_scope(self):
        with pytest.raises(ValueError):
            verify_lifted_constraints(3, Fraction(1, 4), 1, "partial")
