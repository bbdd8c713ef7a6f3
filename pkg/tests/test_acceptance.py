"""Acceptance suite: one PASS/FAIL line per criterion, with its time limit.

Each test prints its verdict line straight to the terminal (so it shows up
under ``pytest -v`` without ``-s``) and then asserts on the same verdict.
"""

import itertools
import random
import time
from fractions import Fraction

import pytest

from precsched.core_model import Instance, random_instance
from precsched.deadline_sched import (
    discard_bound, edf_ect, edf_ect_comm, idle_audit, random_batch, validate_trace,
)
from precsched.gap_lab import (
    SingleMachineInstance, WindowJob, backward_solution, chain_reduction, check_solution, forward_schedule,
    gen_model_gap_family, gen_tree_instance, solution_cost, verify_lifted_constraints,
)
from precsched.hierarchy_sched import HierarchyParams, run_full, smallest_horizon
from precsched.oracle import min_discard_ilp, opt_makespan, opt_min_discard, feasible_at, witness_is_valid
from precsched.sa_lp import (
    Constraint, Infeasible, LinearProgram, LiftedSolution, build_base_lp, sa_lift, solve_feasible,
)
from precsched.schedule import DELAY, NO_DELAY, makespan, validate

F = Fraction


def verdict(capsys, number, title, ok, elapsed, limit, detail=""):
    passed = bool(ok) and elapsed < limit
    line = f"[criterion {number:2d}] {'PASS' if passed else 'FAIL'}  {title}  ({elapsed:.2f}s, limit {limit}s)"
    if detail:
        line += f"  {detail}"
    with capsys.disabled():
        print("\n" + line)
    assert ok, detail
    assert elapsed < limit, f"took {elapsed:.2f}s, limit {limit}s"


def sub_line(capsys, text):
    with capsys.disabled():
        print(f"    {text}")


# ---------------------------------------------------------------------------
# 1, 2: model gaps
# ---------------------------------------------------------------------------

def test_criterion_01_model_gap_table(capsys):
    start = time.perf_counter()
    rows = []
    for m in (2, 3):
        inst = gen_model_gap_family("AB", m)
        a, b = opt_makespan(inst, "A").value, opt_makespan(inst, "B").value
        rows.append((m, a, b))
    ok = rows[0][1:] == (3, 4) and all((a, b) == (m + 1, 2 * m) for m, a, b in rows)
    detail = "; ".join(f"m={m}: A={a} B={b}" for m, a, b in rows)
    verdict(capsys, 1, "model-gap table A=m+1, B=2m", ok, time.perf_counter() - start, 5, detail)


def test_criterion_02_bc_witness(capsys):
    start = time.perf_counter()
    inst = gen_model_gap_family("BC", 1)
    b, c = opt_makespan(inst, "B"), opt_makespan(inst, "C")
    ok = (Fraction(c.value, b.value) >= Fraction(5, 4)
          and witness_is_valid(b, inst, "B", False) and witness_is_valid(c, inst, "C", False))
    verdict(capsys, 2, "BC witness OPT_C/OPT_B >= 5/4", ok, time.perf_counter() - start, 30,
            f"B={b.value} C={c.value} ratio={Fraction(c.value, b.value)}")


# ---------------------------------------------------------------------------
# 3, 4: EDF+ECT on witness-first batches
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def deadline_batch():
    return random_batch(200, seed=0)


def _within_caps(inst):
    return inst.intervals <= 4 and inst.machines <= 3 and sum(j.size for j in inst.jobs) <= 30


@pytest.mark.parametrize("comm", [False, True], ids=["plain", "comm"])
def test_criterion_03_edf_discard_bound(capsys, deadline_batch, comm):
    run = edf_ect_comm if comm else edf_ect
    start = time.perf_counter()
    bad = []
    worst = Fraction(0)
    for k, inst in enumerate(deadline_batch):
        trace = run(inst)
        bound = discard_bound(inst, comm)
        problems = validate_trace(trace, inst)
        if problems or trace.total_discarded > bound or not _within_caps(inst):
            bad.append(k)
        if bound:
            worst = max(worst, Fraction(trace.total_discarded, bound))
    factor = "6" if comm else "2"
    verdict(capsys, 3, f"EDF+ECT{' comm' if comm else ''} discards <= {factor}p^2 m Delta, valid (200 instances)",
            not bad, time.perf_counter() - start, 10,
            f"failing={bad[:5]} worst discarded/bound={worst}")


def test_criterion_04_idle_audits(capsys, deadline_batch):
    start = time.perf_counter()
    failures = {"plain": 0, "comm": 0}
    checks = {"plain": 0, "comm": 0}
    for inst in deadline_batch:
        for name, run in (("plain", edf_ect), ("comm", edf_ect_comm)):
            report = idle_audit(run(inst), inst)
            checks[name] += sum(report.checks.values())
            failures[name] += len(report.violations)
    verdict(capsys, 4, "idle-slot audits, both variants", not any(failures.values()),
            time.perf_counter() - start, 60, f"checks={checks} violations={failures}")


# ---------------------------------------------------------------------------
# 5: conditioning semantics
# ---------------------------------------------------------------------------

def _packing_lp(rng, n):
    names = tuple(f"x{k}" for k in range(n))
    rows = []
    for _ in range(rng.randint(1, 3)):
        sub = rng.sample(names, rng.randint(2, n))
        rows.append(Constraint.of({v: rng.randint(1, 2) for v in sub}, "<=", rng.randint(1, 2)))
    rows.append(Constraint.of({v: 1 for v in names}, ">=", 1))
    return LinearProgram(names, tuple(rows))


def _integral_points(lp):
    out = []
    for bits in itertools.product((0, 1), repeat=len(lp.variables)):
        values = dict(zip(lp.variables, bits))
        if not lp.violated(values):
            out.append(frozenset(v for v, b in values.items() if b))
    return out


def _with_forced(lifted, event, mass):
    row = Constraint.of({frozenset({event}): 1}, "=", mass, "forced")
    return LinearProgram(lifted.variables, lifted.constraints + (row,), lifted.name, lifted.level,
                         lifted.base, lifted.bounds_implied)


def _mobius(sol, universe):
    """Atom probabilities P[point == A] recovered from full-level moments."""
    out = {}
    for r in range(len(universe) + 1):
        for A in itertools.combinations(universe, r):
            A = frozenset(A)
            rest = [v for v in universe if v not in A]
            p = sum((-1) ** k * sol.value(A | set(B))
                    for k in range(len(rest) + 1) for B in itertools.combinations(rest, k))
            if p:
                out[A] = p
    return out


def _conditioned_distribution(points, weights, event):
    kept = [(w, p) for w, p in zip(weights, points) if event in p]
    mass = sum(w for w, _ in kept)
    return [p for _, p in kept], [w / mass for w, _ in kept]


def _semantics_problems(sol, base_lp, lifted):
    """Observation checks for one lifted solution; returns a list of problems."""
    problems = [f"lifted row {c.label}" for c in lifted.violated(sol.values)]
    problems += sol.invariant_violations()
    lower = sa_lift(base_lp, sol.level - 1) if sol.level > 1 else None
    for event, mass in sorted(sol.singletons().items(), key=lambda kv: repr(kv[0])):
        cond = sol.condition(event)
        if cond.value({event}) != 1:
            problems.append(f"x'_e != 1 for {event}")
        for other in base_lp.variables:
            before = sol.value({other})
            if before in (0, 1) and cond.value({other}) != before:
                problems.append(f"{other} not persistent under {event}")
        problems += [f"after {event}: {p}" for p in cond.invariant_violations()]
        if lower is not None:
            problems += [f"after {event}: row {c.label}" for c in lower.violated(cond.values)]
    return problems


def _distribution_problems(sol, points, weights, universe):
    """The solution must equal the moments of (points, weights), also after conditioning."""
    problems = []
    moments = LiftedSolution.from_distribution(points, weights, sol.level, universe)
    if moments.values != sol.values:
        problems.append("moments differ from the solution")
    for event in sorted(sol.singletons(), key=repr):
        if sol.level < 2:
            break
        cpts, cws = _conditioned_distribution(points, weights, event)
        cond_moments = LiftedSolution.from_distribution(cpts, cws, sol.level - 1, universe)
        if cond_moments.values != sol.condition(event).values:
            problems.append(f"conditioning on {event} does not commute")
    return problems


def _vertex_cases(rng, count):
    """Level-3 vertices of three-variable packing LPs, many forced fractional."""
    cases = []
    while len(cases) < count:
        lp = _packing_lp(rng, 3)
        lifted = sa_lift(lp, 3)
        event = rng.choice(lp.variables)
        sol = solve_feasible(_with_forced(lifted, event, F(1, rng.randint(2, 3))))
        if isinstance(sol, Infeasible):
            sol = solve_feasible(lifted)
        if isinstance(sol, Infeasible):
            continue
        cases.append((lp, lifted, sol))
    return cases


def _distribution_cases(rng, count):
    """Explicit convex combinations of integral points of 4-5 variable packing LPs."""
    cases = []
    while len(cases) < count:
        lp = _packing_lp(rng, rng.randint(4, 5))
        points = _integral_points(lp)
        if len(points) < 2:
            continue
        chosen = rng.sample(points, rng.randint(2, min(4, len(points))))
        raw = [rng.randint(1, 6) for _ in chosen]
        weights = [F(w, sum(raw)) for w in raw]
        level = rng.randint(2, 3)
        sol = LiftedSolution.from_distribution(chosen, weights, level, lp.variables)
        cases.append((lp, sa_lift(lp, level), sol, chosen, weights))
    return cases


SCHEDULING_LPS = [
    (Instance.build({"a": 2}, machines=2), 2),
    (Instance.build({"a": 1, "b": 1}, [("a", "b")], machines=1), 3),
]


def _scheduling_cases(count):
    """Level-3 vertices of tiny scheduling LPs, with a forced fractional event where possible."""
    cases = []
    for inst, T in SCHEDULING_LPS:
        for comm in (False, True):
            lp = build_base_lp(inst, T, with_comm=comm)
            lifted = sa_lift(lp, 3)
            seen = set()
            for event in (None,) + lp.variables:
                problem = lifted if event is None else _with_forced(lifted, event, F(1, 2))
                sol = solve_feasible(problem)
                if isinstance(sol, Infeasible):
                    continue
                key = tuple(sorted((repr(k), v) for k, v in sol.values.items()))
                if key in seen:
                    continue
                seen.add(key)
                cases.append((lp, lifted, sol))
                if len(cases) == count:
                    return cases
                if len(seen) >= 3:
                    break
    return cases


def test_criterion_05_conditioning_semantics(capsys):
    start = time.perf_counter()
    rng = random.Random(5)
    problems = []
    counts = {}

    vertices = _vertex_cases(rng, 25)
    for lp, lifted, sol in vertices:
        problems += _semantics_problems(sol, lp, lifted)
        atoms = _mobius(sol, lp.variables)
        points, weights = list(atoms), list(atoms.values())
        if any(w < 0 for w in weights) or sum(weights) != 1:
            problems.append("full-level moments are not a distribution")
            continue
        problems += _distribution_problems(sol, points, weights, lp.variables)
        problems += [f"atom {set(p)} infeasible" for p in points
                     if lp.violated({v: int(v in p) for v in lp.variables})]
    counts["vertices"] = len(vertices)

    explicit = _distribution_cases(rng, 15)
    for lp, lifted, sol, points, weights in explicit:
        problems += _semantics_problems(sol, lp, lifted)
        problems += _distribution_problems(sol, points, weights, lp.variables)
    counts["explicit"] = len(explicit)

    scheduling = _scheduling_cases(10)
    for lp, lifted, sol in scheduling:
        problems += _semantics_problems(sol, lp, lifted)
        points = _integral_points(lp)
        weights = [F(1, len(points))] * len(points)
        mix = LiftedSolution.from_distribution(points, weights, 3, lp.variables)
        problems += [f"uniform mixture row {c.label}" for c in lifted.violated(mix.values)]
        problems += _distribution_problems(mix, points, weights, lp.variables)
    counts["scheduling"] = len(scheduling)

    total = sum(counts.values())
    verdict(capsys, 5, f"conditioning semantics on {total} lifted solutions",
            total >= 50 and not problems, time.perf_counter() - start, 60,
            f"cases={counts} problems={problems[:3]}")


# ---------------------------------------------------------------------------
# 6: fractional versus integral
# ---------------------------------------------------------------------------

def test_criterion_06_fractional_integral_gap(capsys):
    start = time.perf_counter()
    inst = gen_model_gap_family("AB", 2)
    lp = build_base_lp(inst, 3)
    sol = solve_feasible(lp)
    lp_ok = not isinstance(sol, Infeasible) and lp.violated(
        {next(iter(k)): v for k, v in sol.values.items() if len(k) == 1}) == []
    integral = opt_makespan(inst, "B").value
    ok = lp_ok and integral == 4 and feasible_at(inst, 3, "B") is None
    verdict(capsys, 6, "base LP feasible at T=3, integral optimum 4", ok, time.perf_counter() - start, 5,
            f"lp_feasible={lp_ok} integral={integral} nomigration_rows={lp.count('nomigration')}")


# ---------------------------------------------------------------------------
# 7: lifted-constraint verification of the closed-form solution
# ---------------------------------------------------------------------------

def test_criterion_07_gap_lab_verification(capsys):
    start = time.perf_counter()
    small = verify_lifted_constraints(3, F(1, 4), 1, "exhaustive")
    large = verify_lifted_constraints(7, F(1, 4), 2, "sampled", seed=7, count=200_000)
    checked = {name: fam.checked for name, fam in large.families.items()}
    enough = sum(checked.values()) >= 100_000
    ok = small.passed and large.passed and enough
    detail = (f"exhaustive L+1=4: {sum(f.checked for f in small.families.values())} rows, "
              f"failed={sum(f.failed for f in small.families.values())}; "
              f"sampled L+1=8: {checked}, failed={sum(f.failed for f in large.families.values())}")
    verdict(capsys, 7, "closed-form lifted solution passes all three row families", ok,
            time.perf_counter() - start, 600, detail)


# ---------------------------------------------------------------------------
# 8: chain-job reduction round trip
# ---------------------------------------------------------------------------

def _tiny_window_instance(rng):
    horizon = rng.randint(3, 6)
    jobs = []
    for k in range(rng.randint(1, 4)):
        r = rng.randint(0, horizon - 1)
        d = rng.randint(r + 1, horizon)
        jobs.append(WindowJob(f"w{k}", rng.randint(1, 3), r, d))
    return SingleMachineInstance(tuple(jobs), horizon)


def _greedy_solution(rng, smi):
    busy, out = set(), []
    for job in rng.sample(list(smi.jobs), len(smi.jobs)):
        length = rng.randint(0, job.size)
        starts = [s for s in range(job.release, job.deadline - length + 1)
                  if not busy & set(range(s + 1, s + length + 1))]
        if length and starts:
            s = rng.choice(starts)
            busy |= set(range(s + 1, s + length + 1))
            out.append((job.id, s, length))
    return out


def test_criterion_08_reduction_round_trip(capsys):
    start = time.perf_counter()
    bad = []
    for seed in range(100):
        rng = random.Random(8000 + seed)
        smi = _tiny_window_instance(rng)
        sol = _greedy_solution(rng, smi)
        cost = solution_cost(smi, sol)
        red = chain_reduction(smi)
        sched = forward_schedule(red, sol)
        back = backward_solution(red, sched)
        if not (validate(sched, red.instance).valid and sched.makespan <= smi.horizon + cost
                and check_solution(smi, back) == [] and solution_cost(smi, back) <= 2 * cost):
            bad.append(seed)
    verdict(capsys, 8, "reduction: forward <= T + c, back <= 2c (100 instances)", not bad,
            time.perf_counter() - start, 30, f"failing seeds={bad[:5]}")


# ---------------------------------------------------------------------------
# 9: hierarchy end to end
# ---------------------------------------------------------------------------

def _micro_instances(count):
    out, seed = [], 0
    while len(out) < count:
        rng = random.Random(9000 + seed)
        inst = random_instance(9000 + seed, jobs=rng.randint(2, 4), machines=rng.randint(1, 2), max_size=3,
                               delay=1, max_total=10)
        seed += 1
        if inst.total_size > 10:
            continue
        if all(smallest_horizon(inst, mode)[0] <= 8 for mode in (NO_DELAY, DELAY)):
            out.append(inst)
    return out


def test_criterion_09_hierarchy_end_to_end(capsys):
    start = time.perf_counter()
    instances = _micro_instances(25)
    params = HierarchyParams(k=1)
    tallies = {}
    for mode in (NO_DELAY, DELAY):
        t = {"valid": 0, "sigma": 0, "reinsertion": 0, "calls": 0, "calls_within": 0, "runs_within": 0}
        for inst in instances:
            run = run_full(inst, mode, params)
            width = 2 * inst.beta + 1 if mode == DELAY else 1
            t["valid"] += validate(run.schedule, inst, mode).valid and validate(run.partial, inst, mode).valid
            t["sigma"] += all(i == run.sigma[task.job] for task, (i, _) in run.partial.assignment.items()
                              if task.job in run.sigma)
            t["reinsertion"] += makespan(run.schedule) - makespan(run.partial) == width * run.discarded
            t["calls"] += len(run.calls)
            within = sum(c.within_bound for c in run.calls)
            t["calls_within"] += within
            t["runs_within"] += within == len(run.calls)
        tallies[mode] = t
        sub_line(capsys, f"{mode}: valid {t['valid']}/25, sigma {t['sigma']}/25, "
                         f"reinsertion exact {t['reinsertion']}/25, "
                         f"per-call bound {t['calls_within']}/{t['calls']} calls "
                         f"({t['runs_within']}/25 runs)")
    ok = all(t["valid"] == t["sigma"] == t["reinsertion"] == t["runs_within"] == 25 for t in tallies.values())
    verdict(capsys, 9, "hierarchy run_full on 25 micro instances, both modes", ok,
            time.perf_counter() - start, 300,
            "; ".join(f"{m}: per-call within bound {t['calls_within']}/{t['calls']}" for m, t in tallies.items()))


# ---------------------------------------------------------------------------
# 10: oracle self-consistency
# ---------------------------------------------------------------------------

def exhaustive_min_discard(smi):
    """Depth-first enumeration of (start, length) or nothing per job, pruned only by
    overlap and by the remaining-size upper bound."""
    jobs = sorted(smi.jobs, key=lambda j: -j.size)
    total = sum(j.size for j in jobs)
    suffix = [0] * (len(jobs) + 1)
    for k in range(len(jobs) - 1, -1, -1):
        suffix[k] = suffix[k + 1] + jobs[k].size
    best = [0]

    def go(k, busy, done):
        if done + suffix[k] <= best[0]:
            return
        if k == len(jobs):
            best[0] = done
            return
        job = jobs[k]
        for length in range(job.size, 0, -1):
            for s in range(job.release, job.deadline - length + 1):
                block = set(range(s + 1, s + length + 1))
                if not busy & block:
                    go(k + 1, busy | block, done + length)
        go(k + 1, busy, done)

    go(0, frozenset(), 0)
    return total - best[0]


def test_criterion_10_oracle_self_consistency(capsys):
    start = time.perf_counter()
    disagreements = []
    runs = 0
    for seed in range(100):
        rng = random.Random(10_000 + seed)
        inst = random_instance(10_000 + seed, jobs=rng.randint(2, 5), machines=rng.randint(1, 3),
                               max_size=3, delay=rng.randint(0, 1), max_total=10)
        for model in "ABC":
            for delays in (False, True):
                slot = opt_makespan(inst, model, delays, strategy="slot")
                seq = opt_makespan(inst, model, delays, strategy="sequence")
                runs += 1
                if slot.value != seq.value or not witness_is_valid(seq, inst, model, delays) \
                        or not witness_is_valid(slot, inst, model, delays):
                    disagreements.append((seed, model, delays))
    tree = {}
    for L in (1, 2, 3):
        smi = gen_tree_instance(L)
        tree[L] = (opt_min_discard(smi).value, exhaustive_min_discard(smi), min_discard_ilp(smi))
    tree_ok = all(len(set(v)) == 1 for v in tree.values()) and tree[1][0] == 0
    verdict(capsys, 10, "oracle strategies agree; tree minimum discard recomputed",
            not disagreements and tree_ok, time.perf_counter() - start, 600,
            f"strategy runs={runs} disagreements={disagreements[:3]} "
            f"tree (dp, exhaustive, ilp)={tree}")
