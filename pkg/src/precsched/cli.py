"""Command-line entry point.

Exit codes: 0 success, 1 validation or verification failure, 2 usage error,
3 an internal size cap was hit.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .core_model import Instance, InstanceError, TaskRef, random_instance
from .schedule import DELAY, MODES, NO_DELAY, Schedule, validate

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_CAP = 0, 1, 2, 3

EPILOG = """exit codes:
  0  success
  1  validation or verification failure
  2  usage error (bad flags or parameter ranges)
  3  an internal size cap was exceeded
"""


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    instance: str | None = None
    mode: str = NO_DELAY
    params: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# canonical JSON
# ---------------------------------------------------------------------------

def _plain(obj):
    if isinstance(obj, Fraction):
        return f"{obj.numerator}/{obj.denominator}"
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float):
        raise TypeError("floats are not allowed in machine-readable artifacts")
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":")) + "\n"


def write_atomic(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _emit(obj, out: str | None) -> None:
    text = canonical_json(obj)
    if out:
        write_atomic(out, text)
    else:
        sys.stdout.write(text)


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc


def _fraction(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}") from exc


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    from .deadline_sched import witness_first_instance
    from .gap_lab import gen_model_gap_family, gen_tree_instance

    if args.kind == "ab":
        obj = gen_model_gap_family("AB", args.m).to_dict()
    elif args.kind == "bc":
        obj = gen_model_gap_family("BC", args.n).to_dict()
    elif args.kind == "tree":
        obj = gen_tree_instance(args.L).to_dict()
    elif args.kind == "deadline":
        inst, _ = witness_first_instance(args.seed)
        obj = inst.to_dict()
    else:
        obj = random_instance(args.seed, jobs=args.jobs, machines=args.machines, max_size=args.max_size,
                              delay=args.delay, max_total=args.max_total).to_dict()
    _emit(obj, args.out)
    return EXIT_OK


def cmd_schedule(args) -> int:
    from .deadline_sched import DeadlineInstance, edf_ect, edf_ect_comm, validate_trace
    from .hierarchy_sched import HierarchyParams, run_full
    from .list_sched import graham_list, graham_list_comm

    data = _read_json(args.instance)
    manifest = {"algorithm": args.algo, "instance": args.instance}
    if args.algo in ("edf-ect", "edf-ect-comm"):
        inst = DeadlineInstance.from_dict(data)
        trace = (edf_ect_comm if args.algo == "edf-ect-comm" else edf_ect)(inst)
        sched = trace.schedule
        problems = validate_trace(trace, inst)
        manifest.update(mode=trace.mode, makespan=sched.makespan, discarded=trace.total_discarded,
                        valid=not problems)
    else:
        inst = Instance.from_dict(data)
        if args.algo == "graham":
            sched = graham_list_comm(inst) if args.mode == DELAY else graham_list(inst)
            manifest.update(mode=args.mode, makespan=sched.makespan, discarded=0)
        else:
            params = HierarchyParams(k=args.k, delta=args.delta, epsilon=args.epsilon,
                                     level_budget=args.level_budget, extra_points=args.extra_points,
                                     seed=args.seed)
            run = run_full(inst, args.mode, params)
            sched = run.schedule
            manifest.update(run.manifest())
        manifest["valid"] = validate(sched, inst, args.mode).valid
        manifest["algorithm"] = args.algo
    _emit(sched.to_dict(), args.out)
    if args.manifest:
        write_atomic(args.manifest, canonical_json(manifest))
    return EXIT_OK if manifest["valid"] else EXIT_INVALID


def cmd_validate(args) -> int:
    sched = Schedule.from_dict(_read_json(args.schedule))
    if args.instance:
        inst = Instance.from_dict(_read_json(args.instance))
    else:
        sizes: dict = {}
        for t in list(sched.assignment) + list(sched.discarded):
            sizes[t.job] = max(sizes.get(t.job, 0), t.index)
        inst = Instance.build(sizes, (), max((m for m, _ in sched.assignment.values()), default=1))
    report = validate(sched, inst, args.mode)
    _emit(report.to_dict(), None)
    return EXIT_OK if report.valid else EXIT_INVALID


def cmd_oracle(args) -> int:
    from .oracle import opt_makespan, witness_is_valid

    inst = Instance.from_dict(_read_json(args.instance))
    out = {}
    for model in args.model:
        res = opt_makespan(inst, model, args.delays, strategy=args.strategy)
        out[model] = {"value": res.value, "nodes": res.nodes, "witness": res.witness.to_dict(),
                      "witness_valid": witness_is_valid(res, inst, model, args.delays)}
    _emit(out, args.out)
    return EXIT_OK


def gap_rows(family: str, size: int) -> list[dict]:
    from .gap_lab import gen_model_gap_family
    from .oracle import opt_makespan

    inst = gen_model_gap_family(family, size)
    values = {m: opt_makespan(inst, m).value for m in ("A", "B", "C")}
    if family == "AB":
        ratio = Fraction(values["B"], values["A"])
    else:
        ratio = Fraction(values["C"], values["B"])
    return [{"family": family, "size": size, **values, "ratio": ratio}]


def cmd_gaps(args) -> int:
    rows = []
    sizes = args.m if args.family == "AB" else args.n
    for size in sizes:
        rows.extend(gap_rows(args.family, size))
    if args.json:
        _emit(rows, args.out)
    else:
        lines = [f"{'family':<7}{'size':>5}{'A':>5}{'B':>5}{'C':>5}  ratio"]
        for r in rows:
            lines.append(f"{r['family']:<7}{r['size']:>5}{r['A']:>5}{r['B']:>5}{r['C']:>5}  "
                         f"{r['ratio'].numerator}/{r['ratio'].denominator}")
        print("\n".join(lines))
    return EXIT_OK


def cmd_verify_sa(args) -> int:
    from .gap_lab import verify_lifted_constraints

    scope = "sampled" if args.sampled else "exhaustive"
    report = verify_lifted_constraints(args.L1 - 1, args.eps_prime, args.q, scope, seed=args.seed,
                                       count=args.count)
    out = report.to_dict()
    out["passed"] = report.passed
    _emit(out, args.out)
    return EXIT_OK if report.passed else EXIT_INVALID


def cmd_export_lp(args) -> int:
    from .sa_lp import build_base_lp, export_lp_text, sa_lift

    inst = Instance.from_dict(_read_json(args.instance))
    lp = build_base_lp(inst, args.T, with_comm=args.comm)
    if args.level > 1:
        lp = sa_lift(lp, args.level)
    text = export_lp_text(lp)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for path in args.manifests:
        m = _read_json(path)
        rows.append({"manifest": path, "algorithm": m.get("algorithm"), "mode": m.get("mode"),
                     "makespan": m.get("makespan"), "discarded": m.get("discarded"), "valid": m.get("valid"),
                     "horizon": m.get("horizon")})
    if args.out:
        write_atomic(args.out, canonical_json(rows))
    header = f"{'manifest':<32}{'algorithm':<14}{'mode':<10}{'makespan':>9}{'discarded':>10}{'valid':>7}"
    print(header)
    for r in rows:
        print(f"{str(r['manifest'])[-31:]:<32}{str(r['algorithm']):<14}{str(r['mode']):<10}"
              f"{str(r['makespan']):>9}{str(r['discarded']):>10}{str(r['valid']):>7}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="precsched", description=__doc__.splitlines()[0],
                                     epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate instances")
    p.add_argument("kind", choices=("ab", "bc", "tree", "deadline", "dag"))
    p.add_argument("--m", type=int, default=2, help="machines for the AB family")
    p.add_argument("--n", type=int, default=1, help="size parameter for the BC family")
    p.add_argument("--L", type=int, default=1, help="tree depth parameter")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=5)
    p.add_argument("--machines", type=int, default=2)
    p.add_argument("--max-size", type=int, default=3)
    p.add_argument("--max-total", type=int, default=None)
    p.add_argument("--delay", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("schedule", help="run a scheduler and emit schedule JSON")
    p.add_argument("--instance", required=True)
    p.add_argument("--algo", choices=("graham", "edf-ect", "edf-ect-comm", "hierarchy"), default="hierarchy")
    p.add_argument("--mode", choices=MODES, default=NO_DELAY)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--delta", type=_fraction, default=Fraction(1, 4))
    p.add_argument("--epsilon", type=_fraction, default=Fraction(1, 2))
    p.add_argument("--level-budget", type=int, default=256)
    p.add_argument("--extra-points", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("validate", help="validate a schedule (exit 1 on violations)")
    p.add_argument("--schedule", required=True)
    p.add_argument("--instance")
    p.add_argument("--mode", choices=MODES, default=NO_DELAY)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("oracle", help="exact optimal makespans")
    p.add_argument("--instance", required=True)
    p.add_argument("--model", choices=("A", "B", "C"), action="append")
    p.add_argument("--delays", action="store_true")
    p.add_argument("--strategy", choices=("slot", "sequence"), default="slot")
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("gaps", help="model-gap table")
    p.add_argument("--family", choices=("AB", "BC"), default="AB")
    p.add_argument("--m", type=int, action="append")
    p.add_argument("--n", type=int, action="append")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gaps)

    p = sub.add_parser("verify-sa", help="verify the closed-form lifted solution of the tree instance")
    p.add_argument("--L1", type=int, required=True, help="L + 1")
    p.add_argument("--eps-prime", type=_fraction, default=Fraction(1, 4))
    p.add_argument("--q", type=int, default=1)
    scope = p.add_mutually_exclusive_group()
    scope.add_argument("--exhaustive", action="store_true")
    scope.add_argument("--sampled", action="store_true")
    p.add_argument("--count", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_sa)

    p = sub.add_parser("export-lp", help="write the (lifted) LP in CPLEX LP format")
    p.add_argument("--instance", required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--comm", action="store_true")
    p.add_argument("--level", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_lp)

    p = sub.add_parser("report", help="merge manifests into a comparison table")
    p.add_argument("manifests", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def _check_ranges(parser, args) -> None:
    if args.command == "schedule":
        if args.k < 1:
            parser.error("--k must be at least 1")
        if not 0 < args.delta <= 1:
            parser.error("--delta must lie in (0, 1]")
        if not 0 < args.epsilon <= 1:
            parser.error("--epsilon must lie in (0, 1]")
        if args.level_budget < 1:
            parser.error("--level-budget must be positive")
    if args.command == "gaps":
        args.m = args.m or [2]
        args.n = args.n or [1]
    if args.command == "oracle":
        args.model = args.model or ["B"]
    if args.command == "verify-sa":
        if args.L1 < 1 or args.q < 0 or args.count < 1:
            parser.error("--L1 and --count must be positive, --q nonnegative")
        if not 0 < args.eps_prime < 1:
            parser.error("--eps-prime must lie in (0, 1)")
    if args.command == "export-lp" and (args.T < 1 or args.level < 1):
        parser.error("--T and --level must be positive")


def main(argv: Sequence[str] | None = None) -> int:
    from .oracle import CapExceeded
    from .sa_lp import LevelExhausted, SizeBlowup

    parser = build_parser()
    args = parser.parse_args(argv)
    _check_ranges(parser, args)
    try:
        return args.func(args)
    except BrokenPipeError:  # e.g. output piped into head
        sys.stderr.close()
        return EXIT_OK
    except (CapExceeded, SizeBlowup, LevelExhausted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (UsageError, InstanceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
