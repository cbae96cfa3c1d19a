"""Command line: solve, verify against exhaustive search, and generate instances.

Exit codes: 0 success, 2 infeasible at termination or solver/oracle
disagreement (outputs still written), 1 usage, input or output errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from . import flp, flpo, lmdp, oracles
from .core import AnnealError, AnnealSchedule, PenaltyConfig, TooLargeError
from .fileio import (
    emit_trace,
    generate_instance,
    load_instance,
    save_instance,
    save_solution,
    solution_to_dict,
)
from .instances import FlpInstance, FlpoInstance, LmdpInstance

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2

SOLVE_KINDS = {"solve-flp": FlpInstance, "solve-flpo": FlpoInstance, "solve-lmdp": LmdpInstance}


class _Parser(argparse.ArgumentParser):
    """argparse with exit code 1 instead of 2 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _add_schedule_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("annealing")
    g.add_argument("--beta-min", type=float)
    g.add_argument("--beta-max", type=float)
    g.add_argument("--alpha", type=float, help="beta growth rate (> 1)")
    g.add_argument("--betap-min", type=float)
    g.add_argument("--betap-max", type=float)
    g.add_argument("--alphap", type=float, help="beta' growth rate (> 1)")
    g.add_argument("--theta", type=float, default=10.0, help="penalty sharpness")
    g.add_argument("--eps", type=float, default=0.01, help="feasibility tolerance on slacks")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--unconstrained", action="store_true", help="ignore capacities")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mepanneal", description=__doc__.splitlines()[0],
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("solve-flp", "solve-flpo", "solve-lmdp"):
        p = sub.add_parser(name, help=f"anneal a {name[6:].upper()} instance")
        p.add_argument("--instance", required=True)
        p.add_argument("--out", help="solution JSON (default: standard output)")
        p.add_argument("--trace", help="annealing trace CSV")
        _add_schedule_flags(p)
    p = sub.add_parser("verify", help="compare the solver with exhaustive search")
    p.add_argument("--instance", required=True)
    p.add_argument("--out", help="agreement report JSON (default: standard output)")
    p.add_argument("--trace", help="annealing trace CSV")
    _add_schedule_flags(p)
    p = sub.add_parser("generate", help="write a seeded random instance")
    p.add_argument("kind", choices=("flp", "flpo", "lmdp"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="generator parameter, e.g. nodes=100 or capacities=[0.5,0.5]")
    return parser


def _schedule(args, default: AnnealSchedule) -> AnnealSchedule:
    overrides = {k: getattr(args, k) for k in
                 ("beta_min", "beta_max", "alpha", "betap_min", "betap_max", "alphap")
                 if getattr(args, k) is not None}
    return replace(default, **overrides)


def _penalty(args) -> PenaltyConfig:
    return PenaltyConfig(theta=args.theta, epsilon_feasible=args.eps)


def solve(inst, args):
    """Run the matching annealer; returns the solution object."""
    penalty = _penalty(args)
    if isinstance(inst, FlpoInstance):
        return flpo.anneal_flpo(inst, _schedule(args, flpo.default_schedule(inst)), penalty,
                                seed=args.seed, unconstrained=args.unconstrained)
    if isinstance(inst, FlpInstance):
        return flp.anneal_flp(inst, _schedule(args, flp.default_schedule(inst)), penalty,
                              seed=args.seed, unconstrained=args.unconstrained)
    return lmdp.anneal_lmdp(inst, _schedule(args, lmdp.default_schedule()), penalty,
                            unconstrained=args.unconstrained)


def _write_json(path, doc) -> None:
    text = json.dumps(doc, indent=2) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _verify_report(inst, sol, args) -> dict:
    constrained = inst.constrained and not args.unconstrained
    if isinstance(inst, FlpoInstance):
        # Path law at the solved locations against literal path summation.
        beta = 1.0 / max(float(np.max(np.abs(sol.soft_locations))) ** 2, 1.0)
        costs = flpo.step_cost(inst, sol.soft_locations)
        usage = sol.usage if constrained else None
        betap = 1.0 if constrained else 0.0
        policy, _ = flpo.backward_policy(costs, usage, beta, betap, _penalty(args),
                                         inst.capacities if constrained else None)
        law = oracles.oracle_flpo_paths(inst, sol.soft_locations, beta, betap, args.theta, usage)
        err = float(np.max(np.abs(oracles.enumerate_policy(policy.start, policy.steps) - law.probs)))
        return {"check": "path law", "beta": beta, "max_abs_error": err, "agree": err <= 1e-9}
    if isinstance(inst, FlpInstance):
        rep = oracles.oracle_flp(inst, capacity_mode=constrained)
        value = float(sol.cost)
    else:
        rep = oracles.oracle_lmdp(inst, capacity_mode=constrained)
        value = float(sol.total_cost)
    if not rep.feasible:
        agree = not sol.feasible
        return {"check": "optimum", "oracle_feasible": False, "solver_feasible": bool(sol.feasible),
                "solver_value": value, "searched": rep.searched, "agree": agree}
    gap = (value - rep.value) / max(abs(rep.value), 1e-300)
    return {
        "check": "optimum",
        "oracle_value": rep.value,
        "solver_value": value,
        "relative_gap": gap,
        "solver_feasible": bool(sol.feasible),
        "searched": rep.searched,
        "agree": bool(sol.feasible) and gap <= 0.01,
    }


def _parse_param(text: str):
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise ValueError(f"--param expects KEY=VALUE, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "generate":
            params = dict(_parse_param(t) for t in args.param)
            save_instance(args.out, generate_instance(args.kind, args.seed, **params))
            return EXIT_OK
        inst = load_instance(args.instance)
        expected = SOLVE_KINDS.get(args.command)
        if expected is not None and type(inst) is not expected:
            print(f"error: {args.command} needs a {expected.__name__}, got {type(inst).__name__}",
                  file=sys.stderr)
            return EXIT_ERROR
        sol = solve(inst, args)
        if args.trace:
            emit_trace(args.trace, sol.trace)
        if args.command == "verify":
            report = _verify_report(inst, sol, args)
            _write_json(args.out, report)
            print(f"verify: {'agree' if report['agree'] else 'DISAGREE'}", file=sys.stderr)
            return EXIT_OK if report["agree"] else EXIT_INFEASIBLE
        if args.out:
            save_solution(args.out, sol)
        else:
            _write_json(None, solution_to_dict(sol))
        for message in sol.trace.flags:
            print(f"note: {message}", file=sys.stderr)
        if not sol.feasible:
            print("infeasible at termination: capacities exceeded beyond tolerance", file=sys.stderr)
            return EXIT_INFEASIBLE
        return EXIT_OK
    except TooLargeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (AnnealError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run())
