"""Command-line interface: ``moment-opf solve|sweep|penalize``.

Exit codes are a function of the outcome only: 0 solved (rank condition met),
2 infeasible, 3 rank condition unmet (the bound is still reported), 4 solver
failure, 64 usage or input-schema error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .lasserre import (
    DEFAULT_RANK_TOL,
    RelaxationError,
    RelaxationResult,
    add_reactive_penalty,
    build_relaxation,
    solve_relaxation,
    true_cost,
)
from .netmodel import Network, NetworkError, case3_path, network_from_dict
from .poly import quadratic_cost
from .sdpcore import INFEASIBLE, OPTIMAL
from .sweep import SweepSpec, best_cell, cells_to_csv, feasible_region_inclusion, run_sweep

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_RANK = 3
EXIT_FAILURE = 4
EXIT_USAGE = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 by default, which would read as "infeasible".
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def exit_code(result: RelaxationResult) -> int:
    if result.status == OPTIMAL:
        return EXIT_OK if result.rank_one else EXIT_RANK
    if result.status == INFEASIBLE:
        return EXIT_INFEASIBLE
    return EXIT_FAILURE


def _load(path: str | None) -> tuple[Network, dict]:
    p = Path(path) if path else case3_path()
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {p}: {exc.strerror}") from None
    try:
        data = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise NetworkError("", f"invalid JSON: {exc}") from None
    net = network_from_dict(data)
    return net, {"path": str(p), "sha256": hashlib.sha256(raw).hexdigest()}


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _vec(a):
    return None if a is None else [_num(v) for v in np.asarray(a, dtype=float)]


def result_record(res: RelaxationResult, elapsed: float) -> dict:
    sol = res.solution
    rec = {
        "order": res.order,
        "status": res.status,
        "penalized": res.penalized,
        "lower_bound": _num(res.lower_bound) if res.status == OPTIMAL else None,
        "objective": _num(res.objective),
        "relaxed_cost": _num(res.relaxed_cost) if res.y is not None else None,
        "rank_ratio": _num(res.rank_ratio),
        "rank_one": bool(res.rank_one),
        "lifted_p_gen_mw": _vec(res.lifted_p_gen),
        "lifted_q_gen_mvar": _vec(res.lifted_q_gen),
        "p_gen_mw": _vec(res.p_gen),
        "q_gen_mvar": _vec(res.q_gen),
        "voltages": None,
        "timing_s": elapsed,
        "solver": {
            "iterations": sol.iterations,
            "dual_objective": _num(sol.dual_objective),
            "gap": _num(sol.gap),
            "equality_residual": _num(sol.equality_residual),
            "min_block_eigenvalue": _num(min(sol.block_min_eig)) if sol.block_min_eig else None,
            "phase1_margin": _num(sol.phase1_margin),
            "message": sol.message,
        },
    }
    if res.voltages is not None:
        net = res.problem.net
        rec["voltages"] = [
            {"bus": b.id, "magnitude_pu": float(abs(v)), "angle_deg": float(np.degrees(np.angle(v)))}
            for b, v in zip(net.buses, res.voltages)
        ]
    return rec


def _text_result(rec: dict) -> list[str]:
    lines = [f"order {rec['order']}: {rec['status']}"]
    label = "objective (penalized)" if rec["penalized"] else "lower bound"
    if rec["objective"] is not None:
        lines.append(f"  {label:<22} {rec['objective']:.2f} $/hr")
    if rec["rank_ratio"] is not None:
        verdict = "met" if rec["rank_one"] else "unmet"
        lines.append(f"  rank condition         {verdict} (lambda2/lambda1 = {rec['rank_ratio']:.2e})")
    if rec["lifted_p_gen_mw"]:
        lines.append("  L_y{P_G}               " + ", ".join(f"{p:.2f}" for p in rec["lifted_p_gen_mw"]) + " MW")
    if rec["p_gen_mw"]:
        lines.append("  P_G                    " + ", ".join(f"{p:.2f}" for p in rec["p_gen_mw"]) + " MW")
        lines.append("  Q_G                    " + ", ".join(f"{q:.2f}" for q in rec["q_gen_mvar"]) + " MVAr")
    for v in rec["voltages"] or []:
        lines.append(f"  V{v['bus']:<21} {v['magnitude_pu']:.4f} pu at {v['angle_deg']:.3f} deg")
    s = rec["solver"]
    lines.append(f"  solver                 {s['iterations']} iterations, {rec['timing_s']:.2f} s")
    return lines


def _emit(report: dict, as_json: bool, text_lines: list[str], out=None) -> None:
    out = out or sys.stdout
    if as_json:
        json.dump(report, out, indent=2)
        out.write("\n")
    else:
        out.write("\n".join(text_lines) + "\n")


def cmd_solve(args) -> int:
    net, digest = _load(args.file)
    t0 = time.perf_counter()
    res = solve_relaxation(build_relaxation(net, args.order), tol_ratio=args.tol_rank)
    rec = result_record(res, time.perf_counter() - t0)
    report = {"command": args.argv, "version": __version__, "input": digest, "results": [rec]}
    _emit(report, args.json, _text_result(rec))
    return exit_code(res)


def _range(text: str | None, default: tuple[float, float]) -> tuple[float, float]:
    if text is None:
        return default
    try:
        a, b = (float(s) for s in text.split(":"))
    except ValueError:
        raise UsageError(f"range must look like a:b, got {text!r}") from None
    return a, b


def cmd_sweep(args) -> int:
    net, digest = _load(args.file)
    if len(net.generators) < 2:
        raise UsageError("the sweep needs at least two generators")
    g1, g2 = net.generators[:2]
    try:
        orders = tuple(int(s) for s in args.orders.split(","))
        spec = SweepSpec(
            _range(args.p1, (g1.p_min, g1.p_max)), _range(args.p2, (g2.p_min, g2.p_max)), args.step, orders, args.jobs
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    t0 = time.perf_counter()
    cells = run_sweep(net, spec)
    elapsed = time.perf_counter() - t0
    text = cells_to_csv(cells)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    best = best_cell(cells, 2) if 2 in spec.orders else None
    summary = {
        "command": args.argv,
        "version": __version__,
        "input": digest,
        "cells": len(cells),
        "feasible": {str(k): sum(c.feasible(k) for c in cells) for k in spec.orders},
        "errors": {str(k): sum(c.status.get(k) == "error" for c in cells) for k in spec.orders},
        "inclusion_holds": feasible_region_inclusion(cells) if spec.orders == (1, 2) else None,
        "order2_argmin_mw": [best.p1, best.p2] if best else None,
        "timing_s": elapsed,
        "out": args.out,
    }
    # Keep stdout clean for the CSV when no output file is given.
    stream = sys.stdout if args.out else sys.stderr
    lines = [f"{summary['cells']} cells in {elapsed:.1f} s"]
    lines += [f"order {k}: {summary['feasible'][str(k)]} feasible" for k in spec.orders]
    if best:
        lines.append(f"order-2 cheapest feasible cell: ({best.p1:g}, {best.p2:g}) MW")
    _emit(summary, args.json, lines, stream)
    return EXIT_OK


def cmd_penalize(args) -> int:
    if args.epsilon < 0:
        raise UsageError("--epsilon must be non-negative")
    net, digest = _load(args.file)
    t0 = time.perf_counter()
    base = build_relaxation(net, 1)
    res = solve_relaxation(add_reactive_penalty(base, args.epsilon, per_unit=args.per_unit), tol_ratio=args.tol_rank)
    rec = result_record(res, time.perf_counter() - t0)
    report = {"command": args.argv, "version": __version__, "input": digest, "results": [rec]}
    lines = _text_result(rec)
    if res.status == OPTIMAL and args.epsilon > 0:
        t1 = time.perf_counter()
        bound = solve_relaxation(build_relaxation(net, 2), tol_ratio=args.tol_rank)
        report["results"].append(result_record(bound, time.perf_counter() - t1))
        lb = bound.lower_bound if bound.status == OPTIMAL else None
        if res.rank_one:
            cost, key, what = true_cost(net, res.voltages), "worst_case_optimality_gap", "feasible point cost"
        else:
            # Without a rank-one solution there is no feasible point; the lifted
            # injections only indicate where the penalty is steering the solution.
            cost, key, what = quadratic_cost(net, res.lifted_p_gen), "lifted_injection_gap", "cost at L_y{P_G}"
        gap = None if lb is None else {"relative_to_cost": (cost - lb) / cost, "relative_to_bound": (cost - lb) / lb}
        report["order2_lower_bound"] = lb
        report["feasible_point_cost" if res.rank_one else "lifted_injection_cost"] = cost
        report[key] = gap
        lines.append(f"{what:<26} {cost:.2f} $/hr")
        if gap:
            label = "worst-case optimality gap" if res.rank_one else "gap (not a feasible point)"
            lines.append(
                f"{label:<26} {100 * gap['relative_to_bound']:.2f}% of the order-2 bound "
                f"({100 * gap['relative_to_cost']:.2f}% of the cost)"
            )
    _emit(report, args.json, lines)
    return exit_code(res)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="moment-opf", description="Globally solve small OPF problems with moment relaxations.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("file", nargs="?", help="network JSON (default: bundled three-bus case)")
        fmt = p.add_mutually_exclusive_group()
        fmt.add_argument("--json", action="store_true", help="machine-readable report")
        fmt.add_argument("--text", dest="json", action="store_false", help="human-readable report (default)")

    p = sub.add_parser("solve", help="solve one relaxation order")
    common(p)
    p.add_argument("--order", type=int, choices=(1, 2, 3), default=2)
    p.add_argument("--tol-rank", type=float, default=DEFAULT_RANK_TOL, help="rank-one threshold on lambda2/lambda1")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="feasible-space sweep over the first two generator outputs")
    common(p)
    p.add_argument("--p1", help="MW range a:b for the first generator (default: its limits)")
    p.add_argument("--p2", help="MW range a:b for the second generator (default: its limits)")
    p.add_argument("--step", type=float, default=0.5, help="grid spacing in MW")
    p.add_argument("--orders", default="1,2", help="comma-separated subset of 1,2")
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.add_argument("--jobs", type=int, help="worker processes (default: $MOMENT_OPF_JOBS or 1)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("penalize", help="first-order relaxation with a reactive-power penalty")
    common(p)
    p.add_argument("--epsilon", type=float, required=True, help="penalty in $/(MVAr-hr)")
    p.add_argument("--per-unit", action="store_true", help="read --epsilon per unit of reactive power instead")
    p.add_argument("--tol-rank", type=float, default=DEFAULT_RANK_TOL)
    p.set_defaults(func=cmd_penalize)
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = ["moment-opf", *argv]
    try:
        return args.func(args)
    except NetworkError as exc:
        print(f"moment-opf: input error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, RelaxationError) as exc:
        print(f"moment-opf: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
