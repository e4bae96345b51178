"""Command-line interface: ``hfgse validate|simulate|estimate|report``.

Exit codes: 0 success, 2 usage, 3 invalid instance, 4 solver failure,
5 unreadable or malformed JSON, 6 schema violation.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .io import (InstanceError, InstanceParseError, InstanceSchemaError, InstanceValidationError,
                 export_results, fmt, load_instance, read_error_table)
from .petri import EngineeringSystemNet, FiringSchedule, simulate
from .qp import dump_qp, write_provenance
from .wlse import ALPHA_RULES, EstimationFailed, GROUPINGS, assemble_wlse, estimate

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_SOLVER = 0, 2, 3, 4

log = logging.getLogger("hfgse")


def _setup_logging():
    level = os.environ.get("HFG_LOG", "").strip().lower()
    levels = {"debug": logging.DEBUG, "info": logging.INFO}
    logging.basicConfig(level=levels.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)


def _positive(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (math.isfinite(v) and v > 0):
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return v


def _nonnegative(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (math.isfinite(v) and v >= 0):
        raise argparse.ArgumentTypeError(f"must be nonnegative: {text!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p = argparse.ArgumentParser(prog="hfgse", parents=[common],
                                description="Flow state estimation on hetero-functional graphs.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", parents=[common], help="check instance files")
    v.add_argument("instances", nargs="+", type=Path)

    s = sub.add_parser("simulate", parents=[common], help="replay a firing schedule")
    s.add_argument("instance", type=Path)
    s.add_argument("schedule", type=Path)
    s.add_argument("--out", type=Path, help="write the marking trajectory as CSV")

    e = sub.add_parser("estimate", parents=[common], help="estimate flows from measurements")
    e.add_argument("instance", type=Path)
    e.add_argument("--out", type=Path, required=True, help="result directory")
    e.add_argument("--tol", type=_positive, default=1e-8, help="solver tolerance (abs and rel)")
    e.add_argument("--alpha", type=_nonnegative, help="flow penalty; derived when omitted")
    e.add_argument("--alpha-rule", choices=ALPHA_RULES, default="relative")
    e.add_argument("--group-by", choices=GROUPINGS, default="both")
    e.add_argument("--dump-qp", type=Path, help="write the assembled program as triplets")
    e.add_argument("--provenance", type=Path, help="write the constraint row table as CSV")

    r = sub.add_parser("report", parents=[common], help="summarize errors of a result directory")
    r.add_argument("resultdir", type=Path)
    r.add_argument("--group-by", choices=GROUPINGS, default="both")
    return p


def _fail(exc: InstanceError) -> int:
    print(f"error: {exc}", file=sys.stderr)
    for d in exc.diagnostics[1:]:
        print(f"  {d}", file=sys.stderr)
    return exc.exit_code


def cmd_validate(args) -> int:
    worst = EXIT_OK
    for path in args.instances:
        try:
            inst = load_instance(path)
        except InstanceError as exc:
            worst = worst or _fail(exc)
            continue
        a = inst.arch
        print(f"{path}: ok ({a.n_operands} operands, {a.n_buffers} buffers, "
              f"{a.n_capabilities} capabilities, {len(inst.measurements)} measurements, "
              f"K={inst.horizon})")
    return worst


def _read_schedule(path, arch, K):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InstanceParseError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InstanceParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or set(doc) - {"u_minus", "u_plus", "q_b0"} \
            or not {"u_minus", "u_plus"} <= set(doc):
        raise InstanceSchemaError(f"{path}: schedule needs keys u_minus and u_plus "
                                  "(optionally q_b0) and nothing else")
    ids = arch.capability_ids()

    def table(key):
        val = doc[key]
        if not isinstance(val, dict):
            raise InstanceSchemaError(f"{path}: {key} must map capability ids to {K} values")
        out = np.zeros((K, len(ids)))
        for cid, series in val.items():
            if cid not in ids:
                raise InstanceValidationError(f"{path}: unknown capability {cid!r} in {key}")
            if not isinstance(series, list) or len(series) != K:
                raise InstanceSchemaError(f"{path}: {key}/{cid} must list {K} values")
            out[:, ids.index(cid)] = series
        return out

    q_b0 = np.zeros(arch.n_places)
    labels = arch.place_labels()
    for place, v in (doc.get("q_b0") or {}).items():
        if place not in labels:
            raise InstanceValidationError(f"{path}: unknown place {place!r} in q_b0")
        q_b0[labels.index(place)] = v
    return table("u_minus"), table("u_plus"), q_b0


def cmd_simulate(args) -> int:
    try:
        inst = load_instance(args.instance)
        um, up, q_b0 = _read_schedule(args.schedule, inst.arch, inst.horizon)
    except InstanceError as exc:
        return _fail(exc)
    try:
        sched = FiringSchedule(um, up)
        net = EngineeringSystemNet.from_architecture(inst.arch, inst.dt, q_b0=q_b0)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    traj = simulate(net, sched, inst.horizon)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "place", "marking"])
            for k in range(traj.q_b.shape[0]):
                for i, label in enumerate(net.place_ids):
                    w.writerow([k + 1, label, fmt(traj.q_b[k, i])])
    print(f"simulated {inst.horizon} steps; {len(traj.violations)} violation(s)")
    for v in traj.violations:
        print(f"  {v}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    try:
        inst = load_instance(args.instance)
    except InstanceError as exc:
        return _fail(exc)
    if args.dump_qp or args.provenance:
        prob = assemble_wlse(inst.arch, inst.measurements, inst.capacities, inst.horizon,
                             dt=inst.dt, alpha=args.alpha, alpha_rule=args.alpha_rule)
        if args.dump_qp:
            dump_qp(prob.qp, args.dump_qp)
        if args.provenance:
            write_provenance(prob.qp, args.provenance)
    try:
        result = estimate(inst.arch, inst.measurements, inst.capacities, inst.horizon,
                          dt=inst.dt, alpha=args.alpha, alpha_rule=args.alpha_rule,
                          tol_abs=args.tol, tol_rel=args.tol)
    except EstimationFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    paths = export_results(result, args.out, grouping=args.group_by)
    print(f"objective {result.objective:.6g}; {len(result.capacity_bindings)} binding "
          f"capacity constraint(s); wrote {len(paths)} files to {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        table = read_error_table(args.resultdir, args.group_by)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    width = max([len("group")] + [len(r[0]) for r in table])
    print(f"{'group':<{width}}  {'imposed_gj':>14}  {'abs_error_gj':>14}  {'weighted':>12}")
    for g, imposed, err, werr in table:
        print(f"{g:<{width}}  {imposed:>14.6g}  {err:>14.6g}  {werr:>12.4g}")
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "simulate": cmd_simulate, "estimate": cmd_estimate,
            "report": cmd_report}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
