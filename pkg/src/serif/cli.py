"""Command-line entry point: check, run, analyze, and suite.

Exit codes: 0 success/accept, 1 rejection or property failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .frontend import fmt_value, parse_label
from .harness import ni_test
from .interp import (MODE_ATTACKER_BYPASS, MODE_NORMAL, Allocator, run_invocation)
from .harness import bullet_erase_heap
from .lattice import LabelError, format_label
from .loader import LoadedWorld, WorldError, check_invocations, load_program, load_world
from .monitor import Monitor, decompose, find_witness, outer_is_tail
from .typecheck import Checker, PartitionError, TrustPartition, complies_with_locks, program_labels


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="serif", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p_check = sub.add_parser("check", help="type-check a program file")
    p_check.add_argument("path")
    p_check.add_argument("--trust", help="trust label for lock compliance")
    p_check.add_argument("--attacker", help="attacker label for the partition")
    p_check.add_argument("--json", action="store_true", help="machine-readable report")

    p_run = sub.add_parser("run", help="execute a world file")
    p_run.add_argument("path")
    p_run.add_argument("--mode", choices=[MODE_NORMAL, MODE_ATTACKER_BYPASS],
                       default=MODE_NORMAL)
    p_run.add_argument("--trace", help="write one JSON line per step to this file")
    p_run.add_argument("--bullet", action="store_true",
                       help="run the erased semantics from the bullet-erased heap")
    p_run.add_argument("--unchecked", action="store_true",
                       help="run even if the program or invocations fail to check")
    p_run.add_argument("--budget", type=int, default=1_000_000)
    p_run.add_argument("--alloc-seed", type=int, default=None,
                       help="randomize fresh location names")

    p_an = sub.add_parser("analyze", help="reentrancy report from a --trace file")
    p_an.add_argument("path")
    p_an.add_argument("--trust", help="override the trust label recorded in the trace")

    p_suite = sub.add_parser("suite", help="run the security property suites")
    p_suite.add_argument("--filter", default="", help="substring filter on suite names")
    p_suite.add_argument("--fast", action="store_true", help="reduced trial counts")
    p_suite.add_argument("--xml", help="write a JUnit-style XML report")

    try:
        args = ap.parse_args(argv)
    except SystemExit as ex:
        return 2 if ex.code not in (0, None) else 0

    try:
        if args.cmd == "check":
            return cmd_check(args)
        if args.cmd == "run":
            return cmd_run(args)
        if args.cmd == "analyze":
            return cmd_analyze(args)
        return cmd_suite(args)
    except (FileNotFoundError, WorldError, PartitionError, LabelError) as ex:
        print(f"error: {ex}", file=sys.stderr)
        return 2


def cmd_check(args) -> int:
    if not os.path.exists(args.path):
        print(f"error: no such file: {args.path}", file=sys.stderr)
        return 2
    _, ct = load_program(args.path)
    checker = Checker(ct)
    verdict = checker.check_class_table()
    name = os.path.basename(args.path)
    compliance_bad = []
    if args.trust:
        partition = TrustPartition(parse_label(args.trust, ct.lattice),
                                   parse_label(args.attacker, ct.lattice) if args.attacker else None)
        if args.attacker:
            partition.validate(ct.lattice, program_labels(ct))
        ok, bad = complies_with_locks(ct, partition)
        compliance_bad = bad
    if args.json:
        print(json.dumps({
            "file": name,
            "accept": verdict.ok and not compliance_bad,
            "diagnostics": [d.to_json() for d in verdict.diagnostics],
            "lock_compliance": [
                {"class": c, "method": m,
                 "line": sp[0] if sp else None, "col": sp[1] if sp else None}
                for c, m, sp in compliance_bad
            ],
        }, indent=2))
    else:
        if verdict.diagnostics:
            print(verdict.format(name))
        for c, m, sp in compliance_bad:
            line, col = sp if sp else (0, 0)
            print(f"{name}:{line}:{col}: Lock-Compliance: trusted {c}.{m} uses ignore-locks-in")
        if verdict.ok and not compliance_bad:
            print(f"{name}: accepted")
    return 0 if verdict.ok and not compliance_bad else 1


def cmd_run(args) -> int:
    lw = load_world(args.path)
    if not lw.program_verdict.ok:
        if not args.unchecked:
            print(lw.program_verdict.format(lw.source_name))
            print("program rejected; use --unchecked to run anyway", file=sys.stderr)
            return 1
    elif not args.unchecked:
        inv_verdict = check_invocations(lw)
        if not inv_verdict.ok:
            print(inv_verdict.format(lw.source_name))
            return 1
    if args.mode == MODE_ATTACKER_BYPASS and lw.partition is None:
        print("error: attacker-bypass mode needs a trust/attacker declaration", file=sys.stderr)
        return 2

    trace_fh = open(args.trace, "w") if args.trace else None
    if trace_fh:
        header = {
            "kind": "header",
            "principals": list(lw.ct.lattice.principals),
            "delegations": sorted(lw.ct.lattice.delegations),
            "trust": format_label(lw.partition.trust) if lw.partition else None,
            "attacker": (format_label(lw.partition.attacker)
                         if lw.partition and lw.partition.attacker else None),
        }
        trace_fh.write(json.dumps(header) + "\n")
    exit_code = 0
    heap = lw.fresh_heap()
    if args.bullet:
        if lw.partition is None:
            print("error: bullet mode needs a trust declaration", file=sys.stderr)
            return 2
        heap = bullet_erase_heap(heap, lw.ct.lattice, lw.partition)
    try:
        for i, inv in enumerate(lw.invocations):
            monitor = Monitor(lw.ct.lattice, lw.partition) if lw.partition else None
            tracer = _make_tracer(trace_fh, i, lw, monitor) if trace_fh else None
            result = run_invocation(
                inv, lw.ct, heap, mode=args.mode, partition=lw.partition,
                monitor=monitor, bullet=args.bullet, budget=args.budget,
                allocator=Allocator(args.alloc_seed), trace=tracer)
            if monitor is not None and trace_fh is not None:
                for ev in monitor.events:
                    trace_fh.write(json.dumps({"invocation": i, **ev.to_json()}) + "\n")
            if result.outcome == "value":
                print(f"invocation {i}: {inv.location}.{inv.mname} -> "
                      f"{fmt_value(result.value)} [{result.steps} steps]")
                heap = result.heap
            elif result.outcome == "fault":
                f = result.fault
                where = f" at {f.span[0]}:{f.span[1]}" if f.span else ""
                print(f"invocation {i}: fault {f.kind}{where}: {f.message}")
                exit_code = 1
                break
            else:
                print(f"invocation {i}: no result within {args.budget} steps")
                exit_code = 1
                break
    finally:
        if trace_fh:
            trace_fh.close()
    print("heap {")
    for name, (v, t) in heap.items():
        print(f"  {name} = {fmt_value(v)} : {t};")
    print("}")
    return exit_code


def _make_tracer(fh, inv_index: int, lw: LoadedWorld, monitor):
    def trace(ex):
        frames = []
        for fr in ex.frames:
            kind = type(fr).__name__
            if kind == "AtPcF":
                frames.append(f"A:{format_label(fr.pc)}")
            elif kind == "LetF":
                frames.append("L")
            elif kind == "FunendF":
                frames.append("F")
            elif kind == "WithLockF":
                frames.append(f"W:{format_label(fr.label)}")
            else:
                frames.append("I")
        rec = {
            "invocation": inv_index,
            "step": ex.steps,
            "kind": "step",
            "rule": ex.last_rule,
            "M": [format_label(l) for l in ex.M],
            "locks": [format_label(l) for l in ex.L],
            "frames": frames,
        }
        span = ex.redex.span if ex.redex is not None else None
        if span:
            rec["span"] = list(span)
        if ex.last_delta is not None:
            name, v, t = ex.last_delta
            rec["heap_delta"] = {name: fmt_value(v)}
        fh.write(json.dumps(rec) + "\n")

    return trace


class MalformedTrace(Exception):
    pass


def cmd_analyze(args) -> int:
    from .lattice import Lattice, parse_label as pl
    records = []
    try:
        with open(args.path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as ex:
        print(f"error: malformed trace: {ex}", file=sys.stderr)
        return 2

    header = next((r for r in records if r.get("kind") == "header"), None)
    if header is None:
        print("error: malformed trace: missing header record", file=sys.stderr)
        return 2
    lat = Lattice(header.get("principals", []),
                  [tuple(e) for e in header.get("delegations", [])])
    trust_text = args.trust or header.get("trust")
    if trust_text is None:
        print("error: trace carries no trust label; pass --trust", file=sys.stderr)
        return 2
    trust = pl(trust_text, lat)
    steps = [r for r in records if r.get("kind") == "step"]
    events = [r for r in records if r.get("kind") in ("up", "down", "set", "ret")]

    def frame_trust(label_text: str) -> bool:
        return lat.acts_for(pl(label_text, lat), trust)

    reentrant = []
    for r in steps:
        frames = r.get("frames", [])
        atpcs = [(i, f.split(":", 1)[1]) for i, f in enumerate(frames) if f.startswith("A:")]
        trusts = [frame_trust(lbl) for _, lbl in atpcs]
        witness = None
        for a in range(len(atpcs)):
            if not trusts[a]:
                continue
            for b in range(a + 1, len(atpcs)):
                if trusts[b]:
                    continue
                for c in range(b + 1, len(atpcs)):
                    if trusts[c]:
                        witness = (atpcs[a], atpcs[b], atpcs[c])
                        break
                break
            if witness:
                break
        if witness:
            outer_idx = witness[0][0]
            tail = True
            for f in frames[outer_idx + 1:]:
                if f.startswith("A:") and not frame_trust(f.split(":", 1)[1]):
                    break
                if f == "L" or f == "I":
                    tail = False
                    break
            reentrant.append((r.get("invocation", 0), r["step"], witness, tail))

    print(f"reentrant states: {len(reentrant)}")
    for invi, step, (w1, w2, w3), tail in reentrant[:50]:
        cls = "tail" if tail else "NON-TAIL"
        print(f"  inv {invi} step {step}: at-pc[{w1[1]}] .. at-pc[{w2[1]}] .. at-pc[{w3[1]}]  ({cls})")
    if len(reentrant) > 50:
        print(f"  ... and {len(reentrant) - 50} more")
    print(f"events: {len(events)}")
    for ev in events:
        bits = [f"inv {ev.get('invocation', 0)}", f"step {ev['step']}", ev["kind"]]
        for key in ("pc", "site", "loc", "value", "snapshot"):
            if key in ev:
                bits.append(f"{key}={ev[key]}")
        print("  " + " ".join(str(b) for b in bits))
    return 0


def cmd_suite(args) -> int:
    from .suite import run_suites
    results = run_suites(filter_text=args.filter, fast=args.fast)
    failed = [r for r in results if not r.ok]
    for r in results:
        mark = "PASS" if r.ok else "FAIL"
        print(f"[{mark}] {r.name}: {r.detail} ({r.seconds:.2f}s)")
    if args.xml:
        _write_junit(args.xml, results)
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")
    return 0 if not failed else 1


def _write_junit(path: str, results) -> None:
    import xml.etree.ElementTree as ET
    root = ET.Element("testsuite", name="serif-suite",
                      tests=str(len(results)),
                      failures=str(sum(not r.ok for r in results)))
    for r in results:
        case = ET.SubElement(root, "testcase", name=r.name, time=f"{r.seconds:.3f}")
        if not r.ok:
            fail = ET.SubElement(case, "failure", message=r.detail)
            fail.text = r.detail
    ET.ElementTree(root).write(path, encoding="unicode", xml_declaration=True)


if __name__ == "__main__":
    sys.exit(main())
