"""Load programs and worlds from disk and assemble runnable configurations."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

from .ast import Loc, LType, New, Node
from .frontend import (ClassTable, Invocation, Program, World, parse_program,
                       parse_world, world_program_path)
from .lattice import Label
from .typecheck import Checker, TrustPartition, Verdict, program_labels


class WorldError(Exception):
    pass


@dataclass
class LoadedWorld:
    ct: ClassTable
    checker: Checker
    world: World
    partition: TrustPartition | None
    heap: dict  # name -> (value, LType)
    invocations: list[Invocation]
    program_verdict: Verdict
    source_name: str = "<world>"

    def fresh_heap(self) -> dict:
        return dict(self.heap)

    def sigma(self) -> dict[str, LType]:
        return {k: t for k, (_, t) in self.heap.items()}


def resolve_includes(src: str, base_dir: str) -> str:
    """Splice `include "file";` lines textually (class fragments only)."""
    out = []
    for line in src.splitlines():
        stripped = line.strip()
        if stripped.startswith("include"):
            m = re.match(r'include\s+"([^"]+)"\s*;', stripped)
            if not m:
                raise WorldError(f"malformed include line: {line!r}")
            inc_path = os.path.join(base_dir, m.group(1))
            with open(inc_path, encoding="utf-8") as fh:
                out.append(resolve_includes(fh.read(), os.path.dirname(inc_path)))
        else:
            out.append(line)
    return "\n".join(out)


def load_program(path: str) -> tuple[Program, ClassTable]:
    with open(path, encoding="utf-8") as fh:
        src = fh.read()
    src = resolve_includes(src, os.path.dirname(os.path.abspath(path)))
    prog = parse_program(src, os.path.basename(path))
    return prog, ClassTable(prog)


def _check_closed(name: str, v: Node, names: set[str]) -> None:
    if isinstance(v, Loc) and v.name not in names:
        raise WorldError(f"heap binding {name} references undefined location {v.name}")
    if isinstance(v, New):
        for a in v.args:
            _check_closed(name, a, names)


def load_world(path: str, *, program_override: str | None = None) -> LoadedWorld:
    with open(path, encoding="utf-8") as fh:
        src = fh.read()
    prog_path = program_override or world_program_path(src)
    if prog_path is None:
        raise WorldError(f"{path} names no program file")
    if not os.path.isabs(prog_path):
        prog_path = os.path.join(os.path.dirname(os.path.abspath(path)), prog_path)
    prog, ct = load_program(prog_path)
    world = parse_world(src, prog.lattice, os.path.basename(path))
    world.program = prog

    names = {nm for nm, _, _ in world.heap_bindings}
    heap: dict = {}
    for nm, v, t in world.heap_bindings:
        if nm in heap:
            raise WorldError(f"duplicate heap binding {nm}")
        _check_closed(nm, v, names)
        heap[nm] = (v, t)

    checker = Checker(ct)
    sigma = {k: t for k, (_, t) in heap.items()}
    # checking also elaborates omitted if-pc labels, which execution needs
    verdict = checker.check_class_table(sigma)
    heap_verdict = checker.check_heap(sigma, {k: v for k, (v, _) in heap.items()})
    verdict.diagnostics.extend(heap_verdict.diagnostics)

    partition = None
    if world.trust is not None:
        partition = TrustPartition(world.trust, world.attacker)
        partition.validate(ct.lattice, program_labels(ct))
    return LoadedWorld(ct, checker, world, partition, heap, list(world.invocations),
                       verdict, os.path.basename(path))


def check_invocations(lw: LoadedWorld) -> Verdict:
    diags = []
    sigma = lw.sigma()
    for inv in lw.invocations:
        diags.extend(lw.checker.check_invocation(sigma, inv).diagnostics)
    return Verdict(diags)
