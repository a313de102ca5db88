"""Runtime reentrancy analysis: pc extraction, reentrant-state detection,
tail classification, and the up/down/set/ret event log.

The monitor is observational; enforcement lives entirely in the interpreter's
lock premises.  The interpreter mirrors the frame-stack analysis here with an
incremental O(1)-per-push version; ``analyze_frames`` is the reference
formulation both are tested against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .ast import (AtPc, Funend, If, IgnoreLocks, Let, LType, Node, WithLock,
                  is_value)
from .lattice import Label, Lattice
from .typecheck import TrustPartition

# frame kinds for the statement-level analyzers
F_LET = "let"
F_FUNEND = "funend"
F_ATPC = "at-pc"
F_WITHLOCK = "with-lock"
F_IGNORE = "ignore-locks"

TAIL_KINDS = {F_FUNEND, F_ATPC, F_WITHLOCK}


def decompose(s: Node) -> tuple[list[tuple[str, object]], Node]:
    """Maximal evaluation-context decomposition of a statement.

    Returns (frames outer-to-inner, innermost redex); each frame is
    (kind, payload) where at-pc and with-lock carry their label.
    """
    frames: list[tuple[str, object]] = []
    while True:
        match s:
            case Let(var=x, bound=b, body=e2) if not is_value(b):
                frames.append((F_LET, (x, e2)))
                s = b
            case Funend(rtype=rt, body=b):
                frames.append((F_FUNEND, rt))
                s = b
            case AtPc(pc=p, body=b):
                frames.append((F_ATPC, p))
                s = b
            case WithLock(label=l, body=b):
                frames.append((F_WITHLOCK, l))
                s = b
            case IgnoreLocks(body=b) if not is_value(b):
                frames.append((F_IGNORE, None))
                s = b
            case _:
                return frames, s


def inner_pc(pc: Label, s: Node) -> Label:
    """pc at the innermost redex: updated by at-pc frames, transparent
    to let, funend, with-lock, and ignore-locks frames."""
    for kind, payload in decompose(s)[0]:
        if kind == F_ATPC:
            pc = payload
    return pc


def get_locks(locks: list[Label], s: Node) -> list[Label]:
    """Dynamic locks present once the redex completes: extended by
    with-lock frames, transparent to the others."""
    out = list(locks)
    for kind, payload in decompose(s)[0]:
        if kind == F_WITHLOCK:
            out.append(payload)
    return out


class NotReentrant(Exception):
    pass


@dataclass
class ReentrancyWitness:
    """Indices into the frame list of the three nested at-pc frames."""
    outer: int
    middle: int
    inner: int
    pc1: Label
    pc2: Label
    pc3: Label


def _atpc_trust(frames, lat: Lattice, partition: TrustPartition):
    return [(i, payload, partition.trusted(lat, payload))
            for i, (kind, payload) in enumerate(frames) if kind == F_ATPC]


def find_witness(frames, lat: Lattice, partition: TrustPartition) -> Optional[ReentrancyWitness]:
    """Outermost-first reentrancy witness over a frame list, if any.

    Any trusted frame below a later untrusted frame is also below the first
    untrusted frame, so scanning only the first untrusted frame per outer is
    complete.
    """
    atpcs = _atpc_trust(frames, lat, partition)
    for a, (i, p1, t1) in enumerate(atpcs):
        if not t1:
            continue
        for b in range(a + 1, len(atpcs)):
            j, p2, t2 = atpcs[b]
            if t2:
                continue
            for c in range(b + 1, len(atpcs)):
                k, p3, t3 = atpcs[c]
                if t3:
                    return ReentrancyWitness(i, j, k, p1, p2, p3)
            break
    return None


def outer_is_tail(frames, outer: int, lat: Lattice, partition: TrustPartition) -> bool:
    """Tail classification for a witness-outer frame: some untrusted at-pc
    must be reachable from it through funend/with-lock/at-pc frames only
    (the tail-context grammar)."""
    for idx in range(outer + 1, len(frames)):
        kind, payload = frames[idx]
        if kind == F_ATPC and not partition.trusted(lat, payload):
            return True
        if kind not in TAIL_KINDS:
            return False
    return False


def witness_is_tail(frames, w: ReentrancyWitness, lat: Lattice,
                    partition: TrustPartition) -> bool:
    return outer_is_tail(frames, w.outer, lat, partition)


def all_witness_outers_tail(frames, lat: Lattice, partition: TrustPartition):
    """Check the tail property for every witness-outer frame.

    Returns (reentrant, list of non-tail outer indices).  A frame i is a
    witness outer when a trusted at-pc at i is followed by an untrusted at-pc
    j and a trusted at-pc below j.
    """
    atpcs = _atpc_trust(frames, lat, partition)
    bad: list[int] = []
    reentrant = False
    for a, (i, _, t1) in enumerate(atpcs):
        if not t1:
            continue
        rest = atpcs[a + 1:]
        j = next((x for x in rest if not x[2]), None)
        if j is None:
            continue
        if not any(t3 for (k, _, t3) in rest if k > j[0]):
            continue
        reentrant = True
        if not outer_is_tail(frames, i, lat, partition):
            bad.append(i)
    return reentrant, bad


def is_reentrant(s: Node, lbl: Label, lat: Lattice,
                 attacker: Label | None = None) -> tuple[bool, Optional[ReentrancyWitness]]:
    """Three nested at-pc frames with trusted/untrusted/trusted pcs."""
    partition = TrustPartition(lbl, attacker)
    frames, _ = decompose(s)
    w = find_witness(frames, lat, partition)
    return (w is not None), w


def is_tail_reentrant(s: Node, lbl: Label, lat: Lattice,
                      attacker: Label | None = None) -> bool:
    partition = TrustPartition(lbl, attacker)
    frames, _ = decompose(s)
    w = find_witness(frames, lat, partition)
    if w is None:
        raise NotReentrant("statement is not reentrant at the given label")
    return witness_is_tail(frames, w, lat, partition)


# -- event log ----------------------------------------------------------------

@dataclass
class TraceEvent:
    step: int
    kind: str  # up | down | set | ret
    pc: Label | None = None
    site: str | None = None
    loc: str | None = None
    value: str | None = None
    snapshot: int | None = None

    def to_json(self) -> dict:
        from .lattice import format_label
        out: dict = {"step": self.step, "kind": self.kind}
        if self.pc is not None:
            out["pc"] = format_label(self.pc)
        if self.site is not None:
            out["site"] = self.site
        if self.loc is not None:
            out["loc"] = self.loc
        if self.value is not None:
            out["value"] = self.value
        if self.snapshot is not None:
            out["snapshot"] = self.snapshot
        return out


@dataclass
class Violation:
    step: int
    kind: str
    detail: str


@dataclass
class Monitor:
    """Collects the event log and tail-only violations for one execution."""
    lat: Lattice
    partition: TrustPartition
    keep_snapshots: bool = True
    events: list[TraceEvent] = field(default_factory=list)
    violations: list[Violation] = field(default_factory=list)
    snapshots: list[dict] = field(default_factory=list)
    reentrant_steps: list[int] = field(default_factory=list)

    def trusted(self, lbl: Label) -> bool:
        return self.partition.trusted(self.lat, lbl)

    def snapshot(self, heap: dict) -> int | None:
        if not self.keep_snapshots:
            return None
        self.snapshots.append(dict(heap))
        return len(self.snapshots) - 1

    def emit(self, ev: TraceEvent) -> None:
        self.events.append(ev)

    # stack discipline check used by tests: down/ret nest like parentheses
    def check_event_nesting(self) -> bool:
        depth = 0
        for ev in self.events:
            if ev.kind == "down":
                depth += 1
            elif ev.kind == "ret":
                if depth == 0:
                    return False
                depth -= 1
        return True


@dataclass
class TailReport:
    reentrant_states: int
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations
