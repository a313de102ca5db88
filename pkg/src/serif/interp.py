"""Small-step execution with dynamic type/label checks, dynamic locks, the
attacker call rule, and the erased (bullet) semantics as a second mode.

The evaluation context is kept as an explicit frame stack, so one step costs
O(1) frame work plus the redex rule.  Fresh locations come from a
deterministic counter by default; a seeded allocator exercises the
determinism-up-to-location-names property.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .ast import (Assign, AtPc, BoolLit, Bullet, Call, Cast, Deref, Endorse,
                  FieldGet, Funend, If, IgnoreLocks, Let, Loc, LockIn, LType,
                  New, Node, Null, RefNew, Span, TBool, TClass, TRef, TUnit,
                  Unit, Var, WithLock, is_value, subst)
from .frontend import ClassTable, Invocation, fmt_value
from .lattice import BOT, TOP, Label, Lattice
from .monitor import Monitor, TailReport, TraceEvent, Violation
from .typecheck import TrustPartition

MODE_NORMAL = "normal"
MODE_ATTACKER_BYPASS = "attacker-bypass"

DEFAULT_STEP_BUDGET = 1_000_000


@dataclass
class Fault:
    kind: str  # LockViolation | BadCast | NullDeref
    span: Span | None
    message: str
    step: int = -1


class StuckError(Exception):
    """A stuck state outside the three fault kinds; impossible for checked
    programs, so reaching it indicates an interpreter or checker bug."""


@dataclass
class RunResult:
    outcome: str  # value | fault | nontermination
    value: Node | None = None
    fault: Fault | None = None
    steps: int = 0
    heap: dict | None = None
    monitor: Monitor | None = None

    @property
    def ok(self) -> bool:
        return self.outcome == "value"


class Allocator:
    """Fresh-location source: sequential names, or seeded random names for
    cross-run isomorphism checks."""

    def __init__(self, seed: int | None = None):
        self.counter = 0
        self.rng = random.Random(seed) if seed is not None else None
        self.used: set[str] = set()

    def fresh(self, heap: dict) -> str:
        if self.rng is None:
            while True:
                name = f"$:{self.counter}"
                self.counter += 1
                if name not in heap:
                    return name
        while True:
            name = f"$:{self.rng.randrange(1 << 30)}"
            if name not in heap and name not in self.used:
                self.used.add(name)
                return name


# evaluation-context frames; monitor bookkeeping is attached at push time
class LetF:
    __slots__ = ("var", "body", "phase", "twl", "has_trusted", "dirty_above")

    def __init__(self, var, body):
        self.var = var
        self.body = body


class FunendF:
    __slots__ = ("rtype", "phase", "twl", "has_trusted", "dirty_above")

    def __init__(self, rtype):
        self.rtype = rtype


class AtPcF:
    __slots__ = ("pc", "trusted", "phase", "twl", "has_trusted", "dirty_above")

    def __init__(self, pc):
        self.pc = pc


class WithLockF:
    __slots__ = ("label", "phase", "twl", "has_trusted", "dirty_above")

    def __init__(self, label):
        self.label = label


class IgnoreF:
    __slots__ = ("phase", "twl", "has_trusted", "dirty_above")


FRAME_KIND = {LetF: "let", FunendF: "funend", AtPcF: "at-pc",
              WithLockF: "with-lock", IgnoreF: "ignore-locks"}


class Execution:
    """One invocation's execution owning its configuration exclusively."""

    def __init__(self, ct: ClassTable, heap: dict, caller: Label, *,
                 mode: str = MODE_NORMAL, partition: TrustPartition | None = None,
                 monitor: Monitor | None = None, bullet: bool = False,
                 budget: int = DEFAULT_STEP_BUDGET, allocator: Allocator | None = None,
                 dynamic_checks: bool = True, trace=None, step_hook=None):
        self.ct = ct
        self.lat: Lattice = ct.lattice
        self.heap = heap  # name -> (value, LType)
        self.M: list[Label] = [caller]
        self.L: list[Label] = []
        self.mode = mode
        self.partition = partition
        self.monitor = monitor
        self.bullet = bullet
        self.budget = budget
        self.alloc = allocator or Allocator()
        self.dynamic_checks = dynamic_checks
        self.trace = trace
        self.step_hook = step_hook
        self.caller = caller
        self.steps = 0
        self.frames: list = []
        self.atpc_pcs: list[Label] = []  # labels of live at-pc frames
        self.redex: Node | None = None
        self._vt_cache: dict = {}
        if mode == MODE_ATTACKER_BYPASS and (partition is None or partition.attacker is None):
            raise ValueError("attacker-bypass mode needs a trust partition")
        if bullet and partition is None:
            raise ValueError("bullet mode needs a trust partition")

    # -- monitor-aware frame stack --

    def inner_pc(self) -> Label:
        return self.atpc_pcs[-1] if self.atpc_pcs else self.caller

    def push(self, fr) -> None:
        mon = self.monitor
        if mon is not None:
            parent = self.frames[-1] if self.frames else None
            phase = parent.phase if parent else 0
            twl = parent.twl if parent else False
            has_trusted = parent.has_trusted if parent else False
            dirty_above = parent.dirty_above if parent else False
            if isinstance(fr, AtPcF):
                fr.trusted = mon.trusted(fr.pc)
                if fr.trusted:
                    if phase == 0:
                        phase = 1
                    elif phase == 2:
                        phase = 3
                        mon.reentrant_steps.append(self.steps)
                        if dirty_above:
                            mon.violations.append(Violation(
                                self.steps, "non-tail-reentrancy",
                                "reentrant state whose outer trusted frame has pending work"))
                    has_trusted = True
                else:
                    if phase in (1, 3):
                        phase = 2
                    dirty_above = dirty_above or twl
                    twl = False
                    has_trusted = False
            elif isinstance(fr, (LetF, IgnoreF)):
                twl = twl or has_trusted
            fr.phase = phase
            fr.twl = twl
            fr.has_trusted = has_trusted
            fr.dirty_above = dirty_above
        if isinstance(fr, AtPcF):
            self.atpc_pcs.append(fr.pc)
        self.frames.append(fr)

    def pop(self):
        fr = self.frames.pop()
        if isinstance(fr, AtPcF):
            self.atpc_pcs.pop()
        return fr

    def focus(self, s: Node) -> None:
        """Descend through statement frames until the redex is a value or a
        non-statement expression."""
        while True:
            match s:
                case Let(var=x, bound=b, body=e2):
                    self.push(LetF(x, e2))
                    s = b
                case Funend(rtype=rt, body=b):
                    self.push(FunendF(rt))
                    s = b
                case AtPc(pc=p, body=b):
                    self.push(AtPcF(p))
                    s = b
                case WithLock(label=l, body=b):
                    self.push(WithLockF(l))
                    s = b
                case IgnoreLocks(body=b):
                    self.push(IgnoreF())
                    s = b
                case _:
                    self.redex = s
                    return

    def statement(self) -> Node:
        """Reconstruct the full statement from frames + redex."""
        s = self.redex
        for fr in reversed(self.frames):
            if isinstance(fr, LetF):
                s = Let(fr.var, s, fr.body)
            elif isinstance(fr, FunendF):
                s = Funend(fr.rtype, s)
            elif isinstance(fr, AtPcF):
                s = AtPc(fr.pc, s)
            elif isinstance(fr, WithLockF):
                s = WithLock(fr.label, s)
            else:
                s = IgnoreLocks(s)
        return s

    # -- dynamic value typing (the run-time information-security checks) --

    def value_has_type(self, v: Node, t: LType) -> bool:
        key = (id(v), t)
        hit = self._vt_cache.get(key)
        if hit is not None:
            return hit[1]
        out = self._value_has_type(v, t)
        self._vt_cache[key] = (v, out)
        return out

    def _value_has_type(self, v: Node, t: LType) -> bool:
        base = t.base
        match v:
            case Unit():
                return isinstance(base, TUnit)
            case BoolLit():
                return isinstance(base, TBool)
            case Null():
                return isinstance(base, TRef)
            case Loc(name=n):
                cell = self.heap.get(n)
                return (cell is not None and isinstance(base, TRef)
                        and cell[1] == base.inner)
            case New(cname=c, args=args):
                if not isinstance(base, TClass) or not self.ct.has_class(c):
                    return False
                if not self.ct.subclass_of(c, base.name):
                    return False
                flds = self.ct.fields(c)
                return (len(flds) == len(args)
                        and all(self.value_has_type(a, ft) for (_, ft), a in zip(flds, args)))
            case Bullet():
                return (self.bullet and self.partition is not None
                        and not self.partition.trusted(self.lat, t.label))
        return False

    # -- events --

    def _emit(self, ev: TraceEvent) -> None:
        self.monitor.emit(ev)

    def _event_call(self, redex: Call, recv_class: str, pc2: Label) -> None:
        mon = self.monitor
        if mon is None:
            return
        cur = self.inner_pc()
        cur_t, callee_t = mon.trusted(cur), mon.trusted(pc2)
        if not cur_t and callee_t:
            self._emit(TraceEvent(self.steps, "up", pc=cur,
                                  site=f"{recv_class}.{redex.mname}",
                                  value=fmt_value(redex.obj) + "." + redex.mname,
                                  snapshot=mon.snapshot(self.heap)))
        elif cur_t and not callee_t:
            self._emit(TraceEvent(self.steps, "down", pc=pc2,
                                  site=f"{recv_class}.{redex.mname}"))

    def _event_branch(self, pc: Label, tag: str) -> None:
        mon = self.monitor
        if mon is None:
            return
        if mon.trusted(self.inner_pc()) and not mon.trusted(pc):
            self._emit(TraceEvent(self.steps, "down", pc=pc, site=tag))

    def _event_set(self, loc: str, v: Node, t: LType) -> None:
        if self.monitor is not None:
            self._emit(TraceEvent(self.steps, "set", loc=loc, value=fmt_value(v)))

    def _event_ret(self, popped_pc: Label, v: Node) -> None:
        mon = self.monitor
        if mon is None:
            return
        if not mon.trusted(popped_pc) and mon.trusted(self.inner_pc()):
            self._emit(TraceEvent(self.steps, "ret", value=fmt_value(v)))

    # -- stepping --

    def _write(self, loc: str, v: Node, t: LType) -> None:
        self.heap[loc] = (v, t)
        self._event_set(loc, v, t)

    def run(self, start: Node) -> RunResult:
        self.focus(start)
        trace = self.trace
        while True:
            if self.steps >= self.budget:
                return RunResult("nontermination", steps=self.steps,
                                 heap=self.heap, monitor=self.monitor)
            if is_value(self.redex) and not self.frames:
                return RunResult("value", value=self.redex, steps=self.steps,
                                 heap=self.heap, monitor=self.monitor)
            out = self._step_once()
            self.steps += 1
            if self.step_hook is not None:
                self.step_hook(self)
            if trace is not None:
                trace(self)
            if out is not None:
                out.step = self.steps
                return RunResult("fault", fault=out, steps=self.steps,
                                 heap=self.heap, monitor=self.monitor)

    last_rule: str = ""
    last_delta: tuple | None = None

    def _step_once(self) -> Fault | None:
        """Apply exactly one rule; returns a Fault or None."""
        v = self.redex
        self.last_delta = None
        if is_value(v):
            fr = self.pop()
            if isinstance(fr, LetF):
                self.last_rule = "E-Let"
                self.focus(subst(fr.body, {fr.var: v}))
            elif isinstance(fr, FunendF):
                self.last_rule = "E-Return"
                if self.dynamic_checks and not self.value_has_type(v, fr.rtype):
                    raise StuckError(f"return value {fmt_value(v)} not of type {fr.rtype}")
                self.M.pop()
                self.redex = v
            elif isinstance(fr, AtPcF):
                self.last_rule = "E-AtPc"
                self._event_ret(fr.pc, v)
                self.redex = v
            elif isinstance(fr, WithLockF):
                self.last_rule = "E-Unlock"
                if not self.L or self.L[-1] != fr.label:
                    raise StuckError("lock list out of sync with with-lock frames")
                self.L.pop()
                self.redex = v
            else:
                self.last_rule = "E-IgnoreLocks"
                self.redex = v
            return None

        match v:
            case If(pc=pc, cond=c, then_e=e1, else_e=e2, then_tag=tt, else_tag=et):
                if isinstance(c, Bullet):
                    self.last_rule = "B-BulletCtx"
                    self.redex = Bullet()
                    return None
                if pc is None:
                    raise StuckError("if without a pc label; elaborate the program first")
                if not isinstance(c, BoolLit):
                    raise StuckError(f"if condition is not a boolean: {fmt_value(c)}")
                branch, tag = (e1, tt) if c.value else (e2, et)
                self.last_rule = "E-IfT" if c.value else "E-IfF"
                self._event_branch(pc, tag)
                self.push(AtPcF(pc))
                self.focus(branch)
                return None

            case RefNew(init=w, ann=t):
                self.last_rule = "E-Ref"
                if self.dynamic_checks:
                    if not self.value_has_type(w, t):
                        raise StuckError(f"ref init {fmt_value(w)} not of type {t}")
                    if not self.lat.acts_for(self.M[-1], t.label):
                        raise StuckError("executing code may not allocate at this integrity")
                loc = self.alloc.fresh(self.heap)
                stored = w
                if self.bullet and not self.partition.trusted(self.lat, t.label):
                    self.last_rule = "B-URef"
                    stored = Bullet()
                self._write(loc, stored, t)
                self.last_delta = (loc, stored, t)
                self.redex = Loc(loc)
                return None

            case Deref(target=w):
                if isinstance(w, Bullet):
                    self.last_rule = "B-BulletCtx"
                    self.redex = Bullet()
                    return None
                if isinstance(w, Null):
                    return Fault("NullDeref", v.span, "dereference of null")
                if not isinstance(w, Loc) or w.name not in self.heap:
                    raise StuckError(f"dereference of non-location {fmt_value(w)}")
                self.last_rule = "E-Deref"
                self.redex = self.heap[w.name][0]
                return None

            case Assign(target=t, value=w):
                if isinstance(t, Bullet):
                    self.last_rule = "B-BAssign"
                    self.redex = Unit()
                    return None
                if isinstance(t, Null):
                    return Fault("NullDeref", v.span, "assignment through null")
                if not isinstance(t, Loc) or t.name not in self.heap:
                    raise StuckError(f"assignment to non-location {fmt_value(t)}")
                cell_t = self.heap[t.name][1]
                if self.dynamic_checks:
                    if not self.value_has_type(w, cell_t):
                        raise StuckError(f"assigned value {fmt_value(w)} not of type {cell_t}")
                    if not self.lat.acts_for(self.M[-1], cell_t.label):
                        raise StuckError("executing code may not write this cell")
                stored = w
                if self.bullet and not self.partition.trusted(self.lat, cell_t.label):
                    self.last_rule = "B-UAssign"
                    stored = Bullet()
                else:
                    self.last_rule = "E-Assign"
                self._write(t.name, stored, cell_t)
                self.last_delta = (t.name, stored, cell_t)
                self.redex = Unit()
                return None

            case Cast(cname=c, value=w):
                if isinstance(w, Bullet):
                    self.last_rule = "B-BulletCtx"
                    self.redex = Bullet()
                    return None
                if not isinstance(w, New):
                    raise StuckError("cast of a non-object value")
                if not self.ct.subclass_of(w.cname, c):
                    return Fault("BadCast", v.span, f"{w.cname} is not a subclass of {c}")
                self.last_rule = "E-Cast"
                self.redex = w
                return None

            case FieldGet(obj=o, fname=f):
                if isinstance(o, Bullet):
                    self.last_rule = "B-BulletCtx"
                    self.redex = Bullet()
                    return None
                if not isinstance(o, New):
                    raise StuckError("field access on a non-object value")
                self.last_rule = "E-Field"
                for (fn, _), a in zip(self.ct.fields(o.cname), o.args):
                    if fn == f:
                        self.redex = a
                        return None
                raise StuckError(f"object {o.cname} has no field {f}")

            case Call(obj=o, mname=m, args=args):
                return self._step_call(v, o, m, args)

            case Endorse(value=w):
                self.last_rule = "E-Endorse"
                self.redex = w
                return None

            case LockIn(label=l, body=b):
                self.last_rule = "E-Lock"
                self.L.append(l)
                self.push(WithLockF(l))
                self.focus(b)
                return None

            case _:
                raise StuckError(f"no rule applies to {type(v).__name__}")

    def _step_call(self, redex: Call, o: Node, m: str, args: tuple) -> Fault | None:
        if isinstance(o, Bullet):
            self.last_rule = "B-BulletCtx"
            self.redex = Bullet()
            return None
        if not isinstance(o, New):
            raise StuckError(f"method call on a non-object {fmt_value(o)}")
        if not self.ct.has_method(o.cname, m):
            raise StuckError(f"unknown method {o.cname}.{m}")
        owner_label, xs, taus, pc1, pc2, body, rt = self.ct.mbody(o.cname, m)
        if self.dynamic_checks:
            if len(args) != len(taus):
                raise StuckError(f"arity mismatch calling {o.cname}.{m}")
            for a, t in zip(args, taus):
                if not self.value_has_type(a, t):
                    raise StuckError(f"argument {fmt_value(a)} not of type {t}")
            if not self.lat.acts_for(self.M[-1], pc1):
                raise StuckError(f"caller integrity below begin label of {o.cname}.{m}")
        locks_ok = all(self.lat.acts_for(pc1, self.lat.join(pc2, l)) for l in self.L)
        rule = "E-Call"
        if not locks_ok:
            bypass = (self.mode == MODE_ATTACKER_BYPASS
                      and self.lat.acts_for(self.partition.attacker, pc2))
            if not bypass:
                return Fault("LockViolation", redex.span,
                             f"dynamic lock forbids calling {o.cname}.{m}")
            rule = "E-CallAtk"
        self.last_rule = rule
        self._event_call(redex, o.cname, pc2)
        self.M.append(owner_label)
        mapping = dict(zip(xs, args))
        mapping["this"] = o
        self.push(FunendF(rt))
        self.push(AtPcF(pc2))
        self.focus(subst(body, mapping))
        return None


# -- invocation driving -------------------------------------------------------


def invocation_expr(inv: Invocation) -> Node:
    """!loc.m(args) desugared to let o = !loc in o.m(args)."""
    return Let("$o", Deref(Loc(inv.location, span=inv.span), span=inv.span),
               Call(Var("$o", span=inv.span), inv.mname, inv.args, span=inv.span),
               span=inv.span)


def run_invocation(inv: Invocation, ct: ClassTable, heap: dict, *,
                   mode: str = MODE_NORMAL, partition: TrustPartition | None = None,
                   monitor: Monitor | None = None, bullet: bool = False,
                   budget: int = DEFAULT_STEP_BUDGET, allocator: Allocator | None = None,
                   dynamic_checks: bool = True, trace=None, step_hook=None) -> RunResult:
    ex = Execution(ct, heap, inv.label, mode=mode, partition=partition,
                   monitor=monitor, bullet=bullet, budget=budget,
                   allocator=allocator, dynamic_checks=dynamic_checks,
                   trace=trace, step_hook=step_hook)
    result = ex.run(invocation_expr(inv))
    if result.outcome == "value":
        # surface expressions restore the label and lock stacks
        assert ex.M == [inv.label] and ex.L == [], "label stack not restored"
    return result


@dataclass
class SequenceResult:
    results: list[RunResult]
    heap: dict
    failed_index: int | None = None

    @property
    def ok(self) -> bool:
        return self.failed_index is None


def run_sequence(invs, ct: ClassTable, heap: dict, **kw) -> SequenceResult:
    """Run invocations in order, each feeding the next heap; stop at a fault."""
    results = []
    for i, inv in enumerate(invs):
        r = run_invocation(inv, ct, heap, **kw)
        results.append(r)
        heap = r.heap
        if r.outcome != "value":
            return SequenceResult(results, heap, failed_index=i)
    return SequenceResult(results, heap)


def assert_tail_only(result: RunResult) -> TailReport:
    """Tail-only report for a monitored execution."""
    mon = result.monitor
    if mon is None:
        raise ValueError("execution was not monitored")
    return TailReport(len(mon.reentrant_steps), list(mon.violations))
