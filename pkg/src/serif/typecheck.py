"""Static semantics: value typing, the expression judgment, class checking,
lock compliance, and trust partitions.

The expression judgment has the shape ``heap-type; env; pc; in-lock |- e : type
-| out-lock``.  Checking is algorithmic: each expression gets its principal
type (closed values type at any label, so their principal label is top) and
its strongest maintained-lock label; subsumption is applied at use sites.
Every failed premise is reported as a diagnostic carrying the exact acts-for
constraint that failed, so failures can be re-validated against the valuation
oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ast import (Assign, AtPc, BoolLit, Bullet, Call, Cast, Deref, Endorse,
                  FieldGet, Funend, If, IgnoreLocks, Let, Loc, LockIn, LType,
                  MethodDef, New, Node, Null, RefNew, Span, TBool, TClass,
                  TNullRef, TRef, TUnit, Unit, Var, WithLock, is_value)
from .frontend import ClassTable, Invocation, UnknownClass, UnknownMethod
from .lattice import BOT, TOP, Label, Lattice, format_label

HeapType = dict[str, LType]  # location name -> stored type


# -- constraints and verdicts -------------------------------------------------

@dataclass(frozen=True)
class ActsFor:
    lhs: Label
    rhs: Label

    def holds(self, lat: Lattice) -> bool:
        return lat.acts_for(self.lhs, self.rhs)

    def __str__(self) -> str:
        return f"{format_label(self.lhs)} => {format_label(self.rhs)}"


@dataclass(frozen=True)
class Diagnostic:
    rule: str
    message: str
    span: Span | None = None
    constraint: ActsFor | None = None

    def format(self, source_name: str = "<input>") -> str:
        line, col = self.span if self.span else (0, 0)
        detail = self.message if self.constraint is None else f"{self.message}: {self.constraint}"
        return f"{source_name}:{line}:{col}: {self.rule}: {detail}"

    def to_json(self) -> dict:
        return {
            "rule": self.rule,
            "message": self.message,
            "line": self.span[0] if self.span else None,
            "col": self.span[1] if self.span else None,
            "constraint": str(self.constraint) if self.constraint else None,
        }


@dataclass
class Verdict:
    diagnostics: list[Diagnostic]
    rtype: LType | None = None
    out_lock: Label | None = None

    @property
    def ok(self) -> bool:
        return not self.diagnostics

    def format(self, source_name: str = "<input>") -> str:
        return "\n".join(d.format(source_name) for d in self.diagnostics)


class PartitionError(Exception):
    pass


@dataclass(frozen=True)
class TrustPartition:
    """Split of the label lattice into honest and attacker-controlled labels.

    Pair form: trusted(l) iff l => trust; attacker power is ``attacker``.
    The explicit listing form names the trusted labels directly.
    """
    trust: Label | None
    attacker: Label | None
    explicit_trusted: frozenset[Label] | None = None

    def trusted(self, lat: Lattice, lbl: Label) -> bool:
        if self.explicit_trusted is not None:
            return lbl in self.explicit_trusted
        return lat.acts_for(lbl, self.trust)

    def validate(self, lat: Lattice, program_labels=()) -> None:
        """Every label must be attacker-dominated or honest, never both.

        For the pair form this is checked exactly over the lattice via the
        valuation semantics; the explicit listing is checked on the labels
        appearing in the program.
        """
        if self.explicit_trusted is not None:
            for lbl in program_labels:
                t = lbl in self.explicit_trusted
                a = self.attacker is not None and lat.acts_for(self.attacker, lbl)
                if t == a:
                    raise PartitionError(
                        f"label {format_label(lbl)} is not on exactly one side of the partition")
            return
        if self.trust is None or self.attacker is None:
            raise PartitionError("trust partition needs both trust and attacker labels")
        if lat.acts_for(self.attacker, self.trust):
            raise PartitionError("attacker label acts for the trust label; partition overlaps")
        vals = list(lat.valuations())
        for v in vals:
            if lat.eval_label(self.trust, v) != 1:
                continue
            for w in vals:
                if lat.eval_label(self.attacker, w) == 0:
                    if not all(w[p] <= v[p] for p in lat.principals):
                        raise PartitionError(
                            "some label is neither attacker-dominated nor trusted "
                            f"(witness valuations {v} / {w})")


# -- checker -------------------------------------------------------------------

class Checker:
    def __init__(self, ct: ClassTable):
        self.ct = ct
        self.lat = ct.lattice

    # -- value typing --

    def infer_value(self, sigma: HeapType, gamma: dict[str, LType],
                    v: Node, diags: list[Diagnostic]) -> LType | None:
        """Principal type; closed non-variable values type at any label (top)."""
        match v:
            case Var(name=n):
                t = gamma.get(n)
                if t is None:
                    diags.append(Diagnostic("Var", f"unbound variable {n}", v.span))
                    return None
                return t
            case Unit():
                return LType(TUnit(), TOP)
            case BoolLit():
                return LType(TBool(), TOP)
            case Null():
                return LType(TNullRef(), TOP)
            case Loc(name=n):
                t = sigma.get(n)
                if t is None:
                    diags.append(Diagnostic("Loc", f"unknown location {n}", v.span))
                    return None
                return LType(TRef(t), TOP)
            case New(cname=c, args=args):
                if not self.ct.has_class(c):
                    diags.append(Diagnostic("New", f"unknown class {c}", v.span))
                    return None
                flds = self.ct.fields(c)
                if len(flds) != len(args):
                    diags.append(Diagnostic(
                        "New", f"{c} expects {len(flds)} constructor args, got {len(args)}",
                        v.span))
                    return None
                for (fn, ft), a in zip(flds, args):
                    self.check_value(sigma, gamma, a, ft, diags)
                return LType(TClass(c), TOP)
            case Bullet():
                diags.append(Diagnostic("Bullet", "erased value outside bullet mode", v.span))
                return None
        diags.append(Diagnostic("Value", f"not a value: {type(v).__name__}", v.span))
        return None

    def subtype_v(self, t1: LType, t2: LType) -> bool:
        if isinstance(t1.base, TNullRef) and isinstance(t2.base, (TRef, TNullRef)):
            return self.lat.acts_for(t1.label, t2.label)
        return self.ct.subtype(t1, t2)

    def check_value(self, sigma: HeapType, gamma: dict[str, LType], v: Node,
                    expected: LType, diags: list[Diagnostic]) -> None:
        got = self.infer_value(sigma, gamma, v, diags)
        if got is None:
            return
        if not self.subtype_v(got, expected):
            if self.base_subtype_v(got, expected):
                diags.append(Diagnostic(
                    "SubtypeV", "value label too low for expected type", v.span,
                    ActsFor(got.label, expected.label)))
            else:
                diags.append(Diagnostic(
                    "SubtypeV", f"{got} is not a subtype of {expected}", v.span))

    def base_subtype_v(self, t1: LType, t2: LType) -> bool:
        if isinstance(t1.base, TNullRef) and isinstance(t2.base, (TRef, TNullRef)):
            return True
        return self.ct.subtype_base(t1.base, t2.base)

    def type_join(self, t1: LType, t2: LType, span: Span | None,
                  diags: list[Diagnostic]) -> LType:
        lbl = self.lat.join(t1.label, t2.label)
        b1, b2 = t1.base, t2.base
        if b1 == b2:
            return LType(b1, lbl)
        if isinstance(b1, TNullRef) and isinstance(b2, (TRef, TNullRef)):
            return LType(b2, lbl)
        if isinstance(b2, TNullRef) and isinstance(b1, TRef):
            return LType(b1, lbl)
        if isinstance(b1, TClass) and isinstance(b2, TClass):
            chain2 = self.ct.superclass_chain(b2.name) + ["Object"]
            for c in self.ct.superclass_chain(b1.name) + ["Object"]:
                if c in chain2:
                    return LType(TClass(c), lbl)
        diags.append(Diagnostic("If", f"branch types {t1} and {t2} do not join", span))
        return LType(b1, lbl)

    # -- expression judgment --

    def check_expr(self, sigma: HeapType, gamma: dict[str, LType], pc: Label,
                   lock_in: Label, e: Node, diags: list[Diagnostic]) -> tuple[LType, Label]:
        """Returns the principal (type, out-lock); appends failure diagnostics."""
        lat = self.lat
        match e:
            case _ if is_value(e):
                t = self.infer_value(sigma, gamma, e, diags)
                return (t if t is not None else LType(TUnit(), TOP)), TOP

            case If(cond=c, then_e=e1, else_e=e2):
                tc = self.infer_value(sigma, gamma, c, diags)
                cond_lbl = TOP
                if tc is not None:
                    if not isinstance(tc.base, TBool):
                        diags.append(Diagnostic("If", f"condition has type {tc}, not bool", e.span))
                    cond_lbl = tc.label
                if e.pc is None:
                    e.pc = lat.join(pc, cond_lbl)  # elaborate the omitted pc
                pc2 = e.pc
                if not lat.acts_for(cond_lbl, pc2):
                    diags.append(Diagnostic("If", "condition label must act for the branch pc",
                                            e.span, ActsFor(cond_lbl, pc2)))
                if not lat.acts_for(pc, pc2):
                    diags.append(Diagnostic("If", "ambient pc must act for the branch pc",
                                            e.span, ActsFor(pc, pc2)))
                t1, o1 = self.check_expr(sigma, gamma, pc2, lock_in, e1, diags)
                t2, o2 = self.check_expr(sigma, gamma, pc2, lock_in, e2, diags)
                t = self.type_join(t1, t2, e.span, diags)
                t = LType(t.base, lat.join(t.label, cond_lbl))
                return t, lat.join(o1, o2)

            case RefNew(init=v, ann=ann):
                self.check_wf_type(ann, e.span, diags)
                self.check_value(sigma, gamma, v, ann, diags)
                if not lat.acts_for(pc, ann.label):
                    diags.append(Diagnostic("Ref", "pc must protect the cell type",
                                            e.span, ActsFor(pc, ann.label)))
                return LType(TRef(ann), TOP), TOP

            case Deref(target=v):
                tv = self.infer_value(sigma, gamma, v, diags)
                if tv is None or isinstance(tv.base, TNullRef):
                    return LType(TUnit(), TOP), TOP
                if not isinstance(tv.base, TRef):
                    diags.append(Diagnostic("Deref", f"dereference of non-reference {tv}", e.span))
                    return LType(TUnit(), TOP), TOP
                inner = tv.base.inner
                return LType(inner.base, lat.join(inner.label, tv.label)), TOP

            case Assign(target=t, value=v):
                tt = self.infer_value(sigma, gamma, t, diags)
                if tt is None:
                    return LType(TUnit(), TOP), TOP
                if isinstance(tt.base, TNullRef):
                    tv = self.infer_value(sigma, gamma, v, diags)
                    inner = tv if tv is not None else LType(TUnit(), TOP)
                elif isinstance(tt.base, TRef):
                    inner = tt.base.inner
                    self.check_value(sigma, gamma, v, inner, diags)
                else:
                    diags.append(Diagnostic("Assign", f"assignment to non-reference {tt}", e.span))
                    return LType(TUnit(), TOP), TOP
                bound = lat.join(pc, tt.label)
                if not lat.acts_for(bound, inner.label):
                    diags.append(Diagnostic("Assign", "pc and reference label must protect the cell",
                                            e.span, ActsFor(bound, inner.label)))
                return LType(TUnit(), TOP), TOP

            case Cast(cname=c, value=v):
                tv = self.infer_value(sigma, gamma, v, diags)
                if not self.ct.has_class(c):
                    diags.append(Diagnostic("Cast", f"unknown class {c}", e.span))
                    return LType(TUnit(), TOP), TOP
                if tv is None or not isinstance(tv.base, TClass):
                    diags.append(Diagnostic("Cast", "cast applies to object values", e.span))
                    return LType(TClass(c), TOP), TOP
                d = tv.base.name
                if not (self.ct.subclass_of(c, d) or self.ct.subclass_of(d, c)):
                    diags.append(Diagnostic("Cast", f"classes {c} and {d} are unrelated", e.span))
                return LType(TClass(c), tv.label), TOP

            case FieldGet(obj=o, fname=f):
                to = self.infer_value(sigma, gamma, o, diags)
                if to is None or not isinstance(to.base, TClass):
                    diags.append(Diagnostic("Field", "field access on a non-object", e.span))
                    return LType(TUnit(), TOP), TOP
                for fn, ft in self.ct.fields(to.base.name):
                    if fn == f:
                        return LType(ft.base, lat.join(ft.label, to.label)), TOP
                diags.append(Diagnostic("Field", f"unknown field {to.base.name}.{f}", e.span))
                return LType(TUnit(), TOP), TOP

            case Call(obj=o, mname=m, args=args):
                to = self.infer_value(sigma, gamma, o, diags)
                if to is None or not isinstance(to.base, TClass):
                    diags.append(Diagnostic("Call", "method call on a non-object", e.span))
                    return LType(TUnit(), TOP), TOP
                cname = to.base.name
                if not self.ct.has_method(cname, m):
                    diags.append(Diagnostic("Call", f"unknown method {cname}.{m}", e.span))
                    return LType(TUnit(), TOP), TOP
                taus, pc1, pc2, lock_m, rt = self.ct.mtype(cname, m)
                if len(taus) != len(args):
                    diags.append(Diagnostic("Call", f"{cname}.{m} expects {len(taus)} args, "
                                            f"got {len(args)}", e.span))
                for ta, a in zip(taus, args):
                    self.check_value(sigma, gamma, a, ta, diags)
                caller = lat.join(pc, to.label)
                if not lat.acts_for(caller, pc1):
                    diags.append(Diagnostic("Call", "caller integrity must reach the begin label",
                                            e.span, ActsFor(caller, pc1)))
                lock_bound = lat.join(pc2, lock_in)
                if not lat.acts_for(pc1, lock_bound):
                    diags.append(Diagnostic("Call", "call would violate a static lock",
                                            e.span, ActsFor(pc1, lock_bound)))
                atten = lat.join(pc2, to.label)
                if not lat.acts_for(atten, rt.label):
                    diags.append(Diagnostic("Call", "return type is more trusted than the callee",
                                            e.span, ActsFor(atten, rt.label)))
                return rt, lat.join(lock_m, pc2)

            case Endorse(value=v, frm=frm, to=to):
                tv = self.infer_value(sigma, gamma, v, diags)
                base = tv.base if tv is not None else TUnit()
                if tv is not None:
                    self.check_value(sigma, gamma, v, LType(base, frm), diags)
                if not lat.acts_for(pc, to):
                    diags.append(Diagnostic("Endorse", "pc must act for the endorsement target",
                                            e.span, ActsFor(pc, to)))
                return LType(base, to), TOP

            case LockIn(label=l, body=b):
                residual = lat.label_minus(lock_in, l)
                t, o = self.check_expr(sigma, gamma, pc, residual, b, diags)
                return t, lat.meet(o, l)

            case Let(var=x, bound=b, body=body):
                t1, o1 = self.check_expr(sigma, gamma, pc, lock_in, b, diags)
                if not lat.acts_for(o1, lock_in):
                    diags.append(Diagnostic(
                        "Let", "bound expression must maintain the static locks",
                        b.span or e.span, ActsFor(o1, lock_in)))
                t2, o2 = self.check_expr(sigma, {**gamma, x: t1}, pc, lock_in, body, diags)
                return t2, o2

            case IgnoreLocks(body=b):
                t, _ = self.check_expr(sigma, gamma, pc, BOT, b, diags)
                return t, TOP

            case AtPc(pc=p, body=b):
                return self.check_expr(sigma, gamma, p, lock_in, b, diags)

            case WithLock(label=l, body=b):
                residual = lat.label_minus(lock_in, l)
                t, o = self.check_expr(sigma, gamma, pc, residual, b, diags)
                return t, lat.meet(o, l)

            case Funend(rtype=rt, body=b):
                # the frame's input lock is existential: a live method body
                # checks at its at-pc label, a finished one at top
                if isinstance(b, AtPc):
                    inner_lock = b.pc
                elif is_value(b):
                    inner_lock = TOP
                else:
                    inner_lock = pc
                t, o = self.check_expr(sigma, gamma, pc, inner_lock, b, diags)
                if not self.subtype_v(t, rt):
                    diags.append(Diagnostic("Return", f"body type {t} does not match frame type {rt}",
                                            e.span, ActsFor(t.label, rt.label)
                                            if self.base_subtype_v(t, rt) else None))
                return rt, lat.join(inner_lock, o)

        diags.append(Diagnostic("Expr", f"unknown expression {type(e).__name__}", e.span))
        return LType(TUnit(), TOP), TOP

    # -- well-formed types --

    def check_wf_type(self, t: LType, span: Span | None, diags: list[Diagnostic]) -> None:
        base = t.base
        if isinstance(base, TClass) and not self.ct.has_class(base.name):
            diags.append(Diagnostic("Type", f"unknown class {base.name}", span))
        elif isinstance(base, TRef):
            self.check_wf_type(base.inner, span, diags)

    # -- class checking --

    def check_method(self, sigma: HeapType, cname: str, m: MethodDef) -> Verdict:
        diags: list[Diagnostic] = []
        cd = self.ct.get(cname)
        lat = self.lat
        for _, pt in m.params:
            self.check_wf_type(pt, m.span, diags)
        self.check_wf_type(m.rtype, m.span, diags)
        if not lat.acts_for(cd.code_label, m.pc2):
            diags.append(Diagnostic("Method-Ok", "code label must act for the body pc",
                                    m.span, ActsFor(cd.code_label, m.pc2)))
        for pn, pt in m.params:
            if not lat.acts_for(m.pc1, pt.label):
                diags.append(Diagnostic(
                    "Method-Ok", f"begin label must protect parameter {pn}",
                    m.span, ActsFor(m.pc1, pt.label)))
        gamma = {x: t for x, t in m.params}
        gamma["this"] = LType(TClass(cname), m.pc2)
        # the static input lock of a method body is its own body pc
        lock_in = m.pc2
        bt, out = self.check_expr(sigma, gamma, m.pc2, lock_in, m.body, diags)
        if not self.subtype_v(bt, m.rtype):
            diags.append(Diagnostic(
                "Method-Ok", f"body type {bt} does not match declared {m.rtype}", m.span,
                ActsFor(bt.label, m.rtype.label) if self.base_subtype_v(bt, m.rtype) else None))
        maintained = lat.join(lock_in, out)
        if not lat.acts_for(maintained, m.lock):
            diags.append(Diagnostic("Method-Ok", "body does not maintain the declared lock label",
                                    m.span, ActsFor(maintained, m.lock)))
        # override consistency: a redefinition must match the inherited signature
        sup = cd.superclass
        if sup != "Object" and self.ct.has_method(sup, m.name):
            staus, spc1, spc2, slock, srt = self.ct.mtype(sup, m.name)
            mine = ([t for _, t in m.params], m.pc1, m.pc2, m.lock, m.rtype)
            if mine != (staus, spc1, spc2, slock, srt):
                diags.append(Diagnostic("Can-Override",
                                        f"{cname}.{m.name} changes the inherited signature",
                                        m.span))
        return Verdict(diags, bt, out)

    def check_class(self, sigma: HeapType, cname: str) -> Verdict:
        diags: list[Diagnostic] = []
        cd = self.ct.get(cname)
        if not self.ct.has_class(cd.superclass):
            diags.append(Diagnostic("Class-Ok", f"unknown superclass {cd.superclass}", cd.span))
            return Verdict(diags)
        try:
            flds = self.ct.fields(cname)
        except Exception as ex:  # duplicate fields
            diags.append(Diagnostic("Class-Ok", str(ex), cd.span))
            return Verdict(diags)
        for _, ft in flds:
            self.check_wf_type(ft, cd.span, diags)
        for m in cd.methods.values():
            diags.extend(self.check_method(sigma, cname, m).diagnostics)
        return Verdict(diags)

    def check_class_table(self, sigma: HeapType | None = None) -> Verdict:
        sigma = sigma or {}
        diags: list[Diagnostic] = []
        for cname in sorted(self.ct.classes):
            diags.extend(self.check_class(sigma, cname).diagnostics)
        return Verdict(diags)

    def check_invocation(self, sigma: HeapType, inv: Invocation) -> Verdict:
        diags: list[Diagnostic] = []
        expr = Let("$o", Deref(Loc(inv.location, span=inv.span), span=inv.span),
                   Call(Var("$o", span=inv.span), inv.mname, inv.args, span=inv.span),
                   span=inv.span)
        t, out = self.check_expr(sigma, {}, inv.label, BOT, expr, diags)
        return Verdict(diags, t, out)

    def check_heap(self, sigma: HeapType, heap_values: dict[str, Node]) -> Verdict:
        diags: list[Diagnostic] = []
        for name in heap_values:
            self.check_value(sigma, {}, heap_values[name], sigma[name], diags)
        return Verdict(diags)


def protects(lat: Lattice, lbl: Label, t: LType) -> bool:
    """lbl protects t{l'} iff lbl => l'."""
    return lat.acts_for(lbl, t.label)


# -- lock compliance -----------------------------------------------------------

def complies_with_locks_stmt(lat: Lattice, partition: TrustPartition,
                             pc: Label, s: Node) -> tuple[bool, Span | None]:
    """Statement form of lock compliance; returns a witness span on failure."""
    match s:
        case If(then_e=e1, else_e=e2):
            ok, sp = complies_with_locks_stmt(lat, partition, pc, e1)
            if not ok:
                return ok, sp
            return complies_with_locks_stmt(lat, partition, pc, e2)
        case LockIn(body=b) | WithLock(body=b) | Funend(body=b):
            return complies_with_locks_stmt(lat, partition, pc, b)
        case Let(bound=b, body=e2):
            ok, sp = complies_with_locks_stmt(lat, partition, pc, b)
            if not ok:
                return ok, sp
            return complies_with_locks_stmt(lat, partition, pc, e2)
        case AtPc(pc=p, body=b):
            return complies_with_locks_stmt(lat, partition, p, b)
        case IgnoreLocks(body=b):
            if partition.trusted(lat, pc):
                return False, s.span
            return complies_with_locks_stmt(lat, partition, pc, b)
        case _:
            return True, None


def complies_with_locks(ct: ClassTable, partition: TrustPartition):
    """Class-table form: no ignore-locks-in inside any method of trusted code.

    Returns (ok, [(class, method, span)]) listing offending occurrences.
    """
    lat = ct.lattice
    bad = []
    for cname, cd, m in ct.all_method_defs():
        ok, span = complies_with_locks_stmt(lat, partition, cd.code_label, m.body)
        if not ok:
            bad.append((cname, m.name, span))
    return (not bad), bad


def program_labels(ct: ClassTable):
    """All labels appearing in the class table (for partition validation)."""
    out: set[Label] = set()

    def of_type(t: LType):
        out.add(t.label)
        if isinstance(t.base, TRef):
            of_type(t.base.inner)

    def of_expr(e: Node):
        match e:
            case If(pc=p, cond=c, then_e=a, else_e=b):
                if p is not None:
                    out.add(p)
                of_expr(a)
                of_expr(b)
            case RefNew(ann=a, init=v):
                of_type(a)
            case Endorse(frm=f, to=t):
                out.add(f)
                out.add(t)
            case LockIn(label=l, body=b) | WithLock(label=l, body=b):
                out.add(l)
                of_expr(b)
            case Let(bound=b, body=e2):
                of_expr(b)
                of_expr(e2)
            case IgnoreLocks(body=b) | Funend(body=b) | AtPc(body=b):
                of_expr(b)
            case _:
                pass

    for cname, cd, m in ct.all_method_defs():
        out.add(cd.code_label)
        out.add(m.pc1)
        out.add(m.pc2)
        out.add(m.lock)
        for _, pt in m.params:
            of_type(pt)
        of_type(m.rtype)
        of_expr(m.body)
    for cd in ct.classes.values():
        for _, ft in cd.fields:
            of_type(ft)
    return out
