"""Erasure equivalences, attacker-model machinery, and the security property
suites: the noninterference oracle, tail-only reentrancy, and heap
isomorphism checks.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .ast import (AtPc, Assign, BoolLit, Bullet, Call, Cast, ClassDef, Deref,
                  Endorse, FieldGet, Funend, If, IgnoreLocks, Let, Loc,
                  LockIn, LType, MethodDef, New, Node, Null, RefNew, TBool,
                  TClass, TRef, TUnit, Unit, Var, WithLock, ast_equal,
                  is_value)
from .frontend import ClassTable, Invocation, Program, fmt_expr, fmt_value
from .lattice import BOT, TOP, Label, Lattice, format_label
from .monitor import Monitor
from .interp import (MODE_NORMAL, Allocator, RunResult, run_invocation)
from .typecheck import Checker, TrustPartition

FULL_TRUST = TrustPartition(BOT, None)  # trusts every label: keeps all cells


# -- code erasure -------------------------------------------------------------

def erase_expr(e: Node, pc: Label, lat: Lattice, partition: TrustPartition) -> str:
    """Erasure of an expression at ambient pc; low-integrity branches of
    conditionals become holes."""
    match e:
        case If(pc=p, cond=c, then_e=a, else_e=b):
            bp = p if p is not None else pc
            if not partition.trusted(lat, bp):
                return f"if{{{format_label(bp)}}} {fmt_value(c)} then # else #"
            sa = erase_expr(a, bp, lat, partition)
            sb = erase_expr(b, bp, lat, partition)
            return f"if{{{format_label(bp)}}} {fmt_value(c)} then {{{sa}}} else {{{sb}}}"
        case Let(var=x, bound=bnd, body=body):
            return (f"let {x} = {erase_expr(bnd, pc, lat, partition)} in "
                    f"{erase_expr(body, pc, lat, partition)}")
        case LockIn(label=l, body=b):
            return f"lock {format_label(l)} in {erase_expr(b, pc, lat, partition)}"
        case IgnoreLocks(body=b):
            return f"ignore-locks-in {erase_expr(b, pc, lat, partition)}"
        case _:
            return fmt_expr(e)


def erase_ct(ct: ClassTable, partition: TrustPartition) -> str:
    """Canonical printed erasure: drops low-integrity classes, methods whose
    body pc is low, and low branches of conditionals."""
    lat = ct.lattice
    out = []
    for cname in sorted(ct.classes):
        cd = ct.classes[cname]
        if not partition.trusted(lat, cd.code_label):
            continue
        out.append(f"class {cname}{{{format_label(cd.code_label)}}} extends {cd.superclass}")
        for fn, ftype in cd.fields:
            out.append(f"  {fn}: {ftype};")
        for mname in sorted(cd.methods):
            m = cd.methods[mname]
            if not partition.trusted(lat, m.pc2):
                continue
            sig = (f"  {mname}{{{format_label(m.pc1)} >> {format_label(m.pc2)}; "
                   f"{format_label(m.lock)}}}"
                   f"({', '.join(f'{x}: {t}' for x, t in m.params)}): {m.rtype}")
            out.append(sig + " { " + erase_expr(m.body, m.pc2, lat, partition) + " }")
    return "\n".join(out)


def ct_equiv(ct1: ClassTable, ct2: ClassTable, partition: TrustPartition) -> bool:
    return erase_ct(ct1, partition) == erase_ct(ct2, partition)


# -- heap erasure and isomorphism ---------------------------------------------

def erase_heap(heap: dict, lat: Lattice, partition: TrustPartition) -> dict:
    return {k: v for k, v in heap.items() if partition.trusted(lat, v[1].label)}


def bullet_erase_heap(heap: dict, lat: Lattice, partition: TrustPartition) -> dict:
    return {k: (v if partition.trusted(lat, t.label) else Bullet(), t)
            for k, (v, t) in heap.items()}


def heap_equiv(h1: dict, h2: dict, lat: Lattice, partition: TrustPartition) -> bool:
    e1 = erase_heap(h1, lat, partition)
    e2 = erase_heap(h2, lat, partition)
    if e1.keys() != e2.keys():
        return False
    return all(e1[k][1] == e2[k][1] and ast_equal(e1[k][0], e2[k][0]) for k in e1)


def _value_locs(v: Node, out: list) -> None:
    if isinstance(v, Loc):
        out.append(v.name)
    elif isinstance(v, New):
        for a in v.args:
            _value_locs(a, out)


def _match_value(v1: Node, v2: Node, theta: dict, used: set) -> bool:
    """Unify v1 with theta(v2), extending theta (v2-name -> v1-name)."""
    if isinstance(v1, Loc) and isinstance(v2, Loc):
        bound = theta.get(v2.name)
        if bound is not None:
            return bound == v1.name
        if v1.name in used:
            return False
        theta[v2.name] = v1.name
        used.add(v1.name)
        return True
    if isinstance(v1, New) and isinstance(v2, New):
        if v1.cname != v2.cname or len(v1.args) != len(v2.args):
            return False
        return all(_match_value(a, b, theta, used) for a, b in zip(v1.args, v2.args))
    return type(v1) is type(v2) and ast_equal(v1, v2)


def heap_iso(h1: dict, h2: dict, lat: Lattice,
             partition: TrustPartition) -> dict | None:
    """Location renaming theta with erase(h1) = erase(theta(h2)); returns the
    witness as a dict (h2 location -> h1 location) or None.

    Matching walks kept cells in a signature-pruned backtracking search;
    heaps here are small rooted object graphs.
    """
    e1 = erase_heap(h1, lat, partition)
    e2 = erase_heap(h2, lat, partition)
    if len(e1) != len(e2):
        return None
    names1 = sorted(e1)
    names2 = sorted(e2)
    by_type1: dict = {}
    for n in names1:
        by_type1.setdefault(e1[n][1], []).append(n)
    by_type2: dict = {}
    for n in names2:
        by_type2.setdefault(e2[n][1], []).append(n)
    if by_type1.keys() != by_type2.keys():
        return None
    if any(len(by_type1[t]) != len(by_type2[t]) for t in by_type1):
        return None

    order = sorted(e2, key=lambda n: (str(e2[n][1]), n))

    def backtrack(i: int, theta: dict, used: set):
        if i == len(order):
            return dict(theta)
        n2 = order[i]
        t2 = e2[n2][1]
        pre_bound = theta.get(n2)
        candidates = [pre_bound] if pre_bound is not None else by_type1[t2]
        for n1 in candidates:
            if n1 not in e1 or e1[n1][1] != t2:
                continue
            if pre_bound is None and n1 in used:
                continue
            snapshot = dict(theta)
            snap_used = set(used)
            if pre_bound is None:
                theta[n2] = n1
                used.add(n1)
            if _match_value(e1[n1][0], e2[n2][0], theta, used):
                out = backtrack(i + 1, theta, used)
                if out is not None:
                    return out
            theta.clear()
            theta.update(snapshot)
            used.clear()
            used.update(snap_used)
        return None

    return backtrack(0, {}, set())


def heap_iso_full(h1: dict, h2: dict, lat: Lattice) -> dict | None:
    """Location-name isomorphism over the whole heap."""
    return heap_iso(h1, h2, lat, FULL_TRUST)


def apply_theta_value(v: Node, theta: dict) -> Node:
    if isinstance(v, Loc):
        return Loc(theta.get(v.name, v.name))
    if isinstance(v, New):
        return New(v.cname, tuple(apply_theta_value(a, theta) for a in v.args))
    return v


def apply_theta_heap(heap: dict, theta: dict) -> dict:
    return {theta.get(k, k): (apply_theta_value(v, theta), t)
            for k, (v, t) in heap.items()}


# -- endorsement freedom --------------------------------------------------------

def is_endorsement_free(ct: ClassTable, lbl: Label) -> tuple[bool, tuple | None]:
    """No control-flow or data endorsement crossing into trust at lbl.

    Returns (ok, witness) where witness is (class, method, span) on failure.
    """
    lat = ct.lattice
    for cname, cd, m in ct.all_method_defs():
        if not (lat.acts_for(m.pc1, lbl) or not lat.acts_for(m.pc2, lbl)):
            return False, (cname, m.name, m.span)
        bad = _find_endorse(m.body, lat, lbl)
        if bad is not None:
            return False, (cname, m.name, bad.span)
    return True, None


def _find_endorse(e: Node, lat: Lattice, lbl: Label):
    match e:
        case Endorse(frm=f, to=t):
            if not (lat.acts_for(f, lbl) or not lat.acts_for(t, lbl)):
                return e
            return None
        case If(then_e=a, else_e=b):
            return _find_endorse(a, lat, lbl) or _find_endorse(b, lat, lbl)
        case Let(bound=a, body=b):
            return _find_endorse(a, lat, lbl) or _find_endorse(b, lat, lbl)
        case (LockIn(body=b) | IgnoreLocks(body=b) | Funend(body=b)
              | AtPc(body=b) | WithLock(body=b)):
            return _find_endorse(b, lat, lbl)
        case _:
            return None


# -- value inhabitation and heap perturbation -----------------------------------

def inhabit(ct: ClassTable, t: LType, rng: random.Random | None = None,
            depth: int = 0) -> Node:
    """Some value of the given type: unit, a boolean, null, or a constructed
    object with inhabited fields."""
    if depth > 16:
        raise ValueError("type has no finitely constructible inhabitant")
    base = t.base
    if isinstance(base, TUnit):
        return Unit()
    if isinstance(base, TBool):
        return BoolLit(rng.random() < 0.5 if rng else True)
    if isinstance(base, TRef):
        return Null()
    if isinstance(base, TClass):
        cname = base.name
        if rng is not None:
            subs = [c for c in ct.classes if ct.subclass_of(c, cname)]
            if cname == "Object":
                subs = subs or ["Object"]
            if subs:
                weights = [3 if c == cname else 1 for c in subs]
                cname = rng.choices(subs, weights=weights)[0]
        if cname == "Object":
            return New("Object", ())
        flds = ct.fields(cname)
        return New(cname, tuple(inhabit(ct, ft, rng, depth + 1) for _, ft in flds))
    raise ValueError(f"cannot inhabit {t}")


def perturb_heap(ct: ClassTable, heap: dict, partition: TrustPartition,
                 rng: random.Random) -> dict:
    """Randomize the values of low-integrity cells, drawing replacements by
    type; trusted cells are untouched, so the result is equivalent."""
    lat = ct.lattice
    out = {}
    for k, (v, t) in heap.items():
        if partition.trusted(lat, t.label):
            out[k] = (v, t)
            continue
        if isinstance(t.base, TRef) and rng.random() < 0.5:
            # keep a valid reference graph half the time
            out[k] = (v, t)
        else:
            out[k] = (inhabit(ct, t, rng), t)
    return out


# -- noninterference oracle ------------------------------------------------------

@dataclass
class NIReport:
    applicable: bool
    reason: str = ""
    trials: int = 0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.applicable and not self.failures


def ni_test(ct: ClassTable, inv: Invocation, heap: dict,
            partition: TrustPartition, trials: int = 100,
            seed: int = 0, budget: int = 200_000) -> NIReport:
    """Run an invocation on pairs of equivalent heaps and require final heaps
    to be location-name isomorphic at the trust label; a bullet-mode run from
    the bullet-erased heap is the second oracle."""
    lat = ct.lattice
    free, witness = is_endorsement_free(ct, partition.trust)
    if not free:
        return NIReport(False, f"class table endorses at {witness[0]}.{witness[1]}")
    checker = Checker(ct)
    sigma = {k: t for k, (v, t) in heap.items()}
    if not checker.check_invocation(sigma, inv).ok:
        return NIReport(False, "invocation is not well-typed against the heap")
    rng = random.Random(seed)
    report = NIReport(True, trials=trials)
    for trial in range(trials):
        h1 = perturb_heap(ct, heap, partition, rng)
        h2 = perturb_heap(ct, heap, partition, rng)
        if not heap_equiv(h1, h2, lat, partition):
            report.failures.append((trial, "perturbation broke equivalence"))
            continue
        r1 = run_invocation(inv, ct, dict(h1), budget=budget)
        r2 = run_invocation(inv, ct, dict(h2), budget=budget)
        if r1.outcome != "value" or r2.outcome != "value":
            report.failures.append((trial, f"run outcome {r1.outcome}/{r2.outcome}"))
            continue
        if heap_iso(r1.heap, r2.heap, lat, partition) is None:
            report.failures.append((trial, "final heaps not isomorphic"))
            continue
        hb = bullet_erase_heap(h1, lat, partition)
        rb = run_invocation(inv, ct, hb, partition=partition, bullet=True, budget=budget)
        if rb.outcome != "value":
            report.failures.append((trial, f"bullet run outcome {rb.outcome}"))
            continue
        if heap_iso(r1.heap, rb.heap, lat, partition) is None:
            report.failures.append((trial, "bullet-mode final differs"))
    return report


# -- attacker mutation -------------------------------------------------------------

class MutationGenerator:
    """Seeded generator of well-typed low-integrity method bodies.

    Generated bodies may reenter public methods, endorse within the attacker
    region, take locks, and (inside low-integrity classes) ignore-locks-in.
    Candidates are filtered through the checker, so every produced table
    type-checks and stays erasure-equivalent to the original.
    """

    def __init__(self, ct: ClassTable, partition: TrustPartition, seed: int):
        self.ct = ct
        self.lat = ct.lattice
        self.partition = partition
        self.rng = random.Random(seed)
        self.var_counter = 0

    def fresh(self) -> str:
        self.var_counter += 1
        return f"z{self.var_counter}"

    def gen_body(self, cname: str, m: MethodDef) -> Node:
        lat = self.lat
        allow_ignore = not self.partition.trusted(lat, self.ct.get(cname).code_label)
        gamma = [(x, t) for x, t in m.params]
        gamma.append(("this", LType(TClass(cname), m.pc2)))
        # bind field reads (and one deref) so victims held in fields are reachable
        prelude: list[tuple[str, Node]] = []
        for fn, ft in self.ct.fields(cname):
            x = self.fresh()
            prelude.append((x, FieldGet(Var("this"), fn)))
            xt = LType(ft.base, lat.join(ft.label, m.pc2))
            gamma.append((x, xt))
            if isinstance(ft.base, TRef):
                y = self.fresh()
                prelude.append((y, Deref(Var(x))))
                inner = ft.base.inner
                gamma.append((y, LType(inner.base, lat.join(inner.label, xt.label))))
        expr = self._gen_seq(gamma, m.pc2, allow_ignore, depth=self.rng.randint(0, 3))
        body: Node = inhabit(self.ct, m.rtype, self.rng)
        if expr is not None:
            body = Let(self.fresh(), expr, body)
        for x, e in reversed(prelude):
            body = Let(x, e, body)
        return body

    def _gen_seq(self, gamma, pc: Label, allow_ignore: bool, depth: int) -> Node | None:
        if depth <= 0:
            return self._gen_simple(gamma, pc, allow_ignore)
        parts = []
        for _ in range(self.rng.randint(1, 2)):
            e = self._gen_simple(gamma, pc, allow_ignore)
            if e is not None:
                parts.append(e)
        out = None
        for e in parts:
            out = e if out is None else Let(self.fresh(), out, e)
        return out

    def _gen_simple(self, gamma, pc: Label, allow_ignore: bool) -> Node | None:
        rng = self.rng
        choice = rng.random()
        if choice < 0.45:
            return self._gen_call(gamma, pc)
        if choice < 0.6:
            # endorse a boolean within the attacker region
            bools = [(x, t) for x, t in gamma if isinstance(t.base, TBool)]
            if bools:
                x, t = rng.choice(bools)
                return Endorse(Var(x), t.label, pc)
            return None
        if choice < 0.75:
            call = self._gen_call(gamma, pc)
            if call is None:
                return None
            return IgnoreLocks(call) if allow_ignore else call
        if choice < 0.9:
            call = self._gen_call(gamma, pc)
            if call is None:
                return None
            lockable = [self.lat.principal(p) for p in self.lat.principals]
            return LockIn(rng.choice(lockable), call) if lockable else call
        b = BoolLit(rng.random() < 0.5)
        return If(None, b, Unit(), Unit())

    def _gen_call(self, gamma, pc: Label) -> Node | None:
        rng = self.rng
        receivers = [(x, t) for x, t in gamma if isinstance(t.base, TClass)]
        candidates = []
        for x, t in receivers:
            cname = t.base.name
            if cname == "Object":
                continue
            caller = self.lat.join(pc, t.label)
            for c in self.ct.superclass_chain(cname):
                for mname in self.ct.get(c).methods:
                    _, pc1, _, _, _ = self.ct.mtype(cname, mname)
                    if self.lat.acts_for(caller, pc1):
                        candidates.append((x, t, mname))
        if not candidates:
            return None
        x, t, mname = rng.choice(candidates)
        taus, *_ = self.ct.mtype(t.base.name, mname)
        args = tuple(self._gen_arg(gamma, ta) for ta in taus)
        return Call(Var(x), mname, args)

    def _gen_arg(self, gamma, t: LType) -> Node:
        usable = [x for x, tx in gamma if self.ct.subtype(tx, t)]
        if usable and self.rng.random() < 0.5:
            return Var(self.rng.choice(usable))
        return inhabit(self.ct, t, self.rng)


def attacker_mutate(ct: ClassTable, partition: TrustPartition, seed: int,
                    max_attempts: int = 8) -> ClassTable | None:
    """A mutated, well-typed class table that is erasure-equivalent to ct.

    Only methods the erasure drops (body pc untrusted) are rewritten, so only
    those need re-checking; returns None when no candidate passed the checker
    within the attempt budget.
    """
    lat = ct.lattice
    targets = [(cname, m.name) for cname, cd, m in ct.all_method_defs()
               if not partition.trusted(lat, m.pc2)]
    if not targets:
        return None
    for attempt in range(max_attempts):
        gen = MutationGenerator(ct, partition, seed * 1009 + attempt)
        new_classes = {}
        touched: list[tuple[str, str]] = []
        for cname, cd in ct.classes.items():
            methods = {}
            for mname, m in cd.methods.items():
                if (cname, mname) in targets and gen.rng.random() < 0.8:
                    body = gen.gen_body(cname, m)
                    methods[mname] = MethodDef(m.name, m.pc1, m.pc2, m.lock,
                                               list(m.params), m.rtype, body, m.span)
                    touched.append((cname, mname))
                else:
                    methods[mname] = m
            new_classes[cname] = ClassDef(cd.name, cd.code_label, cd.superclass,
                                          list(cd.fields), methods, cd.span)
        if not touched:
            continue
        mutated = ClassTable(Program(lat, new_classes, "mutant"))
        checker = Checker(mutated)
        # signatures are unchanged, so untouched methods keep their verdicts
        if all(checker.check_method({}, c, mutated.get(c).methods[m]).ok
               for c, m in touched):
            return mutated
    return None


# -- preservation and configuration safety ----------------------------------------

@dataclass
class PreservationReport:
    steps: int = 0
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def preservation_run(ct: ClassTable, inv, heap: dict, *, budget: int = 200_000,
                     **run_kw) -> PreservationReport:
    """Run an invocation re-typechecking the whole statement after every step.

    Checks that the initial judgment's type and out-lock stay derivable, the
    heap stays well-typed, and the heap type only grows.
    """
    from .interp import invocation_expr, run_invocation
    checker = Checker(ct)
    lat = ct.lattice
    report = PreservationReport()
    sigma = {k: t for k, (_, t) in heap.items()}
    diags: list = []
    t0, o0 = checker.check_expr(sigma, {}, inv.label, BOT, invocation_expr(inv), diags)
    if diags:
        report.violations.append(("initial", [d.format() for d in diags]))
        return report

    def hook(ex):
        report.steps += 1
        for name, (v, t) in (() if ex.last_delta is None else ((ex.last_delta[0], (ex.last_delta[1], ex.last_delta[2])),)):
            old = sigma.get(name)
            if old is not None and old != t:
                report.violations.append((ex.steps, f"heap type changed at {name}"))
            sigma[name] = t
            d2: list = []
            checker.check_value(sigma, {}, v, t, d2)
            if d2:
                report.violations.append((ex.steps, f"heap cell {name} ill-typed: {d2[0].format()}"))
        s = ex.statement()
        d3: list = []
        t1, o1 = checker.check_expr(sigma, {}, inv.label, BOT, s, d3)
        if d3:
            report.violations.append((ex.steps, ex.last_rule,
                                      [d.format() for d in d3[:3]]))
        else:
            if not checker.subtype_v(t1, t0):
                report.violations.append((ex.steps, ex.last_rule,
                                          f"type {t1} no longer fits {t0}"))
            if not lat.acts_for(o1, o0):
                report.violations.append((ex.steps, ex.last_rule,
                                          f"out-lock {o1} below initial {o0}"))

    run_invocation(inv, ct, heap, budget=budget, step_hook=hook, **run_kw)
    return report


def configuration_safety_hook(ct: ClassTable, partition: TrustPartition,
                              inv, violations: list):
    """Debug assertion: dynamic locks match the with-lock frames and every
    trusted decomposition outside funend position admits an input lock
    covered by the meet of the pending dynamic locks."""
    from .monitor import F_ATPC, F_FUNEND, F_WITHLOCK, decompose, get_locks, inner_pc
    checker = Checker(ct)
    lat = ct.lattice

    def hook(ex):
        s = ex.statement()
        sigma = {k: t for k, (_, t) in ex.heap.items()}
        if get_locks([], s) != ex.L:
            violations.append((ex.steps, "lock list out of sync"))
        frames, _ = decompose(s)
        pc = inv.label
        locks: list = []
        node = s
        for i, (kind, payload) in enumerate(frames):
            if kind == F_ATPC:
                pc = payload
            elif kind == F_WITHLOCK:
                locks.append(payload)
            node = _frame_body(node)
            if kind == F_FUNEND or not partition.trusted(lat, pc):
                continue
            # witness for the existential input lock: pc itself, or bottom
            # when the pending dynamic locks already cover pc
            d: list = []
            checker.check_expr(sigma, {}, pc, pc, node, d)
            ok = not d
            if not ok:
                d2: list = []
                checker.check_expr(sigma, {}, pc, BOT, node, d2)
                ok = not d2 and lat.acts_for(lat.meet_all(locks), pc)
            if not ok:
                violations.append((ex.steps, f"unsafe decomposition at frame {i}"))

    return hook


def _frame_body(node):
    match node:
        case Let(bound=b) | Funend(body=b) | AtPc(body=b) | WithLock(body=b) | IgnoreLocks(body=b):
            return b
    return node
