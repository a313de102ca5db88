"""Random well-typed programs for the progress suite: every halt must be a
value or one of the three run-time faults (bad cast, null dereference,
dynamic lock violation)."""

from __future__ import annotations

import random

from .ast import (Assign, BoolLit, Call, Cast, ClassDef, Deref, Endorse, If,
                  Let, LockIn, LType, MethodDef, New, Node, Null, RefNew,
                  TBool, TClass, TRef, TUnit, Unit, Var)
from .frontend import ClassTable, Invocation, Program
from .harness import inhabit
from .lattice import BOT, TOP, Lattice
from .typecheck import Checker


class ProgramFuzzer:
    """Generates small class tables over a random 4-principal lattice, keeps
    the ones the checker accepts, and pairs them with a random invocation."""

    def __init__(self, seed: int):
        self.rng = random.Random(seed)
        self.counter = 0

    def fresh(self) -> str:
        self.counter += 1
        return f"x{self.counter}"

    def random_lattice(self) -> Lattice:
        names = ["P", "Q", "R", "S"]
        edges = []
        for p in names:
            for q in names:
                if p != q and self.rng.random() < 0.2:
                    edges.append((p, q))
        return Lattice(names, edges)

    def random_label(self, lat: Lattice):
        rng = self.rng
        base = [lat.principal(p) for p in lat.principals] + [TOP, BOT]
        lbl = rng.choice(base)
        for _ in range(rng.randint(0, 2)):
            other = rng.choice(base)
            lbl = lat.join(lbl, other) if rng.random() < 0.5 else lat.meet(lbl, other)
        return lbl

    def make_program(self):
        rng = self.rng
        lat = self.random_lattice()
        classes: dict[str, ClassDef] = {}
        class_names = [f"C{i}" for i in range(rng.randint(1, 3))]
        # subclasses of the first class give casts something to fail on
        hierarchy = {c: "Object" for c in class_names}
        if len(class_names) >= 2 and rng.random() < 0.7:
            hierarchy[class_names[1]] = class_names[0]
        for c in class_names:
            fields = []
            for _ in range(rng.randint(0, 2)):
                fields.append((self.fresh(), self.random_field_type(lat)))
            classes[c] = ClassDef(c, self.random_label(lat), hierarchy[c], fields, {})
        # methods after all classes exist so bodies can mention them
        prog = Program(lat, classes, "fuzz")
        ct = ClassTable(prog)
        for c in class_names:
            for _ in range(rng.randint(1, 2)):
                m = self.make_method(ct, lat, c)
                classes[c].methods[m.name] = m
        return prog, ct

    def random_field_type(self, lat: Lattice) -> LType:
        rng = self.rng
        lbl = self.random_label(lat)
        pick = rng.random()
        if pick < 0.4:
            return LType(TBool(), lbl)
        if pick < 0.7:
            return LType(TRef(LType(TBool(), self.random_label(lat))), lbl)
        return LType(TUnit(), lbl)

    def make_method(self, ct: ClassTable, lat: Lattice, cname: str) -> MethodDef:
        rng = self.rng
        pc2 = self.random_label(lat)
        pc1 = pc2 if rng.random() < 0.5 else lat.join(pc2, self.random_label(lat))
        rtype = LType(TBool(), pc2) if rng.random() < 0.5 else LType(TUnit(), pc2)
        params = []
        for _ in range(rng.randint(0, 2)):
            params.append((self.fresh(), LType(TBool(), lat.join(pc1, self.random_label(lat)))))
        gamma = dict(params)
        gamma["this"] = LType(TClass(cname), pc2)
        body = self.make_expr(ct, lat, gamma, pc2, depth=rng.randint(1, 4))
        tail = inhabit(ct, rtype, rng)
        body = Let(self.fresh(), body, tail) if body is not None else tail
        return MethodDef(f"m{self.counter}", pc1, pc2, pc2, params, rtype, body)

    def make_expr(self, ct: ClassTable, lat: Lattice, gamma, pc, depth: int) -> Node | None:
        rng = self.rng
        if depth <= 0:
            return None
        kinds = ["ref", "deref", "assign", "if", "call", "cast", "null", "lock", "seq"]
        kind = rng.choice(kinds)
        if kind == "ref":
            ann = LType(TBool(), rng.choice([pc, lat.join(pc, self.random_label(lat))]))
            return RefNew(BoolLit(rng.random() < 0.5), ann)
        if kind == "deref":
            refs = [x for x, t in gamma.items() if isinstance(t.base, TRef)]
            if refs:
                return Deref(Var(rng.choice(refs)))
            return Deref(Null()) if rng.random() < 0.3 else None
        if kind == "assign":
            refs = [x for x, t in gamma.items() if isinstance(t.base, TRef)]
            if refs:
                x = rng.choice(refs)
                return Assign(Var(x), BoolLit(True))
            return Assign(Null(), BoolLit(True)) if rng.random() < 0.3 else None
        if kind == "if":
            bools = [x for x, t in gamma.items() if isinstance(t.base, TBool)]
            cond = Var(rng.choice(bools)) if bools else BoolLit(rng.random() < 0.5)
            a = self.make_expr(ct, lat, gamma, pc, depth - 1) or Unit()
            b = self.make_expr(ct, lat, gamma, pc, depth - 1) or Unit()
            return If(None, cond, a, b)
        if kind == "call":
            targets = []
            for c in ct.classes:
                for mn in ct.classes[c].methods:
                    targets.append((c, mn))
            if not targets:
                return None
            c, mn = rng.choice(targets)
            taus, *_ = ct.mtype(c, mn)
            recv = inhabit(ct, LType(TClass(c), TOP), rng)
            return Call(recv, mn, tuple(inhabit(ct, t, rng) for t in taus))
        if kind == "cast":
            subs = [c for c in ct.classes if ct.classes[c].superclass != "Object"]
            if not subs:
                return None
            sub = rng.choice(subs)
            sup = ct.classes[sub].superclass
            v = inhabit(ct, LType(TClass(rng.choice([sub, sup])), TOP), rng)
            return Cast(sub, v)
        if kind == "null":
            return Deref(Null())
        if kind == "lock":
            inner = self.make_expr(ct, lat, gamma, pc, depth - 1) or Unit()
            return LockIn(self.random_label(lat), inner)
        # seq
        a = self.make_expr(ct, lat, gamma, pc, depth - 1)
        b = self.make_expr(ct, lat, gamma, pc, depth - 1)
        if a is None:
            return b
        x = self.fresh()
        return Let(x, a, b if b is not None else Var(x))

    def checked_program(self, max_attempts: int = 40):
        """A (ct, invocation, heap) triple accepted by the checker."""
        for _ in range(max_attempts):
            try:
                prog, ct = self.make_program()
            except Exception:
                continue
            checker = Checker(ct)
            if not checker.check_class_table().ok:
                continue
            target = self.rng.choice(sorted(c for c in ct.classes if ct.classes[c].methods))
            mname = self.rng.choice(sorted(ct.classes[target].methods))
            taus, pc1, *_ = ct.mtype(target, mname)
            heap = {"root": (inhabit(ct, LType(TClass(target), TOP), self.rng),
                             LType(TClass(target), ct.lattice.top))}
            args = tuple(inhabit(ct, t, self.rng) for t in taus)
            inv = Invocation(pc1, "root", mname, args)
            sigma = {k: t for k, (_, t) in heap.items()}
            if not checker.check_invocation(sigma, inv).ok:
                continue
            return ct, inv, heap
        return None
