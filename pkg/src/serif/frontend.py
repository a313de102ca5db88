"""Lex and parse SeRIF source, build the class table, and print it back.

Concrete syntax (labels in braces, ``/\\`` binds tighter than ``\\/``):

    principal T, U;
    trusts T => U;                        // T acts for U
    class Token{T} extends Object {
        bal: Ref(Nat{T}){T};
        transfer{T >> T; T}(amt: Nat{T}): unit{T} { ... }
    }

Expression bodies follow the calculus: operands are open values, ``let`` is
the only sequencing form, ``if`` branches are delimited with braces.
``nat(k)`` is sugar for ``new Succ(... new Zero())``.  World files bind named
heap locations and list invocations; see ``parse_world``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .ast import (AtPc, Assign, BoolLit, Call, Cast, ClassDef, Constructor,
                  Deref, Endorse, FieldGet, Funend, If, IgnoreLocks, Let,
                  LockIn, Loc, LType, MethodDef, New, Node, Null, RefNew,
                  Span, TBool, TClass, TRef, TUnit, Unit, Var, WithLock,
                  is_value)
from .lattice import Label, Lattice, format_label

KEYWORDS = {
    "principal", "trusts", "class", "extends", "let", "in", "if", "then",
    "else", "ref", "endorse", "from", "to", "lock", "new", "true", "false",
    "null", "unit", "bool", "Ref", "top", "bot", "nat", "program", "trust",
    "attacker", "heap", "invoke", "ignore-locks-in",
}

PUNCT = [
    "ignore-locks-in", ":=", ">>", "=>", "\\/", "/\\", "(", ")", "{", "}",
    ",", ";", ":", ".", "!", "=",
]


class SyntaxError_(Exception):
    def __init__(self, msg: str, span: Span | None = None):
        self.span = span
        at = f" at {span[0]}:{span[1]}" if span else ""
        super().__init__(f"{msg}{at}")


class DuplicateClass(SyntaxError_):
    pass


class DuplicateMethod(SyntaxError_):
    pass


@dataclass
class Token:
    kind: str  # 'ident', 'int', 'string', or the punct/keyword itself
    text: str
    span: Span


def tokenize(src: str) -> list[Token]:
    toks: list[Token] = []
    line, col = 1, 1
    i = 0
    n = len(src)
    while i < n:
        c = src[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if c.isspace():
            i += 1
            col += 1
            continue
        if src.startswith("//", i):
            while i < n and src[i] != "\n":
                i += 1
            continue
        span = (line, col)
        for p in PUNCT:
            if src.startswith(p, i):
                # 'ignore-locks-in' must not swallow an identifier prefix
                if p[0].isalpha() and i + len(p) < n and (src[i + len(p)].isalnum() or src[i + len(p)] == "_"):
                    continue
                toks.append(Token(p, p, span))
                i += len(p)
                col += len(p)
                break
        else:
            if c == '"':
                j = src.find('"', i + 1)
                if j < 0:
                    raise SyntaxError_("unterminated string", span)
                toks.append(Token("string", src[i + 1:j], span))
                col += j + 1 - i
                i = j + 1
            elif c.isdigit():
                m = re.match(r"\d+", src[i:])
                toks.append(Token("int", m.group(0), span))
                i += m.end()
                col += m.end()
            elif c.isalpha() or c == "_":
                m = re.match(r"[A-Za-z_][A-Za-z0-9_]*", src[i:])
                word = m.group(0)
                kind = word if word in KEYWORDS else "ident"
                toks.append(Token(kind, word, span))
                i += m.end()
                col += m.end()
            else:
                raise SyntaxError_(f"unexpected character {c!r}", span)
    toks.append(Token("eof", "", (line, col)))
    return toks


@dataclass
class Program:
    lattice: Lattice
    classes: dict[str, ClassDef]
    source_name: str = "<input>"


VALUE_START = {"ident", "(", "true", "false", "null", "new", "nat"}


class Parser:
    def __init__(self, src: str, source_name: str = "<input>"):
        self.toks = tokenize(src)
        self.pos = 0
        self.source_name = source_name
        self.lattice: Lattice | None = None
        self._if_counter = 0
        self._ctx = ""  # Class.method, for branch tags

    # -- token helpers --

    def peek(self, k: int = 0) -> Token:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def next(self) -> Token:
        t = self.toks[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def expect(self, kind: str) -> Token:
        t = self.next()
        if t.kind != kind:
            raise SyntaxError_(f"expected {kind!r}, found {t.text!r}", t.span)
        return t

    def at(self, kind: str) -> bool:
        return self.peek().kind == kind

    # -- program structure --

    def parse_program(self) -> Program:
        principals: list[str] = []
        delegations: list[tuple[str, str]] = []
        class_toks: list[int] = []
        # first pass: collect principal/delegation headers, remember classes
        while self.at("principal") or self.at("trusts"):
            if self.at("principal"):
                self.next()
                principals.append(self.expect("ident").text)
                while self.at(","):
                    self.next()
                    principals.append(self.expect("ident").text)
                self.expect(";")
            else:
                self.next()
                p = self.expect("ident").text
                self.expect("=>")
                q = self.expect("ident").text
                self.expect(";")
                delegations.append((p, q))
        self.lattice = Lattice(principals, delegations)
        classes: dict[str, ClassDef] = {}
        while not self.at("eof"):
            cd = self.parse_class()
            if cd.name in classes or cd.name == "Object":
                raise DuplicateClass(f"duplicate class {cd.name}", cd.span)
            classes[cd.name] = cd
        return Program(self.lattice, classes, self.source_name)

    def parse_label_braced(self) -> Label:
        self.expect("{")
        lbl = self.parse_label()
        self.expect("}")
        return lbl

    def parse_label(self) -> Label:
        lbl = self.parse_label_meet()
        while self.at("\\/"):
            self.next()
            lbl = self.lattice.join(lbl, self.parse_label_meet())
        return lbl

    def parse_label_meet(self) -> Label:
        lbl = self.parse_label_atom()
        while self.at("/\\"):
            self.next()
            lbl = self.lattice.meet(lbl, self.parse_label_atom())
        return lbl

    def parse_label_atom(self) -> Label:
        t = self.next()
        if t.kind == "top":
            return self.lattice.top
        if t.kind == "bot":
            return self.lattice.bot
        if t.kind == "(":
            lbl = self.parse_label()
            self.expect(")")
            return lbl
        if t.kind == "ident":
            return self.lattice.principal(t.text)
        raise SyntaxError_(f"expected label, found {t.text!r}", t.span)

    def parse_ltype(self) -> LType:
        t = self.next()
        if t.kind == "unit":
            base = TUnit()
        elif t.kind == "bool":
            base = TBool()
        elif t.kind == "Ref":
            self.expect("(")
            inner = self.parse_ltype()
            self.expect(")")
            base = TRef(inner)
        elif t.kind == "ident":
            base = TClass(t.text)
        else:
            raise SyntaxError_(f"expected type, found {t.text!r}", t.span)
        return LType(base, self.parse_label_braced())

    def parse_class(self) -> ClassDef:
        start = self.expect("class")
        name = self.expect("ident").text
        code_label = self.parse_label_braced()
        self.expect("extends")
        sup = self.next()
        if sup.kind not in ("ident",):
            raise SyntaxError_(f"expected superclass name, found {sup.text!r}", sup.span)
        self.expect("{")
        fields: list[tuple[str, LType]] = []
        methods: dict[str, MethodDef] = {}
        while not self.at("}"):
            nm = self.expect("ident")
            if self.at(":"):
                self.next()
                fields.append((nm.text, self.parse_ltype()))
                self.expect(";")
            elif self.at("{"):
                m = self.parse_method(name, nm.text, nm.span)
                if m.name in methods:
                    raise DuplicateMethod(f"duplicate method {name}.{m.name}", nm.span)
                methods[m.name] = m
            else:
                raise SyntaxError_(f"expected field or method after {nm.text!r}", nm.span)
        self.expect("}")
        return ClassDef(name, code_label, sup.text, fields, methods, span=start.span)

    def parse_method(self, cls: str, name: str, span: Span) -> MethodDef:
        self.expect("{")
        pc1 = self.parse_label()
        self.expect(">>")
        pc2 = self.parse_label()
        if self.at(";"):
            self.next()
            lock = self.parse_label()
        else:
            lock = self.lattice.bot
        self.expect("}")
        self.expect("(")
        params: list[tuple[str, LType]] = []
        while not self.at(")"):
            pn = self.expect("ident").text
            self.expect(":")
            params.append((pn, self.parse_ltype()))
            if self.at(","):
                self.next()
        self.expect(")")
        self.expect(":")
        rtype = self.parse_ltype()
        self.expect("{")
        self._ctx = f"{cls}.{name}"
        self._if_counter = 0
        body = self.parse_expr()
        self.expect("}")
        return MethodDef(name, pc1, pc2, lock, params, rtype, body, span=span)

    # -- expressions --

    def parse_expr(self) -> Node:
        t = self.peek()
        if t.kind == "let":
            self.next()
            x = self.expect("ident").text
            self.expect("=")
            bound = self.parse_expr_nonlet()
            self.expect("in")
            body = self.parse_expr()
            return Let(x, bound, body, span=t.span)
        return self.parse_expr_nonlet()

    def parse_expr_nonlet(self) -> Node:
        t = self.peek()
        if t.kind == "if":
            self.next()
            pc = None
            if self.at("{"):
                pc = self.parse_label_braced()
            cond = self.parse_value()
            self.expect("then")
            self.expect("{")
            then_e = self.parse_expr()
            self.expect("}")
            self.expect("else")
            self.expect("{")
            else_e = self.parse_expr()
            self.expect("}")
            tag = f"{self._ctx}.if{self._if_counter}"
            self._if_counter += 1
            return If(pc, cond, then_e, else_e, f"{tag}.then", f"{tag}.else", span=t.span)
        if t.kind == "ref":
            self.next()
            v = self.parse_value()
            self.expect(":")
            ann = self.parse_ltype()
            return RefNew(v, ann, span=t.span)
        if t.kind == "endorse":
            self.next()
            v = self.parse_value()
            self.expect("from")
            frm = self.parse_label()
            self.expect("to")
            to = self.parse_label()
            return Endorse(v, frm, to, span=t.span)
        if t.kind == "lock":
            self.next()
            lbl = self.parse_label()
            self.expect("in")
            body = self.parse_expr()
            return LockIn(lbl, body, span=t.span)
        if t.kind == "ignore-locks-in":
            self.next()
            return IgnoreLocks(self.parse_expr(), span=t.span)
        if t.kind == "!":
            self.next()
            return Deref(self.parse_value(), span=t.span)
        # cast: '(' Ident ')' value
        if (t.kind == "(" and self.peek(1).kind == "ident" and self.peek(2).kind == ")"
                and self.peek(3).kind in VALUE_START and self.peek(3).kind != "("):
            self.next()
            cname = self.expect("ident").text
            self.expect(")")
            return Cast(cname, self.parse_value(), span=t.span)
        # grouped expression, e.g. a nested let in bound position
        if t.kind == "(" and self.peek(1).kind != ")":
            self.next()
            e = self.parse_expr()
            self.expect(")")
            return e
        # value-led expression: field, call, assign, or the value itself
        v = self.parse_value()
        return self.parse_value_suffix(v)

    def parse_value_suffix(self, v: Node) -> Node:
        # operands are open values, so at most one suffix applies
        if self.at("."):
            self.next()
            nm = self.expect("ident")
            if self.at("("):
                self.next()
                args = []
                while not self.at(")"):
                    args.append(self.parse_value())
                    if self.at(","):
                        self.next()
                self.expect(")")
                return Call(v, nm.text, tuple(args), span=nm.span)
            return FieldGet(v, nm.text, span=nm.span)
        if self.at(":="):
            t = self.next()
            rhs = self.parse_value()
            return Assign(v, rhs, span=t.span)
        return v

    def parse_value(self) -> Node:
        t = self.next()
        if t.kind == "ident":
            return Var(t.text, span=t.span)
        if t.kind == "true":
            return BoolLit(True, span=t.span)
        if t.kind == "false":
            return BoolLit(False, span=t.span)
        if t.kind == "null":
            return Null(span=t.span)
        if t.kind == "(":
            self.expect(")")
            return Unit(span=t.span)
        if t.kind == "new":
            cname = self.expect("ident").text
            self.expect("(")
            args = []
            while not self.at(")"):
                args.append(self.parse_value())
                if self.at(","):
                    self.next()
            self.expect(")")
            return New(cname, tuple(args), span=t.span)
        if t.kind == "nat":
            self.expect("(")
            k = int(self.expect("int").text)
            self.expect(")")
            return nat_value(k, span=t.span)
        raise SyntaxError_(f"expected value, found {t.text!r}", t.span)


def nat_value(k: int, span: Span | None = None) -> Node:
    v: Node = New("Zero", (), span=span)
    for _ in range(k):
        v = New("Succ", (v,), span=span)
    return v


def nat_of_value(v: Node) -> int | None:
    """Inverse of nat_value; None when v is not a canonical unary nat."""
    k = 0
    while isinstance(v, New) and v.cname == "Succ" and len(v.args) == 1:
        v = v.args[0]
        k += 1
    if isinstance(v, New) and v.cname == "Zero" and not v.args:
        return k
    return None


def parse_program(src: str, source_name: str = "<input>") -> Program:
    return Parser(src, source_name).parse_program()


# -- class table ---------------------------------------------------------


class UnknownClass(Exception):
    pass


class UnknownMethod(Exception):
    pass


class ClassTable:
    """Resolved class definitions with the Fig-style lookup functions."""

    def __init__(self, program: Program):
        self.lattice = program.lattice
        self.classes = program.classes
        self.source_name = program.source_name
        self._fields_cache: dict[str, list[tuple[str, LType]]] = {}
        self._check_hierarchy()

    def _check_hierarchy(self) -> None:
        for name, cd in self.classes.items():
            seen = {name}
            cur = cd.superclass
            while cur != "Object":
                if cur in seen:
                    raise UnknownClass(f"cyclic inheritance at {cur}")
                if cur not in self.classes:
                    raise UnknownClass(f"unknown superclass {cur} of {name}")
                seen.add(cur)
                cur = self.classes[cur].superclass

    def has_class(self, name: str) -> bool:
        return name == "Object" or name in self.classes

    def get(self, name: str) -> ClassDef:
        if name not in self.classes:
            raise UnknownClass(f"unknown class {name}")
        return self.classes[name]

    def superclass_chain(self, name: str) -> list[str]:
        """name itself first, then superclasses up to (excluding) Object."""
        out = []
        cur = name
        while cur != "Object":
            out.append(cur)
            cur = self.get(cur).superclass
        return out

    def fields(self, name: str) -> list[tuple[str, LType]]:
        """Inherited fields first, superclass-to-subclass order."""
        if name == "Object":
            return []
        cached = self._fields_cache.get(name)
        if cached is not None:
            return cached
        cd = self.get(name)
        out = self.fields(cd.superclass) + list(cd.fields)
        names = [f for f, _ in out]
        if len(set(names)) != len(names):
            raise SyntaxError_(f"duplicate field (incl. inherited) in {name}", cd.span)
        self._fields_cache[name] = out
        return out

    def constructor(self, name: str) -> Constructor:
        flds = self.fields(name)
        own = len(self.get(name).fields) if name != "Object" else 0
        inherited = [f for f, _ in flds[: len(flds) - own]]
        return Constructor(list(flds), inherited, [f for f, _ in flds[len(flds) - own:]])

    def subclass_of(self, c: str, d: str) -> bool:
        if d == "Object":
            return True
        if c == "Object":
            return False
        return d in self.superclass_chain(c)

    def mtype(self, cname: str, mname: str):
        """(param types, pc1, pc2, lock, return type) searching superclasses."""
        m = self._lookup(cname, mname)[1]
        return ([t for _, t in m.params], m.pc1, m.pc2, m.lock, m.rtype)

    def mbody(self, cname: str, mname: str):
        """(defining-class code label, param names, param types, pc1, pc2, body, rtype)."""
        owner, m = self._lookup(cname, mname)
        return (self.get(owner).code_label, [x for x, _ in m.params],
                [t for _, t in m.params], m.pc1, m.pc2, m.body, m.rtype)

    def _lookup(self, cname: str, mname: str) -> tuple[str, MethodDef]:
        for c in self.superclass_chain(cname):
            m = self.get(c).methods.get(mname)
            if m is not None:
                return c, m
        raise UnknownMethod(f"unknown method {cname}.{mname}")

    def has_method(self, cname: str, mname: str) -> bool:
        try:
            self._lookup(cname, mname)
            return True
        except (UnknownMethod, UnknownClass):
            return False

    def subtype(self, t1: LType, t2: LType) -> bool:
        """Safe relabeling plus superclass widening (ref types invariant)."""
        if not self.lattice.acts_for(t1.label, t2.label):
            return False
        return self.subtype_base(t1.base, t2.base)

    def subtype_base(self, b1, b2) -> bool:
        if b1 == b2:
            return True
        if isinstance(b1, TClass) and isinstance(b2, TClass):
            return self.subclass_of(b1.name, b2.name)
        # null's inner type is unconstrained; handled by the checker directly
        return False

    def all_method_defs(self):
        for cname, cd in self.classes.items():
            for m in cd.methods.values():
                yield cname, cd, m


# -- pretty printer --------------------------------------------------------


def fmt_value(v: Node) -> str:
    if isinstance(v, New):
        k = nat_of_value(v)
        if k is not None:
            return f"nat({k})"
    match v:
        case Var(name=n) | Loc(name=n):
            return n
        case Unit():
            return "()"
        case BoolLit(value=b):
            return "true" if b else "false"
        case Null():
            return "null"
        case New(cname=c, args=args):
            return f"new {c}({', '.join(fmt_value(a) for a in args)})"
        case _:
            from .ast import Bullet
            if isinstance(v, Bullet):
                return "*"
            raise TypeError(f"not a value: {v!r}")


def fmt_expr(e: Node, indent: int = 0) -> str:
    pad = "  " * indent
    match e:
        case _ if is_value(e):
            return fmt_value(e)
        case Let(var=x, bound=b, body=body):
            bs = fmt_expr(b, indent)
            if isinstance(b, (Let, LockIn, IgnoreLocks)):
                bs = f"({bs})"  # these extend through a following 'in'
            return f"let {x} = {bs} in\n{pad}{fmt_expr(body, indent)}"
        case If(pc=pc, cond=c, then_e=t, else_e=el):
            pcs = f"{{{format_label(pc)}}}" if pc is not None else ""
            return (f"if{pcs} {fmt_value(c)} then {{ {fmt_expr(t, indent + 1)} }}"
                    f" else {{ {fmt_expr(el, indent + 1)} }}")
        case RefNew(init=v, ann=a):
            return f"ref {fmt_value(v)} : {a}"
        case Deref(target=v):
            return f"!{fmt_value(v)}"
        case Assign(target=t, value=v):
            return f"{fmt_value(t)} := {fmt_value(v)}"
        case Cast(cname=c, value=v):
            return f"({c}){fmt_value(v)}"
        case FieldGet(obj=o, fname=f):
            return f"{fmt_value(o)}.{f}"
        case Call(obj=o, mname=m, args=args):
            return f"{fmt_value(o)}.{m}({', '.join(fmt_value(a) for a in args)})"
        case Endorse(value=v, frm=f, to=t):
            return f"endorse {fmt_value(v)} from {format_label(f)} to {format_label(t)}"
        case LockIn(label=l, body=b):
            return f"lock {format_label(l)} in {fmt_expr(b, indent)}"
        case IgnoreLocks(body=b):
            return f"ignore-locks-in {fmt_expr(b, indent)}"
        case Funend(rtype=r, body=b):
            return f"funend[{r}] {fmt_expr(b, indent)}"
        case AtPc(pc=p, body=b):
            return f"at-pc{{{format_label(p)}}} {fmt_expr(b, indent)}"
        case WithLock(label=l, body=b):
            return f"with-lock{{{format_label(l)}}} {fmt_expr(b, indent)}"
        case _:
            raise TypeError(f"unknown node {e!r}")


def fmt_program(prog: Program) -> str:
    lat = prog.lattice
    out = []
    if lat.principals:
        out.append("principal " + ", ".join(lat.principals) + ";")
    for p, q in sorted(lat.delegations):
        out.append(f"trusts {p} => {q};")
    for cd in prog.classes.values():
        out.append("")
        out.append(f"class {cd.name}{{{format_label(cd.code_label)}}} extends {cd.superclass} {{")
        for fname, ft in cd.fields:
            out.append(f"  {fname}: {ft};")
        for m in cd.methods.values():
            sig = (f"  {m.name}{{{format_label(m.pc1)} >> {format_label(m.pc2)};"
                   f" {format_label(m.lock)}}}"
                   f"({', '.join(f'{x}: {t}' for x, t in m.params)}): {m.rtype} {{")
            out.append(sig)
            out.append("    " + fmt_expr(m.body, 2))
            out.append("  }")
        out.append("}")
    return "\n".join(out) + "\n"


# -- world files ------------------------------------------------------------


@dataclass
class Invocation:
    label: Label
    location: str
    mname: str
    args: tuple
    span: Span | None = None


@dataclass
class World:
    program_path: str | None
    program: Program | None
    trust: Label | None
    attacker: Label | None
    heap_bindings: list[tuple[str, Node, LType]]
    invocations: list[Invocation]


class WorldParser(Parser):
    def parse_world(self) -> World:
        program_path = None
        trust = attacker = None
        bindings: list[tuple[str, Node, LType]] = []
        invocations: list[Invocation] = []
        while not self.at("eof"):
            t = self.peek()
            if t.kind == "program":
                self.next()
                program_path = self.expect("string").text
                self.expect(";")
            elif t.kind == "trust":
                self.next()
                trust = self.parse_label()
                self.expect(";")
            elif t.kind == "attacker":
                self.next()
                attacker = self.parse_label()
                self.expect(";")
            elif t.kind == "heap":
                self.next()
                self.expect("{")
                while not self.at("}"):
                    nm = self.expect("ident").text
                    self.expect("=")
                    v = self.parse_world_value()
                    self.expect(":")
                    ty = self.parse_ltype()
                    self.expect(";")
                    bindings.append((nm, v, ty))
                self.expect("}")
            elif t.kind == "invoke":
                self.next()
                lbl = self.parse_label()
                self.expect(":")
                target = self.expect("ident").text
                self.expect(".")
                mname = self.expect("ident").text
                self.expect("(")
                args = []
                while not self.at(")"):
                    args.append(self.parse_world_value())
                    if self.at(","):
                        self.next()
                self.expect(")")
                self.expect(";")
                invocations.append(Invocation(lbl, target, mname, tuple(args), span=t.span))
            else:
                raise SyntaxError_(f"unexpected {t.text!r} in world file", t.span)
        return World(program_path, None, trust, attacker, bindings, invocations)

    def parse_world_value(self) -> Node:
        # bare identifiers in world values are heap locations
        v = self.parse_value()
        return _vars_to_locs(v)


def _vars_to_locs(v: Node) -> Node:
    if isinstance(v, Var):
        return Loc(v.name, span=v.span)
    if isinstance(v, New):
        return New(v.cname, tuple(_vars_to_locs(a) for a in v.args), span=v.span)
    return v


def parse_world(src: str, lattice: Lattice, source_name: str = "<world>") -> World:
    p = WorldParser(src, source_name)
    p.lattice = lattice
    return p.parse_world()


def world_program_path(src: str) -> str | None:
    """Scan a world file for its program reference without parsing labels."""
    for line in src.splitlines():
        line = line.strip()
        if line.startswith("program"):
            m = re.search(r'"([^"]*)"', line)
            if m:
                return m.group(1)
    return None
