"""Abstract syntax: values, expressions, and runtime tracking statements.

Expression subterms are open values; ``let`` is the only sequencing form.
The tracking forms (``funend``, ``at-pc``, ``with-lock``) never appear in
parsed source; the interpreter introduces them as evaluation contexts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .lattice import Label

Span = tuple[int, int]  # (line, col), 1-based


# -- types -------------------------------------------------------------------

@dataclass(frozen=True)
class TUnit:
    def __str__(self) -> str:
        return "unit"


@dataclass(frozen=True)
class TBool:
    def __str__(self) -> str:
        return "bool"


@dataclass(frozen=True)
class TClass:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class TRef:
    inner: "LType"

    def __str__(self) -> str:
        return f"Ref({self.inner})"


@dataclass(frozen=True)
class TNullRef:
    """Principal base of a bare null: a reference of unconstrained inner type."""

    def __str__(self) -> str:
        return "Ref(_)"


BaseType = TUnit | TBool | TClass | TRef | TNullRef


@dataclass(frozen=True)
class LType:
    """A labeled type t{l}."""
    base: BaseType
    label: Label

    def __str__(self) -> str:
        from .lattice import format_label
        return f"{self.base}{{{format_label(self.label)}}}"


# -- AST nodes ---------------------------------------------------------------
# eq=False: node identity matters for sharing; use ast_equal for structure.

@dataclass(eq=False)
class Node:
    span: Span | None = field(default=None, kw_only=True)


# values

@dataclass(eq=False)
class Var(Node):
    name: str


@dataclass(eq=False)
class Unit(Node):
    pass


@dataclass(eq=False)
class BoolLit(Node):
    value: bool


@dataclass(eq=False)
class Loc(Node):
    name: str


@dataclass(eq=False)
class Null(Node):
    pass


@dataclass(eq=False)
class New(Node):
    cname: str
    args: tuple


@dataclass(eq=False)
class Bullet(Node):
    """The erased value; only the bullet semantics produces it."""


# expressions

@dataclass(eq=False)
class If(Node):
    pc: Label | None  # None until elaborated
    cond: Node
    then_e: Node
    else_e: Node
    then_tag: str = ""
    else_tag: str = ""


@dataclass(eq=False)
class RefNew(Node):
    init: Node
    ann: LType


@dataclass(eq=False)
class Deref(Node):
    target: Node


@dataclass(eq=False)
class Assign(Node):
    target: Node
    value: Node


@dataclass(eq=False)
class Cast(Node):
    cname: str
    value: Node


@dataclass(eq=False)
class FieldGet(Node):
    obj: Node
    fname: str


@dataclass(eq=False)
class Call(Node):
    obj: Node
    mname: str
    args: tuple


@dataclass(eq=False)
class Endorse(Node):
    value: Node
    frm: Label
    to: Label


@dataclass(eq=False)
class LockIn(Node):
    label: Label
    body: Node


@dataclass(eq=False)
class Let(Node):
    var: str
    bound: Node
    body: Node


@dataclass(eq=False)
class IgnoreLocks(Node):
    body: Node


# runtime-only statement forms

@dataclass(eq=False)
class Funend(Node):
    rtype: LType
    body: Node


@dataclass(eq=False)
class AtPc(Node):
    pc: Label
    body: Node


@dataclass(eq=False)
class WithLock(Node):
    label: Label
    body: Node


VALUE_TYPES = (Var, Unit, BoolLit, Loc, Null, New, Bullet)


def is_value(node: Node) -> bool:
    return isinstance(node, VALUE_TYPES)


def free_vars(node: Node) -> frozenset[str]:
    cached = getattr(node, "_fv", None)
    if cached is not None:
        return cached
    match node:
        case Var(name=n):
            fv = frozenset((n,))
        case Unit() | BoolLit() | Loc() | Null() | Bullet():
            fv = frozenset()
        case New(args=args):
            fv = frozenset().union(*(free_vars(a) for a in args)) if args else frozenset()
        case If(cond=c, then_e=t, else_e=e):
            fv = free_vars(c) | free_vars(t) | free_vars(e)
        case RefNew(init=v):
            fv = free_vars(v)
        case Deref(target=v):
            fv = free_vars(v)
        case Assign(target=t, value=v):
            fv = free_vars(t) | free_vars(v)
        case Cast(value=v):
            fv = free_vars(v)
        case FieldGet(obj=o):
            fv = free_vars(o)
        case Call(obj=o, args=args):
            fv = free_vars(o)
            for a in args:
                fv |= free_vars(a)
        case Endorse(value=v):
            fv = free_vars(v)
        case LockIn(body=b) | IgnoreLocks(body=b) | Funend(body=b) | AtPc(body=b) | WithLock(body=b):
            fv = free_vars(b)
        case Let(var=x, bound=b, body=e):
            fv = free_vars(b) | (free_vars(e) - {x})
        case _:
            raise TypeError(f"unknown node {node!r}")
    node._fv = fv
    return fv


def subst(node: Node, mapping: dict[str, Node]) -> Node:
    """Capture-avoiding substitution; substituted values are closed."""
    if not mapping or free_vars(node).isdisjoint(mapping):
        return node
    match node:
        case Var(name=n):
            return mapping.get(n, node)
        case New(cname=c, args=args):
            return New(c, tuple(subst(a, mapping) for a in args), span=node.span)
        case If(pc=pc, cond=c, then_e=t, else_e=e, then_tag=tt, else_tag=et):
            return If(pc, subst(c, mapping), subst(t, mapping), subst(e, mapping),
                      tt, et, span=node.span)
        case RefNew(init=v, ann=a):
            return RefNew(subst(v, mapping), a, span=node.span)
        case Deref(target=v):
            return Deref(subst(v, mapping), span=node.span)
        case Assign(target=t, value=v):
            return Assign(subst(t, mapping), subst(v, mapping), span=node.span)
        case Cast(cname=c, value=v):
            return Cast(c, subst(v, mapping), span=node.span)
        case FieldGet(obj=o, fname=f):
            return FieldGet(subst(o, mapping), f, span=node.span)
        case Call(obj=o, mname=m, args=args):
            return Call(subst(o, mapping), m, tuple(subst(a, mapping) for a in args),
                        span=node.span)
        case Endorse(value=v, frm=f, to=t):
            return Endorse(subst(v, mapping), f, t, span=node.span)
        case LockIn(label=l, body=b):
            return LockIn(l, subst(b, mapping), span=node.span)
        case IgnoreLocks(body=b):
            return IgnoreLocks(subst(b, mapping), span=node.span)
        case Funend(rtype=r, body=b):
            return Funend(r, subst(b, mapping), span=node.span)
        case AtPc(pc=p, body=b):
            return AtPc(p, subst(b, mapping), span=node.span)
        case WithLock(label=l, body=b):
            return WithLock(l, subst(b, mapping), span=node.span)
        case Let(var=x, bound=b, body=e):
            inner = {k: v for k, v in mapping.items() if k != x}
            return Let(x, subst(b, mapping), subst(e, inner), span=node.span)
        case _:
            raise TypeError(f"unknown node {node!r}")


def ast_equal(a: Node, b: Node, *, with_tags: bool = True) -> bool:
    """Structural equality ignoring spans."""
    if type(a) is not type(b):
        return False
    match a:
        case Var():
            return a.name == b.name
        case Unit() | Null() | Bullet():
            return True
        case BoolLit():
            return a.value == b.value
        case Loc():
            return a.name == b.name
        case New():
            return (a.cname == b.cname and len(a.args) == len(b.args)
                    and all(ast_equal(x, y, with_tags=with_tags) for x, y in zip(a.args, b.args)))
        case If():
            return (a.pc == b.pc
                    and (not with_tags or (a.then_tag == b.then_tag and a.else_tag == b.else_tag))
                    and ast_equal(a.cond, b.cond, with_tags=with_tags)
                    and ast_equal(a.then_e, b.then_e, with_tags=with_tags)
                    and ast_equal(a.else_e, b.else_e, with_tags=with_tags))
        case RefNew():
            return a.ann == b.ann and ast_equal(a.init, b.init, with_tags=with_tags)
        case Deref():
            return ast_equal(a.target, b.target, with_tags=with_tags)
        case Assign():
            return (ast_equal(a.target, b.target, with_tags=with_tags)
                    and ast_equal(a.value, b.value, with_tags=with_tags))
        case Cast():
            return a.cname == b.cname and ast_equal(a.value, b.value, with_tags=with_tags)
        case FieldGet():
            return a.fname == b.fname and ast_equal(a.obj, b.obj, with_tags=with_tags)
        case Call():
            return (a.mname == b.mname and ast_equal(a.obj, b.obj, with_tags=with_tags)
                    and len(a.args) == len(b.args)
                    and all(ast_equal(x, y, with_tags=with_tags) for x, y in zip(a.args, b.args)))
        case Endorse():
            return (a.frm == b.frm and a.to == b.to
                    and ast_equal(a.value, b.value, with_tags=with_tags))
        case LockIn():
            return a.label == b.label and ast_equal(a.body, b.body, with_tags=with_tags)
        case IgnoreLocks():
            return ast_equal(a.body, b.body, with_tags=with_tags)
        case Funend():
            return a.rtype == b.rtype and ast_equal(a.body, b.body, with_tags=with_tags)
        case AtPc():
            return a.pc == b.pc and ast_equal(a.body, b.body, with_tags=with_tags)
        case WithLock():
            return a.label == b.label and ast_equal(a.body, b.body, with_tags=with_tags)
        case Let():
            return (a.var == b.var and ast_equal(a.bound, b.bound, with_tags=with_tags)
                    and ast_equal(a.body, b.body, with_tags=with_tags))
    raise TypeError(f"unknown node {a!r}")


# -- class table structures --------------------------------------------------

@dataclass
class MethodDef:
    name: str
    pc1: Label
    pc2: Label
    lock: Label  # locks the method promises to maintain
    params: list[tuple[str, LType]]
    rtype: LType
    body: Node
    span: Span | None = None


@dataclass
class ClassDef:
    name: str
    code_label: Label
    superclass: str
    fields: list[tuple[str, LType]]  # own fields only, declaration order
    methods: dict[str, MethodDef]
    span: Span | None = None


@dataclass
class Constructor:
    """Shape-fixed constructor: super args then this.f = f assignments."""
    params: list[tuple[str, LType]]
    super_args: list[str]
    assigns: list[str]
