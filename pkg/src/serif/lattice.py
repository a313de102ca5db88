"""Integrity labels drawn from a free distributive lattice over principals.

Labels are normalized to join-of-meets form: a set of clauses, each clause a
set of principals.  Under the valuation semantics (join = boolean AND, meet =
boolean OR, top = 1, bot = 0) a clause is an OR of its principals and a label
is the AND of its clauses.  ``acts_for(l1, l2)`` holds iff every
delegation-respecting valuation gives ``eval(l1) >= eval(l2)``.

The syntactic decision procedure works on normal forms; ``oracle_acts_for``
independently brute-forces the valuation semantics and is the ground truth
the fast path is tested against.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

ENUMERATION_BOUND = 12


class LabelError(Exception):
    pass


class UnknownPrincipal(LabelError):
    pass


class TooManyPrincipals(LabelError):
    pass


class LabelSyntaxError(LabelError):
    pass


@dataclass(frozen=True)
class Label:
    """Normalized join-of-meets formula: clauses are OR-sets of principals.

    ``clauses == frozenset()`` is top (acts for everything); a label containing
    the empty clause normalizes to bot ``frozenset({frozenset()})``.
    """

    clauses: frozenset[frozenset[str]]

    def principals(self) -> frozenset[str]:
        out: set[str] = set()
        for c in self.clauses:
            out |= c
        return frozenset(out)

    def is_top(self) -> bool:
        return not self.clauses

    def is_bot(self) -> bool:
        return frozenset() in self.clauses

    def __repr__(self) -> str:
        return f"Label({format_label(self)})"


TOP = Label(frozenset())
BOT = Label(frozenset({frozenset()}))


def format_label(lbl: Label) -> str:
    """Concrete syntax: ``/\\`` binds tighter than ``\\/``."""
    if lbl.is_top():
        return "top"
    if lbl.is_bot():
        return "bot"
    parts = []
    for clause in sorted(lbl.clauses, key=lambda c: (len(c), sorted(c))):
        names = sorted(clause)
        parts.append(" /\\ ".join(names) if len(names) > 1 else names[0])
    if len(parts) == 1:
        return parts[0]
    return " \\/ ".join(f"({p})" if " " in p else p for p in parts)


class Lattice:
    """Free distributive lattice over declared principals with delegation.

    Delegation edges ``(p, q)`` mean p acts for q; the acts-for relation on
    principals is the reflexive-transitive closure.  All label operations are
    pure; instances memoize acts-for queries.
    """

    def __init__(self, principals: list[str] | tuple[str, ...] = (),
                 delegations: list[tuple[str, str]] | tuple = ()):
        names = list(principals)
        if len(set(names)) != len(names):
            raise LabelError(f"duplicate principal in {names}")
        for n in names:
            if not n:
                raise LabelError("empty principal name")
        self.principals: tuple[str, ...] = tuple(names)
        self._pset = frozenset(names)
        for p, q in delegations:
            if p not in self._pset or q not in self._pset:
                raise UnknownPrincipal(f"delegation {p} => {q} mentions undeclared principal")
        self.delegations: frozenset[tuple[str, str]] = frozenset(delegations)
        self._closure = self._transitive_closure()
        # Mutually-delegating principals are interchangeable; pick the least
        # name in each cycle as the canonical representative.
        self._canon = {
            p: min(q for q in self._closure[p] if p in self._closure[q])
            for p in self.principals
        }
        self._af_cache: dict[tuple[Label, Label], bool] = {}
        self._join_cache: dict[tuple[Label, Label], Label] = {}
        self._meet_cache: dict[tuple[Label, Label], Label] = {}

    def _transitive_closure(self) -> dict[str, frozenset[str]]:
        # reach[p] = set of q with p =>* q (p acts for q)
        reach: dict[str, set[str]] = {p: {p} for p in self.principals}
        edges: dict[str, set[str]] = {p: set() for p in self.principals}
        for p, q in self.delegations:
            edges[p].add(q)
        changed = True
        while changed:
            changed = False
            for p in self.principals:
                new = set(reach[p])
                for q in list(new):
                    new |= edges[q]
                    for r in list(reach.get(q, ())):
                        new.add(r)
                if new != reach[p]:
                    reach[p] = new
                    changed = True
        return {p: frozenset(r) for p, r in reach.items()}

    def principal_acts_for(self, p: str, q: str) -> bool:
        return q in self._closure[p]

    def _check_known(self, *labels: Label) -> None:
        for lbl in labels:
            bad = lbl.principals() - self._pset
            if bad:
                raise UnknownPrincipal(f"undeclared principal(s): {sorted(bad)}")

    # -- normalization --------------------------------------------------

    def _reduce_clause(self, clause: frozenset[str]) -> frozenset[str]:
        # Within an OR-clause, q is redundant when some other member acts for
        # it (q = 1 already forces that member to 1).  Members are first
        # mapped to cycle representatives, making domination strict.
        members = {self._canon[p] for p in clause}
        return frozenset(
            q for q in members
            if not any(p != q and self.principal_acts_for(p, q) for p in members)
        )

    def _clause_entails(self, c2: frozenset[str], c1: frozenset[str]) -> bool:
        # OR(c2) = 1 forces OR(c1) = 1: every member of c2, when true,
        # forces some member of c1 true (via p =>* q).
        return all(any(self.principal_acts_for(p, q) for p in c1) for q in c2)

    def normalize(self, clauses) -> Label:
        reduced = {self._reduce_clause(frozenset(c)) for c in clauses}
        if frozenset() in reduced:
            return BOT
        # Keep only entailment-minimal clauses; on canonicalized antichains
        # mutual entailment implies equality, so this is unambiguous.
        minimal = frozenset(
            c1 for c1 in reduced
            if not any(c2 != c1 and self._clause_entails(c2, c1) for c2 in reduced)
        )
        return Label(minimal)

    # -- constructors ----------------------------------------------------

    @property
    def top(self) -> Label:
        return TOP

    @property
    def bot(self) -> Label:
        return BOT

    def principal(self, name: str) -> Label:
        if name not in self._pset:
            raise UnknownPrincipal(f"undeclared principal: {name}")
        return self.normalize({frozenset({name})})

    # -- lattice operations ----------------------------------------------

    def join(self, l1: Label, l2: Label) -> Label:
        """Least upper bound: join(l1,l2) => l iff l1 => l and l2 => l."""
        self._check_known(l1, l2)
        if l1.is_bot() or l2.is_bot():
            return BOT
        return self.normalize(l1.clauses | l2.clauses)

    def meet(self, l1: Label, l2: Label) -> Label:
        """Greatest lower bound: l => meet(l1,l2) iff l => l1 and l => l2."""
        self._check_known(l1, l2)
        if l1.is_top() or l2.is_top():
            return TOP
        if l1.is_bot():
            return l2
        if l2.is_bot():
            return l1
        return self.normalize({c1 | c2 for c1 in l1.clauses for c2 in l2.clauses})

    def join_all(self, labels) -> Label:
        out = TOP
        for lbl in labels:
            out = self.join(out, lbl)
        return out

    def meet_all(self, labels) -> Label:
        out = BOT
        for lbl in labels:
            out = self.meet(out, lbl)
        return out

    def acts_for(self, l1: Label, l2: Label) -> bool:
        """l1 => l2: l1 is at least as trusted as l2."""
        key = (l1, l2)
        hit = self._af_cache.get(key)
        if hit is not None:
            return hit
        self._check_known(l1, l2)
        # Each clause of l1 must be entailed by some clause of l2 (monotone
        # CNF entailment needs only a single clause; see tests vs the oracle).
        out = all(
            any(self._clause_entails(c2, c1) for c2 in l2.clauses)
            for c1 in l1.clauses
        )
        self._af_cache[key] = out
        return out

    def equivalent(self, l1: Label, l2: Label) -> bool:
        return self.acts_for(l1, l2) and self.acts_for(l2, l1)

    # -- valuation oracle --------------------------------------------------

    def valuations(self):
        """All 0/1 assignments respecting v(p) >= v(q) for each edge p => q."""
        n = len(self.principals)
        if n > ENUMERATION_BOUND:
            raise TooManyPrincipals(f"{n} principals exceeds enumeration bound {ENUMERATION_BOUND}")
        for bits in product((0, 1), repeat=n):
            v = dict(zip(self.principals, bits))
            if all(v[p] >= v[q] for p, q in self.delegations):
                yield v

    @staticmethod
    def eval_label(lbl: Label, v: dict[str, int]) -> int:
        out = 1
        for clause in lbl.clauses:
            c = 0
            for p in clause:
                if v[p]:
                    c = 1
                    break
            out &= c
            if not out:
                break
        return out

    def oracle_acts_for(self, l1: Label, l2: Label) -> bool:
        """Brute-force reference for acts_for over all valuations."""
        self._check_known(l1, l2)
        return all(
            self.eval_label(l1, v) >= self.eval_label(l2, v)
            for v in self.valuations()
        )

    def label_minus(self, a: Label, b: Label) -> Label:
        """Least x with meet(x, b) => a (co-Heyting subtraction).

        Used to split a static input lock across a dynamic ``lock`` term.
        Computed from the valuation semantics, then renormalized.
        """
        self._check_known(a, b)
        # x must be 1 wherever a = 1 and b = 0; take the least monotone
        # function covering those valuations.  The up-set indicator of a
        # valuation v is the lattice join of its 1-principals, and covering
        # several valuations is their lattice meet.
        marked = [v for v in self.valuations()
                  if self.eval_label(a, v) == 1 and self.eval_label(b, v) == 0]
        if not marked:
            return BOT
        out = BOT
        for v in marked:
            ones = [p for p in self.principals if v[p]]
            indicator = self.normalize({frozenset({p}) for p in ones}) if ones else TOP
            out = self.meet(out, indicator)
        return out


# -- label concrete syntax ---------------------------------------------------
#   label := meet ('\/' meet)*      (join)
#   meet  := atom ('/\' atom)*      (binds tighter)
#   atom  := 'top' | 'bot' | identifier | '(' label ')'


def parse_label(text: str, lattice: Lattice) -> Label:
    toks = _tokenize_label(text)
    pos = 0

    def peek():
        return toks[pos] if pos < len(toks) else None

    def take():
        nonlocal pos
        t = toks[pos]
        pos += 1
        return t

    def atom() -> Label:
        t = peek()
        if t is None:
            raise LabelSyntaxError(f"unexpected end of label: {text!r}")
        take()
        if t == "(":
            lbl = join_expr()
            if peek() != ")":
                raise LabelSyntaxError(f"missing ')' in label: {text!r}")
            take()
            return lbl
        if t == "top":
            return TOP
        if t == "bot":
            return BOT
        if t in ("\\/", "/\\", ")"):
            raise LabelSyntaxError(f"unexpected {t!r} in label: {text!r}")
        return lattice.principal(t)

    def meet_expr() -> Label:
        lbl = atom()
        while peek() == "/\\":
            take()
            lbl = lattice.meet(lbl, atom())
        return lbl

    def join_expr() -> Label:
        lbl = meet_expr()
        while peek() == "\\/":
            take()
            lbl = lattice.join(lbl, meet_expr())
        return lbl

    out = join_expr()
    if pos != len(toks):
        raise LabelSyntaxError(f"trailing tokens in label: {text!r}")
    return out


def _tokenize_label(text: str) -> list[str]:
    toks = []
    i = 0
    while i < len(text):
        c = text[i]
        if c.isspace():
            i += 1
        elif text.startswith("\\/", i):
            toks.append("\\/")
            i += 2
        elif text.startswith("/\\", i):
            toks.append("/\\")
            i += 2
        elif c in "()":
            toks.append(c)
            i += 1
        elif c.isalpha() or c == "_":
            j = i
            while j < len(text) and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(text[i:j])
            i = j
        else:
            raise LabelSyntaxError(f"bad character {c!r} in label: {text!r}")
    return toks
