"""Bundled corpus: secure and vulnerable variants of the four case studies,
plus endorsement-free programs for the noninterference suite.

Expectations here are machine-checked by the test suite; exploit worlds for
rejected programs run with checking disabled.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

CORPUS_DIR = os.path.dirname(os.path.abspath(__file__))


@dataclass(frozen=True)
class WorldExpectation:
    world: str
    outcome: str          # value | LockViolation
    mode: str = "normal"  # normal | attacker-bypass
    unchecked: bool = False
    final_nats: dict = field(default_factory=dict)   # heap name -> unary value
    final_bools: dict = field(default_factory=dict)  # heap name -> bool


@dataclass(frozen=True)
class CorpusEntry:
    name: str
    program: str
    accept: bool              # type/lock verdict parity
    honest_worlds: tuple = ()
    exploit_worlds: tuple = ()
    ni_world: str | None = None       # endorsement-free programs only
    fuzz_world: str | None = None     # small world for the mutation suites

    def path(self, fname: str) -> str:
        return os.path.join(CORPUS_DIR, fname)


ENTRIES: list[CorpusEntry] = [
    CorpusEntry(
        "uniswap-1", "uniswap-1.serif", accept=True,
        honest_worlds=(WorldExpectation(
            "uniswap-1-honest.world", "value",
            final_nats={"prodCell": 36, "ybCell": 3, "xExBal": 12, "yExBal": 3}),),
        exploit_worlds=(WorldExpectation(
            "uniswap-1-exploit.world", "value", mode="attacker-bypass",
            final_nats={"xExBal": 12, "yExBal": 3}),),  # no alert hook: attack never fires
        fuzz_world="uniswap-1-exploit.world",
    ),
    CorpusEntry(
        "uniswap-2", "uniswap-2.serif", accept=True,
        honest_worlds=(WorldExpectation(
            "uniswap-2-honest.world", "value",
            final_nats={"prodCell": 36, "ybCell": 3, "xExBal": 12, "yExBal": 3}),),
        exploit_worlds=(
            WorldExpectation("uniswap-2-exploit.world", "LockViolation", mode="attacker-bypass"),
            WorldExpectation("uniswap-2-exploit.world", "LockViolation", mode="normal"),
        ),
        fuzz_world="uniswap-2-exploit.world",
    ),
    CorpusEntry(
        "uniswap-3", "uniswap-3.serif", accept=False,
        honest_worlds=(WorldExpectation(
            "uniswap-3-honest.world", "value", unchecked=True,
            final_nats={"prodCell": 36, "ybCell": 3, "xExBal": 12, "yExBal": 3}),),
        exploit_worlds=(WorldExpectation(
            "uniswap-3-exploit.world", "value", mode="attacker-bypass", unchecked=True,
            final_nats={"prodCell": 72, "ybCell": 2, "xExBal": 18, "yExBal": 1}),),
        fuzz_world="uniswap-3-exploit.world",
    ),
    CorpusEntry(
        "towncrier-1", "towncrier-1.serif", accept=True,
        honest_worlds=(
            WorldExpectation("towncrier-1-honest.world", "value",
                             final_nats={"st0": 2, "st1": 1, "count": 2, "svcBal": 1}),
            WorldExpectation("towncrier-1-cancel.world", "value",
                             final_nats={"st0": 2, "st1": 3, "userBal": 1}),
        ),
        fuzz_world="towncrier-1-honest.world",
    ),
    CorpusEntry(
        "towncrier-2", "towncrier-2.serif", accept=False,
        honest_worlds=(WorldExpectation("towncrier-2-honest.world", "value", unchecked=True),),
        exploit_worlds=(WorldExpectation(
            "towncrier-2-exploit.world", "value", unchecked=True,
            final_nats={"st0": 2, "userBal": 1, "svcBal": 1}),),
        fuzz_world="towncrier-2-exploit.world",
    ),
    CorpusEntry(
        "towncrier-3", "towncrier-3.serif", accept=False,
        honest_worlds=(WorldExpectation("towncrier-3-honest.world", "value", unchecked=True),),
        exploit_worlds=(WorldExpectation(
            "towncrier-3-exploit.world", "value", unchecked=True,
            final_nats={"st0": 3, "userBal": 2}),),
        fuzz_world="towncrier-3-exploit.world",
    ),
    CorpusEntry(
        "kvstore-1", "kvstore-1.serif", accept=True,
        honest_worlds=(WorldExpectation(
            "kvstore-1-honest.world", "value",
            final_nats={"e0": 7, "size": 1}, final_bools={"oob": False}),),
        exploit_worlds=(
            WorldExpectation("kvstore-1-exploit.world", "LockViolation"),
            WorldExpectation("kvstore-1-exploit.world", "LockViolation", mode="attacker-bypass"),
        ),
        fuzz_world="kvstore-1-exploit.world",
    ),
    CorpusEntry(
        "kvstore-2", "kvstore-2.serif", accept=False,
        honest_worlds=(WorldExpectation(
            "kvstore-2-honest.world", "value", unchecked=True,
            final_nats={"e0": 7, "size": 1}, final_bools={"oob": False}),),
        exploit_worlds=(WorldExpectation(
            "kvstore-2-exploit.world", "value", unchecked=True,
            final_nats={"size": 0}, final_bools={"oob": True}),),
        fuzz_world="kvstore-2-exploit.world",
    ),
    CorpusEntry(
        "multidao-1", "multidao-1.serif", accept=True,
        honest_worlds=(WorldExpectation(
            "multidao-1-honest.world", "value",
            final_nats={"reserve": 4, "total": 0}),),
        exploit_worlds=(WorldExpectation(
            "multidao-1-exploit.world", "value",
            final_nats={"reserve": 4, "total": 0}),),  # reentrant twin is capped out
        fuzz_world="multidao-1-exploit.world",
    ),
    CorpusEntry(
        "multidao-2", "multidao-2.serif", accept=True,
        honest_worlds=(WorldExpectation(
            "multidao-2-honest.world", "value",
            final_nats={"reserve": 4, "total": 0}),),
        exploit_worlds=(
            WorldExpectation("multidao-2-exploit.world", "LockViolation"),
            WorldExpectation("multidao-2-exploit.world", "LockViolation", mode="attacker-bypass"),
        ),
        fuzz_world="multidao-2-exploit.world",
    ),
    CorpusEntry(
        "multidao-3", "multidao-3.serif", accept=False,
        honest_worlds=(WorldExpectation(
            "multidao-3-honest.world", "value", unchecked=True,
            final_nats={"reserve": 4, "total": 0}),),
        exploit_worlds=(WorldExpectation(
            "multidao-3-exploit.world", "value", unchecked=True,
            final_nats={"reserve": 0, "total": 0}),),  # 8 extracted against a cap of 4
        fuzz_world="multidao-3-exploit.world",
    ),
    CorpusEntry(
        "ni-bank", "ni-bank.serif", accept=True,
        honest_worlds=(WorldExpectation("ni-bank-honest.world", "value",
                                        final_nats={"bal": 5}),),
        ni_world="ni-bank-honest.world",
        fuzz_world="ni-bank-honest.world",
    ),
    CorpusEntry(
        "ni-tally", "ni-tally.serif", accept=True,
        honest_worlds=(WorldExpectation("ni-tally-honest.world", "value",
                                        final_nats={"hits": 3}),),
        ni_world="ni-tally-honest.world",
        fuzz_world="ni-tally-honest.world",
    ),
    # lock-compliance counterexample: type-checks, but trusted code ignores
    # locks, making non-tail reentrant states reachable
    CorpusEntry(
        "uniswap-noncompliant", "uniswap-noncompliant.serif", accept=True,
        exploit_worlds=(WorldExpectation(
            "uniswap-noncompliant-exploit.world", "value",
            final_nats={"prodCell": 72, "ybCell": 2, "xExBal": 18, "yExBal": 1}),),
    ),
]

TABLE_ENTRIES = [e for e in ENTRIES if e.name.split("-")[0] in
                 ("uniswap", "towncrier", "kvstore", "multidao")
                 and e.name != "uniswap-noncompliant"]


def entry(name: str) -> CorpusEntry:
    for e in ENTRIES:
        if e.name == name:
            return e
    raise KeyError(name)
