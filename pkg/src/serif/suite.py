"""Security property suites: the executable form of the toolkit's
correctness and security claims, shared by `serif suite` and the acceptance
tests.  Seeds are fixed so failures reproduce."""

from __future__ import annotations

import random
import time
from dataclasses import dataclass

from . import corpus
from .frontend import Invocation, nat_of_value
from .fuzz import ProgramFuzzer
from .harness import (attacker_mutate, bullet_erase_heap, ct_equiv, heap_iso,
                      heap_iso_full, is_endorsement_free, ni_test,
                      preservation_run)
from .interp import (MODE_ATTACKER_BYPASS, MODE_NORMAL, Allocator, StuckError,
                     run_invocation, run_sequence)
from .lattice import BOT, TOP, Lattice
from .loader import load_world
from .monitor import Monitor
from .typecheck import Checker, complies_with_locks


@dataclass
class SuiteResult:
    name: str
    ok: bool
    detail: str
    seconds: float


def _corpus_world(entry: corpus.CorpusEntry, fname: str):
    return load_world(entry.path(fname))


def _run_expectation(lw, exp: corpus.WorldExpectation):
    """Run one expected-outcome world; returns (ok, detail)."""
    heap = lw.fresh_heap()
    mode = MODE_ATTACKER_BYPASS if exp.mode == "attacker-bypass" else MODE_NORMAL
    sr = run_sequence(lw.invocations, lw.ct, heap, mode=mode, partition=lw.partition)
    if exp.outcome == "value":
        if not sr.ok:
            r = sr.results[sr.failed_index]
            return False, f"{exp.world}: expected success, got {r.outcome}"
    else:
        if sr.ok:
            return False, f"{exp.world}: expected {exp.outcome}, run succeeded"
        r = sr.results[sr.failed_index]
        if r.outcome != "fault" or r.fault.kind != exp.outcome:
            return False, f"{exp.world}: expected {exp.outcome}, got {r.outcome}"
    for name, want in exp.final_nats.items():
        got = nat_of_value(sr.heap[name][0])
        if got != want:
            return False, f"{exp.world}: {name} = {got}, want {want}"
    for name, want in exp.final_bools.items():
        got = sr.heap[name][0].value
        if got != want:
            return False, f"{exp.world}: {name} = {got}, want {want}"
    return True, ""


# -- criterion 1 & 2: exploit replay and patch ---------------------------------

def suite_uniswap_exploit(fast: bool = False) -> SuiteResult:
    t0 = time.time()
    e = corpus.entry("uniswap-3")
    lw = _corpus_world(e, "uniswap-3-exploit.world")
    r = run_invocation(lw.invocations[0], lw.ct, lw.fresh_heap(),
                       mode=MODE_ATTACKER_BYPASS, partition=lw.partition)
    want = {"prodCell": 72, "ybCell": 2, "xExBal": 18, "yExBal": 1}
    got = {k: nat_of_value(r.heap[k][0]) for k in want}
    ok = r.outcome == "value" and got == want
    return SuiteResult("uniswap-exploit-replay", ok,
                       f"final {got} (want {want})", time.time() - t0)


def suite_uniswap_patch(fast: bool = False) -> SuiteResult:
    t0 = time.time()
    e = corpus.entry("uniswap-2")
    lw = _corpus_world(e, "uniswap-2-exploit.world")
    details = []
    ok = True
    for mode in (MODE_ATTACKER_BYPASS, MODE_NORMAL):
        r = run_invocation(lw.invocations[0], lw.ct, lw.fresh_heap(),
                           mode=mode, partition=lw.partition)
        good = (r.outcome == "fault" and r.fault.kind == "LockViolation"
                and "sellXForY" in r.fault.message)
        ok = ok and good
        details.append(f"{mode}: {r.fault.kind if r.fault else r.outcome}")
    return SuiteResult("uniswap-patch-lockviolation", ok, "; ".join(details),
                       time.time() - t0)


# -- criterion 3: verdict parity -------------------------------------------------

def suite_table_verdicts(fast: bool = False) -> SuiteResult:
    t0 = time.time()
    bad = []
    for e in corpus.TABLE_ENTRIES:
        lw = load_world(e.path((e.honest_worlds + e.exploit_worlds)[0].world))
        accept = lw.program_verdict.ok
        if accept != e.accept:
            bad.append(f"{e.name}: got {'accept' if accept else 'reject'}")
        if accept and lw.partition is not None:
            comp_ok, _ = complies_with_locks(lw.ct, lw.partition)
            if not comp_ok:
                bad.append(f"{e.name}: unexpected lock-compliance failure")
    n = len(corpus.TABLE_ENTRIES)
    return SuiteResult("table-verdict-parity",
                       not bad, f"{n - len(bad)}/{n} variants match" +
                       ("" if not bad else "; " + "; ".join(bad)),
                       time.time() - t0)


# -- criterion 4: lattice laws ----------------------------------------------------

def suite_lattice_laws(fast: bool = False) -> SuiteResult:
    t0 = time.time()
    trials = 1_000 if fast else 10_000
    lat = Lattice(["A", "B", "C", "D"], [("A", "B")])
    rng = random.Random(20240 + trials)
    atoms = [lat.principal(p) for p in lat.principals] + [TOP, BOT]

    def rand_label(depth=3):
        if depth == 0 or rng.random() < 0.3:
            return rng.choice(atoms)
        a, b = rand_label(depth - 1), rand_label(depth - 1)
        return lat.join(a, b) if rng.random() < 0.5 else lat.meet(a, b)

    violations = 0
    for _ in range(trials):
        a, b, c = rand_label(), rand_label(), rand_label()
        checks = [
            lat.join(a, b) == lat.join(b, a),
            lat.meet(a, b) == lat.meet(b, a),
            lat.join(a, lat.join(b, c)) == lat.join(lat.join(a, b), c),
            lat.meet(a, lat.meet(b, c)) == lat.meet(lat.meet(a, b), c),
            lat.join(a, a) == a and lat.meet(a, a) == a,
            lat.join(a, lat.meet(a, b)) == a,
            lat.meet(a, lat.join(a, b)) == a,
            lat.join(a, lat.meet(b, c)) == lat.meet(lat.join(a, b), lat.join(a, c)),
        ]
        if not all(checks):
            violations += 1
    agree = 0
    pairs = trials
    for _ in range(pairs):
        l1, l2 = rand_label(), rand_label()
        if lat.acts_for(l1, l2) == lat.oracle_acts_for(l1, l2):
            agree += 1
    ok = violations == 0 and agree == pairs
    return SuiteResult("lattice-laws", ok,
                       f"{trials} triples, {violations} violations; "
                       f"oracle agreement {agree}/{pairs}", time.time() - t0)


# -- criterion 5: preservation ----------------------------------------------------

def suite_preservation(fast: bool = False) -> SuiteResult:
    t0 = time.time()
    bad = []
    steps = 0
    for e in corpus.ENTRIES:
        worlds = list(e.honest_worlds) + list(e.exploit_worlds)
        if fast:
            worlds = worlds[:1]
        for exp in worlds:
            lw = _corpus_world(e, exp.world)
            mode = MODE_ATTACKER_BYPASS if exp.mode == "attacker-bypass" else MODE_NORMAL
            heap = lw.fresh_heap()
            for inv in lw.invocations:
                rep = preservation_run(lw.ct, inv, heap, mode=mode,
                                       partition=lw.partition)
                steps += rep.steps
                if not rep.ok:
                    bad.append(f"{exp.world}: {rep.violations[0]}")
                    break
    return SuiteResult("preservation", not bad,
                       f"{steps} steps re-checked" + ("" if not bad else f"; {bad[0]}"),
                       time.time() - t0)


# -- criterion 6: progress ----------------------------------------------------------

def suite_progress(fast: bool = False) -> SuiteResult:
    t0 = time.time()
    want = 100 if fast else 1_000
    produced = 0
    stuck = []
    seed = 0
    while produced < want and seed < want * 60:
        seed += 1
        fz = ProgramFuzzer(seed)
        out = fz.checked_program()
        if out is None:
            continue
        ct, inv, heap = out
        produced += 1
        try:
            r = run_invocation(inv, ct, dict(heap), budget=30_000)
        except StuckError as ex:
            stuck.append(f"seed {seed}: {ex}")
            continue
        if r.outcome not in ("value", "nontermination") and r.fault.kind not in (
                "LockViolation", "BadCast", "NullDeref"):
            stuck.append(f"seed {seed}: fault {r.fault.kind}")
    ok = produced == want and not stuck
    return SuiteResult("progress", ok,
                       f"{produced} checked programs, {len(stuck)} bad halts" +
                       ("" if not stuck else f"; first: {stuck[0]}"),
                       time.time() - t0)


# -- criterion 7: noninterference -----------------------------------------------------

def suite_noninterference(fast: bool = False) -> SuiteResult:
    t0 = time.time()
    trials = 20 if fast else 100
    details = []
    ok = True
    tested = 0
    for e in corpus.ENTRIES:
        if e.ni_world is None:
            continue
        lw = _corpus_world(e, e.ni_world)
        free, _ = is_endorsement_free(lw.ct, lw.partition.trust)
        if not free:
            ok = False
            details.append(f"{e.name}: expected endorsement-free")
            continue
        for inv in lw.invocations:
            rep = ni_test(lw.ct, inv, lw.fresh_heap(), lw.partition,
                          trials=trials, seed=hash(e.name) & 0xFFFF)
            tested += 1
            if not rep.ok:
                ok = False
                details.append(f"{e.name}: {rep.reason or rep.failures[:2]}")
    # endorsing programs must be reported inapplicable, not failed
    lw = _corpus_world(corpus.entry("towncrier-1"), "towncrier-1-honest.world")
    rep = ni_test(lw.ct, lw.invocations[0], lw.fresh_heap(), lw.partition, trials=1)
    if rep.applicable:
        ok = False
        details.append("towncrier-1 should be inapplicable (it endorses)")
    return SuiteResult("noninterference", ok,
                       f"{tested} invocations x {trials} heap pairs; "
                       + ("all isomorphic" if ok else "; ".join(details)),
                       time.time() - t0)


# -- criterion 8: tail-only reentrancy --------------------------------------------------

MUTATION_TARGETS = ["uniswap-1", "uniswap-2", "towncrier-1", "kvstore-1",
                    "multidao-1", "multidao-2", "ni-bank", "ni-tally"]


def suite_tail_only(fast: bool = False) -> SuiteResult:
    t0 = time.time()
    per_program = 100 if fast else 1_000
    violations = []
    reentrant_seen = 0
    runs = 0
    for name in MUTATION_TARGETS:
        e = corpus.entry(name)
        lw = _corpus_world(e, e.fuzz_world)
        comp_ok, _ = complies_with_locks(lw.ct, lw.partition)
        if not (lw.program_verdict.ok and comp_ok):
            violations.append(f"{name}: not checked+compliant")
            continue
        produced = 0
        seed = 0
        while produced < per_program and seed < per_program * 4:
            seed += 1
            mutated = attacker_mutate(lw.ct, lw.partition, seed)
            if mutated is None:
                continue
            produced += 1
            for mode in (MODE_NORMAL, MODE_ATTACKER_BYPASS):
                mon = Monitor(lw.ct.lattice, lw.partition, keep_snapshots=False)
                heap = lw.fresh_heap()
                runs += 1
                for inv in lw.invocations:
                    r = run_invocation(inv, mutated, heap, mode=mode,
                                       partition=lw.partition, monitor=mon,
                                       budget=20_000)
                    heap = r.heap
                    if r.outcome != "value":
                        break
                reentrant_seen += len(mon.reentrant_steps)
                if mon.violations:
                    violations.append(f"{name} seed {seed} {mode}: {mon.violations[0].detail}")
        if produced < per_program:
            violations.append(f"{name}: only {produced}/{per_program} mutants")
    ok = not violations
    return SuiteResult("tail-only-reentrancy", ok,
                       f"{runs} monitored runs, {reentrant_seen} reentrant states, "
                       f"{len(violations)} violations" +
                       ("" if ok else f"; first: {violations[0]}"),
                       time.time() - t0)


# -- criterion 9: determinism modulo locations ---------------------------------------------

def suite_determinism(fast: bool = False) -> SuiteResult:
    t0 = time.time()
    pairs = 40 if fast else 200
    bad = []
    worlds = [(e, w.world) for e in corpus.ENTRIES
              for w in e.honest_worlds if w.outcome == "value" and not w.unchecked]
    done = 0
    i = 0
    while done < pairs:
        e, wname = worlds[i % len(worlds)]
        i += 1
        lw = _corpus_world(e, wname)
        h1 = lw.fresh_heap()
        h2 = lw.fresh_heap()
        sr1 = run_sequence(lw.invocations, lw.ct, h1, allocator=Allocator())
        sr2 = run_sequence(lw.invocations, lw.ct, h2, allocator=Allocator(seed=done + 1))
        done += 1
        if not (sr1.ok and sr2.ok):
            bad.append(f"{wname}: runs failed")
            continue
        if heap_iso_full(sr1.heap, sr2.heap, lw.ct.lattice) is None:
            bad.append(f"{wname}: final heaps not isomorphic")
    return SuiteResult("determinism-mod-locations", not bad,
                       f"{done} shuffled-allocation run pairs" +
                       ("" if not bad else f"; {bad[0]}"),
                       time.time() - t0)


# -- corpus behavioral parity (supports criteria 1-3) ----------------------------------------

def suite_corpus_runs(fast: bool = False) -> SuiteResult:
    t0 = time.time()
    bad = []
    n = 0
    for e in corpus.ENTRIES:
        for exp in list(e.honest_worlds) + list(e.exploit_worlds):
            lw = _corpus_world(e, exp.world)
            n += 1
            ok, detail = _run_expectation(lw, exp)
            if not ok:
                bad.append(detail)
    return SuiteResult("corpus-run-parity", not bad,
                       f"{n - len(bad)}/{n} world expectations hold" +
                       ("" if not bad else f"; {bad[0]}"),
                       time.time() - t0)


ALL_SUITES = [
    suite_lattice_laws,
    suite_table_verdicts,
    suite_corpus_runs,
    suite_uniswap_exploit,
    suite_uniswap_patch,
    suite_preservation,
    suite_progress,
    suite_noninterference,
    suite_tail_only,
    suite_determinism,
]


def run_suites(filter_text: str = "", fast: bool = False) -> list[SuiteResult]:
    results = []
    for fn in ALL_SUITES:
        probe = fn.__name__.replace("suite_", "").replace("_", "-")
        if filter_text and filter_text not in probe:
            continue
        results.append(fn(fast=fast))
    return results
