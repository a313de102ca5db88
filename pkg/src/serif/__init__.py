"""Toolkit for SeRIF, a secure-reentrancy information-flow language:
lattice label model, parser, type checker with static lock labels, small-step
interpreter with dynamic locks and attacker modes, reentrancy monitor, and
security property harness."""

__version__ = "0.1.0"
