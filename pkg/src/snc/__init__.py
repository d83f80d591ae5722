"""Symbolic-numeric computation service: expressions, JIT, wire protocol, scheduler."""
__version__ = "0.1.0"
