"""Deterministic bilateral tele-assembly simulator with shared autonomy."""

__version__ = "0.1.0"
