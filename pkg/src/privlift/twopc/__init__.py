"""Garbled-circuit two-party computation."""

from privlift.twopc.session import run_2pc

__all__ = ["run_2pc"]
