"""Shuffled linear-only-encryption inference emulator and weight extraction attack."""

__version__ = "0.1.0"
