"""Consensus-agnostic epoch reconfiguration with a deterministic simulator."""

__version__ = "0.1.0"
