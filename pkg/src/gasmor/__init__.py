"""Transient gas network simulation and structured model order reduction."""

__version__ = "0.1.0"
