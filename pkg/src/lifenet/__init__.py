"""Deadline-constrained multi-hop network control: simulator and LP oracle."""

__version__ = "0.1.0"
