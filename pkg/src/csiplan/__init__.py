"""Uplink CSI-estimation planning for TDD massive MIMO under channel aging."""

__version__ = "0.1.0"
