"""Simulators for decentralised edge stream processing."""

__version__ = "0.1.0"
