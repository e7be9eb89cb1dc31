"""Deterministic multi-agent driving simulation with SVO-weighted rewards,
an SVO recognition network, and SVO-conditioned decision policies."""

__version__ = "0.1.0"
