"""Deterministic discrete-event simulator for multifractal-traffic-aware
load balancing."""

__version__ = "0.1.0"
