"""Deterministic simulation of a QoS-assuring PaaS control plane."""

__version__ = "0.1.0"
