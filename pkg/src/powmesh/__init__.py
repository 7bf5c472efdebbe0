"""Discrete-event simulation and planning for PoW blockchains on IoT devices."""

__version__ = "0.1.0"
