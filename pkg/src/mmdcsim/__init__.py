"""Discrete-event simulator for dual-connectivity LTE + mmWave access.

Compares fast-switching / secondary-cell-handover mobility management
against a standalone hard-handover baseline over a semi-statistical
blockage-driven 28 GHz channel, reporting loss, latency, throughput,
throughput stability, and control-traffic KPIs.
"""

from .engine import ConfigError, EventQueue, RngStreams, SimConfig
from .simrun import simulate_run

__all__ = ["ConfigError", "EventQueue", "RngStreams", "SimConfig",
           "simulate_run"]
__version__ = "0.1.0"
