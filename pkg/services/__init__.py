"""Simulation layers of the body-to-body network simulator."""

from __future__ import annotations

__all__ = [
    "dissemination",
    "experiment_service",
    "mac_csma",
    "metrics",
    "mobility",
    "output_writers",
    "phy_channel",
    "radio_medium",
    "routing_dymo",
    "sim_core",
]
