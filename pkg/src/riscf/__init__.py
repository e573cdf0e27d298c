"""Robust beamforming for RIS-aided cell-free downlink under bounded CSI errors and limited backhaul."""

__version__ = "0.1.0"
