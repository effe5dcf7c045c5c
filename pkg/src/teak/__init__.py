"""Preprocessing of TAP reactor pulse responses: smoothing, baseline
correction and calibration between gas species (the TEAK workflow), with a
simulator for ground-truth data."""

__version__ = "0.1.0"
