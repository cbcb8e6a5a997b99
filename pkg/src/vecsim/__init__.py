"""Volunteer edge-cloud scheduling simulator.

Deterministic pipeline: synthetic fleet generation -> capacity clustering ->
availability forecasting -> two-phase scheduling with cache-backed fail-over,
plus baseline schedulers and reproducible metric reports.
"""

__version__ = "0.1.0"
