"""Distributed microgrid-to-grid synchronisation: droop DGs, leader-follower consensus, sync-check relay."""

from .engine import Report, TimeSeries, run, summarize
from .scenario import Scenario, parse_scenario

__all__ = ["Report", "TimeSeries", "run", "summarize", "Scenario", "parse_scenario"]
