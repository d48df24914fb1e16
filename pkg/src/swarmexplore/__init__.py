"""Multi-robot exploration planner and deterministic 2D simulator."""

__version__ = "0.1.0"
