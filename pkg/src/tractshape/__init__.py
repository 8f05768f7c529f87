"""Fiber-cluster shape measures, computed classically and by a learned point-cloud regressor."""

__version__ = "0.1.0"
