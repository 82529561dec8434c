"""Temporal-relational radar object detection and tracking on a numpy autodiff core."""

__version__ = "0.1.0"
