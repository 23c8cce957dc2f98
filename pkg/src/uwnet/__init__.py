"""Minimum-power networking over frequency-selective acoustic links."""

__version__ = "0.1.0"
