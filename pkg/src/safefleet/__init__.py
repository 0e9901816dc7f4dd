"""Learned control-barrier safety filters for differential-drive warehouse fleets."""

__version__ = "0.1.0"
