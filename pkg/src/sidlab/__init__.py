"""Slot and intent detection transfer experiments at desk scale."""

__version__ = "0.1.0"
