"""Offline perception exporter for the refvos bundle schema."""

__version__ = "0.1.0"
