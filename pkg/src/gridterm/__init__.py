"""Hierarchical terminal-type recognition for smart-grid traffic captures."""

__version__ = "0.1.0"
