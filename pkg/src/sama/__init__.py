"""Desk-scale factorized video-editing training framework."""

__version__ = "0.1.0"
