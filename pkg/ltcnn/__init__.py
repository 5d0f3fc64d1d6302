"""Lightweight CNN toolkit - train, evaluate and inspect a compact image classifier."""

__version__ = "1.0.0"
