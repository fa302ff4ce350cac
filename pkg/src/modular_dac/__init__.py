"""Modular evolutionary-algorithm space with a learned dynamic configurator."""

__version__ = "0.1.0"
