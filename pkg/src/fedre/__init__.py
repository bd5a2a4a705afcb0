"""Federated learning simulator with region-aware layer-wise local differential privacy."""

__version__ = "0.1.0"
