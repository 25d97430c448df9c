"""Federated training with sharpness-aware local steps and sharpness-weighted aggregation."""

__version__ = "0.1.0"
