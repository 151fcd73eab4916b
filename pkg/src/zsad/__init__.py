"""Decoupled-prompt zero-shot anomaly detection toolkit."""

__version__ = "0.1.0"
