"""Frequency-aware LSTM models for depth-series regression."""

__version__ = "0.1.0"
