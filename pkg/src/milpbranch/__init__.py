"""Exact MILP branch and bound with learned temporo-attentional variable selection."""

__version__ = "0.1.0"
