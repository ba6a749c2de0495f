"""Robust model-based RL with optimistic agents and pessimistic adversaries over GP dynamics."""

__version__ = "0.1.0"
