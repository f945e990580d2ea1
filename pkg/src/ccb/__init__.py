"""Chronological causal bandits on discrete dynamic structural causal models."""

__version__ = "0.1.0"
