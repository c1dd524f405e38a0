"""Quantum multi-agent Q-learning with reward-shaping communication protocols."""

__version__ = "0.1.0"
