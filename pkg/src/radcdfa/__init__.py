"""Compositional-DFA-conditioned reinforcement learning with RAD pretraining."""

__version__ = "0.1.0"
