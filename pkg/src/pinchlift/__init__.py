"""Decentralized pinch-lift-move: constellation rewards, command decomposition,
curriculum, a desk-scale contact simulator and evaluation metrics."""

__version__ = "0.1.0"
