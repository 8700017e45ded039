"""Desk-scale continual-learning lab with difficulty-guided replay allocation."""

__version__ = "0.1.0"
