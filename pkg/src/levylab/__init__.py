"""Short-time scaling laboratory for Lévy-driven SDEs."""

__version__ = "0.1.0"
