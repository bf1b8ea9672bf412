"""Information-driven sensor path planning with reduced value iteration."""

__version__ = "0.1.0"
