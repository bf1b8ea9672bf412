"""Experiment scenarios built on the generic planners."""
