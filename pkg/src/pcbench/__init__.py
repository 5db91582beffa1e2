"""Predictive-coding network toolkit: energy-based inference and learning, closed-form oracles and an experiment CLI."""

__version__ = "0.1.0"
