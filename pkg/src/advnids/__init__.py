"""Adversarial evaluation toolkit for deep-learning network intrusion detectors."""

__version__ = "0.1.0"
