"""Hierarchical, differentially private federated learning of PID auto-tuning models for CEA climate control."""

__version__ = "0.1.0"
