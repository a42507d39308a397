"""Deterministic discrete-event simulator for serverless autoscaling policies."""

__version__ = "0.1.0"
