"""Reachability-based robust tracking MPC for ReLU neural-network dynamic models."""

__version__ = "0.1.0"
