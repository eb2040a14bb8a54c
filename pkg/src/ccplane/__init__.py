"""Confidential-container control plane over a simulated TEE substrate."""

__version__ = "0.1.0"
