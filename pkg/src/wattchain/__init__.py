"""Prosumer energy trading simulator: surplus market, proof-of-work token
ledger over TCP, and a from-scratch feedforward solar forecaster."""

__version__ = "0.1.0"
