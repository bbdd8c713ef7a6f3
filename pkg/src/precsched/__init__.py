"""Precedence-constrained makespan scheduling toolkit."""
__version__ = "0.1.0"
