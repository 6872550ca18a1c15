"""PANI Lab: penalized action noise injection, exact noisy-action MDPs and toy agents."""

__version__ = "0.1.0"
