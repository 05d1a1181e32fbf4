"""Adversarial inverse RL with joint reward-policy options."""

__version__ = "0.1.0"
