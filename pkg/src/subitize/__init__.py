"""Salient object subitizing: synthetic scenes, a small CNN, and count-aware evaluation."""
__version__ = "0.1.0"
