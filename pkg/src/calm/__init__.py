"""Cognitive-load estimation from pupillometry and ECG-derived heart-rate variability."""

__version__ = "0.1.0"
