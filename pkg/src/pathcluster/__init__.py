"""Clustering samples by shared random-forest decision paths, with feature attribution."""

__version__ = "0.1.0"
