"""Coordinate regression as classification with multiscale softmax cross entropy."""

__version__ = "0.1.0"
