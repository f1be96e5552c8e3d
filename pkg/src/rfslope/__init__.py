"""Random-field slope reliability with machine-learning surrogate classifiers."""

__version__ = "0.1.0"
