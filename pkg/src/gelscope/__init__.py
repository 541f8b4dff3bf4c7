"""Numerical experiments on gelation in the Smoluchowski coagulation equation."""

__version__ = "0.1.0"
