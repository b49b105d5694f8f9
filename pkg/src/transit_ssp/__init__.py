"""Stochastic trip planning on GP-modelled transit edge travel times."""

__version__ = "0.1.0"
