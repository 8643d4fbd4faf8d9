"""Two-stage stochastic placement of user applications on edge servers,
with an exact solver and learned surrogates for fast inference."""

__version__ = "0.1.0"
