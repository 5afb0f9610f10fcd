"""GRU surrogates with PCA field reduction for micro-structure state recovery."""

__version__ = "0.1.0"
