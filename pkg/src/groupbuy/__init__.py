"""Privacy-preserving group purchasing of energy plans."""

__version__ = "0.1.0"
