"""Region generation from road-network elements and service demand records."""

__version__ = "0.1.0"
