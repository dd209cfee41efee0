"""Event-based pose tracking with spiking networks and Hamming-similarity attention."""

__version__ = "0.1.0"
