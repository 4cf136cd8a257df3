"""Averaging near-homomorphisms on proper groupoids into true homomorphisms."""

__version__ = "0.1.0"
