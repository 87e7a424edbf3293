"""Desk-scale laboratory for reconstructing text from transformer gradients."""

__version__ = "0.1.0"
