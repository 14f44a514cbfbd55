"""Model-free control of a reduced inflammation model on virtual patients."""

__version__ = "0.1.0"
