"""Object-centric world models with a relational semantic module."""

__version__ = "0.1.0"
