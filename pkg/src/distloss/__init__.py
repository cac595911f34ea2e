"""Distribution-aligned deep imbalanced regression."""

__version__ = "0.1.0"
