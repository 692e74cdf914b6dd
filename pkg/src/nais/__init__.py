"""Item-based collaborative filtering with FISM and the NAIS attention model."""

__version__ = "0.1.0"
