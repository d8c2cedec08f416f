"""Graph-augmented sequence-to-sequence link prediction for knowledge graphs."""

__version__ = "0.1.0"
