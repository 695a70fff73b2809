"""Random walks, volume growth and threshold embeddings on finite graphs."""

__version__ = "0.1.0"
