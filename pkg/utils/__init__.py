"""ambivote: ambivalence / hesitancy classification from multimodal embeddings."""

__version__ = "0.1.0"
