"""Alternative-product recommendations from product text and co-compare
behavior: Siamese BiLSTM embeddings, approximate cosine kNN, baseline
recommenders, and offline evaluation."""

__version__ = "0.1.0"
