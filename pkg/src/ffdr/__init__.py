"""Filtering-free unsupervised domain adaptation for lexical-match dense retrieval."""

__version__ = "0.1.0"
