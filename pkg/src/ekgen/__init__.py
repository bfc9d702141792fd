"""Evolutionary-knowledge-graph comment generation for chapterized corpora."""

__version__ = "0.1.0"
