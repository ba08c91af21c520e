"""Sequence-to-sequence summarization with soft-target output
regularization, character-level ROUGE, label-relatedness analysis, and
a blinded human-evaluation service."""

__version__ = "0.1.0"
