"""Informed equation learner: sparse networks of atomic units collapsed into closed-form equations."""

__version__ = "0.1.0"
