"""Cantonese syllable-scheme speech recognition experimentation toolkit."""

__version__ = "0.1.0"
