"""Spectrogram-based multi-label music emotion tagging pipeline."""

__version__ = "0.1.0"
