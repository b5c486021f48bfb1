"""Fusion of audio- and text-side turn-taking probability streams."""

__version__ = "0.1.0"
