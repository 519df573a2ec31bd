"""Stereo sound event localization and detection toolkit."""

__version__ = "0.1.0"
