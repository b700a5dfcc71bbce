"""Shared vision-language representations for joint recognition and VQA."""

__version__ = "0.1.0"
