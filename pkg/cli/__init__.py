"""
CyclingLab CLI

Command-line interface for CyclingLab.
"""

from cli.app import app
from cli.__main__ import main

__all__ = ["app", "main"]
