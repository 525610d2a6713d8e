# Command line for MoodNet
from .commands import build_parser, main

__all__ = ["build_parser", "main"]
