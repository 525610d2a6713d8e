#!/usr/bin/env python3
"""MoodNet - Main Entry Point."""
import sys

from cli.commands import main


if __name__ == "__main__":
    sys.exit(main())
