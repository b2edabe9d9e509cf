#!/usr/bin/env python3
"""
Main entry point for the RMT pruning CLI
Handles command-line arguments and application startup
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
