"""
Entry point for running fixdiff as a module: python -m fixdiff

This allows the package to be executed directly:
    python -m fixdiff exp elastic --out results/
    python -m fixdiff --help
"""

import sys

from fixdiff.cli import main

if __name__ == "__main__":
    sys.exit(main())
