#!/usr/bin/env python3
"""
Main CLI entrypoint for the PMU event identifier.

Convenience wrapper around `app.pipelines.cli` for running from a checkout
without installing the package.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from app.pipelines.cli import main

if __name__ == "__main__":
    sys.exit(main())
