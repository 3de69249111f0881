#!/usr/bin/env python3
"""Standalone launcher, equivalent to `python3 -m model_export`.

Example:
    ./export.py --backbone dinov2-vitl14 --out exports/dinov2-vitl14/
"""

import sys

from model_export.cli import main

if __name__ == "__main__":
    sys.exit(main())
