#!/usr/bin/env python3
"""
Script to summarize a sweep's grid CSV.
"""

import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from apdsync.runner import main


if __name__ == '__main__':
    if len(sys.argv) != 2:
        print("Usage: python scripts/summarize_grid.py out/fig6/grid.csv")
        sys.exit(1)
    sys.exit(main(["summarize", "--grid", sys.argv[1]]))
