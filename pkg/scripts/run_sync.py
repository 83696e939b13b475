#!/usr/bin/env python3
"""
CLI script to run apdsync simulations, sweeps and classifications.

Usage: python scripts/run_sync.py simulate --config config/fig5a.yml --out out/fig5a
"""

import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from apdsync.runner import main


if __name__ == '__main__':
    sys.exit(main())
