#!/usr/bin/env python3
"""
sketchlab command-line entry point
Usage: python sketchlab.py --help
"""

import logging
import sys

from src.cli import main

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')

if __name__ == '__main__':
    sys.exit(main())
