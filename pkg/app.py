#!/usr/bin/env python3
"""
Pipeline entry point (same as `python -m labornet`)

Usage:
    ./app.py cluster --edges matches.csv --out out/cluster
    ./app.py estimate --panel panel.csv --out out/estimate
"""
import sys

from labornet.cli import main


if __name__ == '__main__':
    sys.exit(main())
