#!/usr/bin/env python3
"""
Main entry point for the transient queueing toolkit.

This script runs the `tq` command-line interface: transient pmfs, moments,
identity checks, regulated Brownian motion tables, simulation and oracles.
"""

import sys
from transient_queues.cli import main

if __name__ == "__main__":
    sys.exit(main())
