#!/usr/bin/env python3
"""
Launcher script for qchaos.
Runs the command-line front end from a source checkout.
"""

import sys
import os

# Add src directory to Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from qchaos.cli import main

if __name__ == '__main__':
    sys.exit(main())
