"""
Main entry point for dispersim when run as a module.
"""

import sys
from dispersim.cli.main import main

if __name__ == '__main__':
    sys.exit(main())
