"""
Entry point: python src/rlt.py <bench|detect|root|solve|generate> ...
"""

import sys

from bench_cli import main

if __name__ == "__main__":
    sys.exit(main())
