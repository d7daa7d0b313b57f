"""
Entry point for the stochastic ranking process experiments.

Usage:
    python app.py analytic --config configs/two_point.toml
    python app.py compare --config configs/two_point.toml --threads 4
"""
import sys

from ranking_process.cli import main

if __name__ == "__main__":
    sys.exit(main())
