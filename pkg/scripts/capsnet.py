"""Script for running the capsule-network command line from a checkout."""

from capsnet.cli import main

if __name__ == "__main__":
    main()
