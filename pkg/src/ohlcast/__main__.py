"""Allow ``python -m ohlcast`` as an alternative to the console script."""
import sys

from ohlcast.cli import main

if __name__ == "__main__":
    sys.exit(main())
