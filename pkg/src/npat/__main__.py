"""Entry point: ``python -m npat`` and the ``npat`` console script."""
import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
