import sys

from afd_analyzer.cli import main


if __name__ == "__main__":
    sys.exit(main())
