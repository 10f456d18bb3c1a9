import sys

from season_ranker.cli.cli import main

if __name__ == "__main__":
    sys.exit(main())
