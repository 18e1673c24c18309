import sys

from src.cli.main import main

if __name__ == "__main__":
    # python -m src.main run experiments/distance_table.yaml
    sys.exit(main())
