import sys

from src.bench.cli import main

sys.exit(main())
