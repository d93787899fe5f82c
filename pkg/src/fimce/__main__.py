import sys

from fimce.bench.cli import main

sys.exit(main())
