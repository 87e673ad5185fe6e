import sys

from dpsqkd.cli import main

sys.exit(main())
