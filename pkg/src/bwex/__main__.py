import sys

from bwex.cli import main

sys.exit(main())
