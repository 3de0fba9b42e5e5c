import sys

from polysplat.cli import main

sys.exit(main())
