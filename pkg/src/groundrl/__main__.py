import sys

from groundrl.cli import main

sys.exit(main())
