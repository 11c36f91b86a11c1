import sys

from robust_bo.cli import main

sys.exit(main())
