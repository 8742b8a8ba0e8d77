import sys

from smartmixed.cli import main

sys.exit(main())
