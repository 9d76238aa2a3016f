import sys

from twoboundary.cli import main

sys.exit(main())
