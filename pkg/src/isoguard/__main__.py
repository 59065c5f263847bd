import sys

from isoguard.cli import main

sys.exit(main())
