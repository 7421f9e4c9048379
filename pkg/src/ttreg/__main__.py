import sys

from ttreg.cli import main

sys.exit(main())
