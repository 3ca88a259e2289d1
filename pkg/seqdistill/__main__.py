import sys

from seqdistill.cli import main

sys.exit(main())
