import sys

from searchtag.cli import main

sys.exit(main())
