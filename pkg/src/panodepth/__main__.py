import sys

from panodepth.cli import main

sys.exit(main())
