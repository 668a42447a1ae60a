import sys

from mbanet.cli import main

sys.exit(main())
