import sys

from hbubble.cli import main

sys.exit(main())
