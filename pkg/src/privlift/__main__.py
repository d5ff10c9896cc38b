import sys

from privlift.cli import main

sys.exit(main())
