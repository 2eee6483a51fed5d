import sys

from wiplab.cli import main

sys.exit(main())
