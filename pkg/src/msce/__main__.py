import sys

from msce.cli import main

sys.exit(main())
