import sys

from densmatch.cli import main

sys.exit(main())
