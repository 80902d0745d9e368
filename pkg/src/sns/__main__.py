import sys

from sns.cli import main

sys.exit(main())
