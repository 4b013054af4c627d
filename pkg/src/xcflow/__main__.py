import sys

from xcflow.cli import main

sys.exit(main())
