import sys

from qnrl.cli import main

sys.exit(main())
