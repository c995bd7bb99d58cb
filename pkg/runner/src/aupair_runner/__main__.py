import sys

from aupair_runner import main

sys.exit(main())
