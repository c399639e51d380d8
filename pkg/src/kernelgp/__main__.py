import sys

from kernelgp.cli import main

sys.exit(main())
