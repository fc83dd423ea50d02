"""Allow `python -m qchaos`."""

import sys

from .cli import main

sys.exit(main())
