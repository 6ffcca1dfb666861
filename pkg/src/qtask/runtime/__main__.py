"""Worker process entry point: ``python -m qtask.runtime <backend selector>``."""

import sys

from .worker import main

sys.exit(main())
