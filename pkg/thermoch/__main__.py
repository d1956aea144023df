"""Allow `python -m thermoch ...`."""
import sys

from .main import main

sys.exit(main())
