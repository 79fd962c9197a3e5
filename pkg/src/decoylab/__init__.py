"""Offline top-N evaluation lab for studying candidate-set sampling."""

import os

# numba's TBB layer is often too old to load; the portable layer is enough here
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
