import os
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from decoylab.corpus import InteractionSet

ROOT = Path(__file__).resolve().parents[1]
ML100K = Path(os.environ.get("DECOYLAB_ML100K", ROOT / "data" / "ml-100k" / "u.data"))

#: (criterion, passed, detail) rows printed at the end of the run
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def ml100k_path():
    if not ML100K.exists():
        pytest.skip(f"ML-100K not found at {ML100K}; run scripts/fetch_ml100k.py")
    return ML100K


@pytest.fixture
def toy_ratings():
    "Small explicit-rating set: 4 users, 5 items."
    rows = [
        (1, 10, 4.0), (1, 11, 3.0), (1, 12, 5.0),
        (2, 10, 5.0), (2, 11, 2.0), (2, 13, 4.0),
        (3, 11, 4.0), (3, 12, 2.0), (3, 14, 1.0),
        (4, 10, 3.0), (4, 13, 5.0), (4, 14, 4.0),
    ]
    df = pd.DataFrame(rows, columns=["user", "item", "value"])
    return InteractionSet.from_frame(df)


def random_interactions(rng: np.random.Generator, n_users=None, n_items=None, density=None, explicit=True):
    n_users = n_users or int(rng.integers(3, 30))
    n_items = n_items or int(rng.integers(3, 40))
    density = density or float(rng.uniform(0.1, 0.6))
    mask = rng.random((n_users, n_items)) < density
    # every user gets at least one item
    mask[np.arange(n_users), rng.integers(0, n_items, n_users)] = True
    u, i = np.nonzero(mask)
    vals = rng.integers(1, 6, len(u)).astype(float) if explicit else None
    return InteractionSet(u, i, vals, item_index=pd.RangeIndex(n_items))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
