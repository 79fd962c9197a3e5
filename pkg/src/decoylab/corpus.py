"""
Interaction data: loading, indexing, and concentration statistics.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sps
from scipy.stats import rankdata

_log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["dataset", "n_ratings", "n_users", "n_items", "density", "gini"]


class DataError(ValueError):
    """Raised for unreadable or invalid interaction data."""


@dataclass(frozen=True)
class DataFormat:
    """
    Column layout of a delimited interaction file.

    Column positions are zero-based.  ``rating`` and ``timestamp`` may be
    ``None`` for files that lack them.
    """

    delimiter: str = ","
    user: int = 0
    item: int = 1
    rating: int | None = 2
    timestamp: int | None = None
    header: bool = False


FORMATS: dict[str, DataFormat] = {
    "ml100k": DataFormat(delimiter="\t", user=0, item=1, rating=2, timestamp=3),
    "csv": DataFormat(),
    "csv-header": DataFormat(header=True),
    "implicit": DataFormat(rating=None),
    # ML-latest style ratings.csv: userId,movieId,rating,timestamp
    "movielens-csv": DataFormat(rating=2, timestamp=3, header=True),
    # Yahoo! R3 ships tab-separated user, song, rating
    "yahoo-r3": DataFormat(delimiter="\t", rating=2),
}


@dataclass(frozen=True)
class DatasetSummary:
    n_ratings: int
    n_users: int
    n_items: int
    density: float
    gini: float

    def to_dict(self, dataset: str = "") -> dict:
        return {"dataset": dataset, **asdict(self)}

    def to_csv(self, dataset: str = "", header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(SUMMARY_COLUMNS)
        w.writerow(
            [dataset, self.n_ratings, self.n_users, self.n_items, f"{self.density:.6f}", f"{self.gini:.6f}"]
        )
        return buf.getvalue()


class InteractionSet:
    """
    An immutable table of user-item interactions with dense index maps.

    Interactions are stored sorted by (user index, item index).  The user and
    item indices may be wider than the interactions they index; this is how a
    training split keeps the full item universe.

    Args:
        users:
            User identifiers, one per interaction.
        items:
            Item identifiers, one per interaction.
        values:
            Optional ratings (``None`` for implicit data).
        timestamps:
            Optional integer timestamps.
        user_index:
            Index of user identifiers; defaults to the sorted distinct users.
        item_index:
            Index of item identifiers; defaults to the sorted distinct items.
    """

    def __init__(
        self,
        users,
        items,
        values=None,
        timestamps=None,
        *,
        user_index: pd.Index | None = None,
        item_index: pd.Index | None = None,
    ):
        users = np.asarray(users)
        items = np.asarray(items)
        if users.shape != items.shape or users.ndim != 1:
            raise DataError("users and items must be 1-D arrays of equal length")
        self.user_index = _make_index(users, user_index, "user")
        self.item_index = _make_index(items, item_index, "item")

        ucodes = self.user_index.get_indexer(users) if len(users) else np.zeros(0, np.intp)
        icodes = self.item_index.get_indexer(items) if len(items) else np.zeros(0, np.intp)
        if np.any(ucodes < 0):
            raise DataError("interaction user missing from user index")
        if np.any(icodes < 0):
            raise DataError("interaction item missing from item index")

        order = np.lexsort((icodes, ucodes))
        ucodes = ucodes[order].astype(np.int64)
        icodes = icodes[order].astype(np.int64)
        if len(ucodes) > 1:
            same = (ucodes[1:] == ucodes[:-1]) & (icodes[1:] == icodes[:-1])
            if np.any(same):
                raise DataError("duplicate (user, item) interactions")

        self.user_codes = _frozen(ucodes)
        self.item_codes = _frozen(icodes)
        self.values = None if values is None else _frozen(np.asarray(values, np.float64)[order])
        self.timestamps = None if timestamps is None else _frozen(np.asarray(timestamps, np.int64)[order])
        self._csr = None

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, **kwargs) -> InteractionSet:
        """Build from a frame with ``user``, ``item`` and optional ``value``, ``timestamp`` columns."""
        values = frame["value"].to_numpy() if "value" in frame.columns else None
        ts = frame["timestamp"].to_numpy() if "timestamp" in frame.columns else None
        if values is not None and pd.isna(values).all():
            values = None
        return cls(frame["user"].to_numpy(), frame["item"].to_numpy(), values, ts, **kwargs)

    def __len__(self) -> int:
        return len(self.user_codes)

    def __repr__(self) -> str:
        return f"<InteractionSet {len(self)} interactions, {self.n_users} users, {self.n_items} items>"

    @property
    def n_users(self) -> int:
        return len(self.user_index)

    @property
    def n_items(self) -> int:
        return len(self.item_index)

    @property
    def is_explicit(self) -> bool:
        return self.values is not None

    def to_frame(self) -> pd.DataFrame:
        cols = {
            "user": self.user_index.values[self.user_codes],
            "item": self.item_index.values[self.item_codes],
        }
        if self.values is not None:
            cols["value"] = self.values
        if self.timestamps is not None:
            cols["timestamp"] = self.timestamps
        return pd.DataFrame(cols)

    def matrix(self) -> sps.csr_matrix:
        """User-item CSR matrix; values are ratings, or 1.0 for implicit data."""
        if self._csr is None:
            vals = self.values if self.values is not None else np.ones(len(self))
            m = sps.csr_matrix(
                (vals, (self.user_codes, self.item_codes)), shape=(self.n_users, self.n_items)
            )
            m.sort_indices()
            self._csr = m
        return self._csr

    def user_item_codes(self, ucode: int) -> np.ndarray:
        m = self.matrix()
        return m.indices[m.indptr[ucode] : m.indptr[ucode + 1]]

    def user_items(self, user) -> np.ndarray:
        """Item identifiers the given user interacted with (empty if unknown)."""
        code = self.user_code(user)
        if code < 0:
            return self.item_index.values[:0]
        return self.item_index.values[self.user_item_codes(code)]

    def user_code(self, user) -> int:
        code = self.user_index.get_indexer([user])[0]
        return int(code)

    def user_counts(self) -> np.ndarray:
        return np.bincount(self.user_codes, minlength=self.n_users)

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.item_codes, minlength=self.n_items)

    def select(self, mask: np.ndarray, *, reindex_users: bool = False) -> InteractionSet:
        """
        Subset of interactions selected by a boolean mask, keeping the item
        index (and the user index unless ``reindex_users``).
        """
        mask = np.asarray(mask, bool)
        users = self.user_index.values[self.user_codes[mask]]
        return InteractionSet(
            users,
            self.item_index.values[self.item_codes[mask]],
            None if self.values is None else self.values[mask],
            None if self.timestamps is None else self.timestamps[mask],
            user_index=None if reindex_users else self.user_index,
            item_index=self.item_index,
        )


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def _make_index(ids: np.ndarray, index, what: str) -> pd.Index:
    if index is None:
        return pd.Index(np.unique(ids), name=what)
    index = pd.Index(index, name=what)
    if not index.is_unique:
        raise DataError(f"{what} index has duplicate entries")
    return index


def load_interactions(path: str | Path, format: DataFormat | str = "csv") -> InteractionSet:
    """
    Load a delimited interaction file.

    Duplicate (user, item) rows collapse to the last occurrence.

    Args:
        path: the file to read.
        format: a :class:`DataFormat` or the name of a preset in :data:`FORMATS`.

    Raises:
        DataError: the file is empty or a row cannot be parsed (the message
            names the line number).
        FileNotFoundError: the file does not exist.
    """
    if isinstance(format, str):
        try:
            format = FORMATS[format]
        except KeyError:
            raise DataError(f"unknown format {format!r}; known: {', '.join(FORMATS)}") from None
    path = Path(path)
    with path.open(newline="") as f:
        lines = f.read().splitlines()

    start = 1 if format.header else 0
    needed = max(c for c in (format.user, format.item, format.rating, format.timestamp) if c is not None)
    users, items, ratings, stamps = [], [], [], []
    for lno, line in enumerate(lines[start:], start + 1):
        if not line.strip():
            continue
        fields = line.split(format.delimiter)
        if len(fields) <= needed:
            raise DataError(f"{path}:{lno}: expected at least {needed + 1} fields, got {len(fields)}")
        try:
            users.append(_parse_id(fields[format.user]))
            items.append(_parse_id(fields[format.item]))
            if format.rating is not None:
                ratings.append(float(fields[format.rating]))
            if format.timestamp is not None:
                stamps.append(int(float(fields[format.timestamp])))
        except ValueError as e:
            raise DataError(f"{path}:{lno}: {e}") from None

    if not users:
        raise DataError(f"{path}: no interactions")

    frame = pd.DataFrame({"user": _uniform_ids(users), "item": _uniform_ids(items)})
    if format.rating is not None:
        frame["value"] = ratings
    if format.timestamp is not None:
        frame["timestamp"] = stamps
    n = len(frame)
    frame = frame.drop_duplicates(["user", "item"], keep="last")
    if len(frame) < n:
        _log.info("%s: collapsed %d duplicate interactions", path, n - len(frame))
    data = InteractionSet.from_frame(frame)
    _log.info("loaded %s: %r", path, data)
    return data


def _uniform_ids(ids: list) -> list:
    # all-integer columns stay integer; anything mixed becomes text
    if all(isinstance(x, int) for x in ids):
        return ids
    return [str(x) for x in ids]


def _parse_id(text: str):
    text = text.strip()
    if not text:
        raise ValueError("empty identifier")
    try:
        return int(text)
    except ValueError:
        return text


def gini_index(counts) -> float:
    """
    Gini index of a vector of non-negative counts.

    0 means perfect equality; the largest attainable value for ``n`` entries
    is ``(n - 1) / n``.
    """
    xs = np.sort(np.asarray(counts, dtype=np.float64))
    n = len(xs)
    if n < 2:
        raise DataError("Gini index needs at least 2 entries")
    if np.any(xs < 0):
        raise DataError("Gini index undefined for negative counts")
    total = xs.sum()
    if total <= 0:
        raise DataError("Gini index undefined for all-zero counts")
    ranks = np.arange(1, n + 1, dtype=np.float64)
    g = 2.0 * np.dot(ranks, xs) / (n * total) - (n + 1) / n
    return float(min(max(g, 0.0), (n - 1) / n))


def item_popularity(data: InteractionSet) -> tuple[np.ndarray, np.ndarray]:
    """
    Per-item interaction counts and popularity ranks.

    Ranks ascend with count (rank 1 is the least popular item); ties share the
    average of their positions.

    Returns:
        ``(counts, ranks)``, both indexed by dense item index.
    """
    counts = data.item_counts()
    return counts, popularity_ranks(counts)


def popularity_ranks(counts) -> np.ndarray:
    return rankdata(np.asarray(counts), method="average")


def summarize(data: InteractionSet) -> DatasetSummary:
    if len(data) == 0:
        raise DataError("cannot summarize an empty dataset")
    n = len(data)
    return DatasetSummary(
        n_ratings=n,
        n_users=data.n_users,
        n_items=data.n_items,
        density=n / (data.n_users * data.n_items),
        gini=gini_index(data.item_counts()),
    )
