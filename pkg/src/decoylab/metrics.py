"""
Top-N ranking metrics with binary relevance, and popularity diagnostics.
"""

from __future__ import annotations

import math
from collections.abc import Collection, Mapping, Sequence

import numpy as np
import pandas as pd

from .recommend import RankedList

RANKING_METRICS = ("ndcg", "precision", "recall", "recip_rank", "hit")
USER_COLUMNS = ["algo", "strategy", "n_decoys", "metric", "user", "value"]
AGGREGATE_COLUMNS = ["algo", "strategy", "n_decoys", "metric", "mean", "n_users"]


def _items(ranked) -> Sequence:
    return ranked.items if isinstance(ranked, RankedList) else ranked


def _hits(ranked, relevant: Collection, k: int | None) -> np.ndarray:
    items = _items(ranked)
    if k is not None:
        if k < 1:
            raise ValueError("cutoff k must be >= 1")
        items = items[:k]
    return np.fromiter((i in relevant for i in items), dtype=bool, count=len(items))


def _discounts(n: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, n + 2))


def ndcg_at(ranked, relevant: Collection, k: int) -> float:
    """
    nDCG at ``k`` with binary gains; the ideal list puts
    ``min(k, |relevant|)`` relevant items first.  0 when nothing is relevant.
    """
    hits = _hits(ranked, relevant, k)
    if not relevant:
        return 0.0
    disc = _discounts(k)
    dcg = float(np.sum(disc[: len(hits)][hits]))
    idcg = float(np.sum(disc[: min(k, len(relevant))]))
    return dcg / idcg


def precision_at(ranked, relevant: Collection, k: int) -> float:
    """Hits in the top ``k`` divided by ``k`` (not by list length)."""
    return float(_hits(ranked, relevant, k).sum()) / k


def recall_at(ranked, relevant: Collection, k: int) -> float:
    if not relevant:
        return 0.0
    return float(_hits(ranked, relevant, k).sum()) / len(relevant)


def hit_at(ranked, relevant: Collection, k: int) -> int:
    return int(_hits(ranked, relevant, k).any())


def reciprocal_rank(ranked, relevant: Collection, k: int | None = None) -> float:
    """``1 / r`` for the first relevant rank ``r`` within the top ``k``; 0 if none."""
    hits = _hits(ranked, relevant, k)
    pos = np.flatnonzero(hits)
    return 1.0 / (int(pos[0]) + 1) if len(pos) else 0.0


def mean_popularity_rank(ranked, ranks: Mapping | pd.Series | np.ndarray) -> float:
    """
    Mean popularity rank of every listed item (rank 1 is least popular).

    ``ranks`` maps item identifier to rank; a bare array is indexed by the
    list's item codes.

    Raises:
        KeyError: a listed item has no rank.
    """
    if isinstance(ranks, np.ndarray):
        if not isinstance(ranked, RankedList) or ranked.codes is None:
            raise TypeError("array ranks need a RankedList with item codes")
        vals = ranks[ranked.codes]
    else:
        vals = [ranks[i] for i in _items(ranked)]
    if len(vals) == 0:
        return math.nan
    return float(np.mean(vals))


def popularity_tendency(lists: Sequence, ranks) -> float:
    """Mean over lists of :func:`mean_popularity_rank`."""
    if not lists:
        raise ValueError("need at least one list")
    return float(np.mean([mean_popularity_rank(rl, ranks) for rl in lists]))


def evaluate_list(ranked, relevant: Collection, k: int, ranks=None) -> dict[str, float]:
    """All ranking metrics for one list, plus ``pop_rank`` when ``ranks`` is given."""
    out = {
        "ndcg": ndcg_at(ranked, relevant, k),
        "precision": precision_at(ranked, relevant, k),
        "recall": recall_at(ranked, relevant, k),
        "recip_rank": reciprocal_rank(ranked, relevant, k),
        "hit": float(hit_at(ranked, relevant, k)),
    }
    if ranks is not None:
        out["pop_rank"] = mean_popularity_rank(ranked, ranks)
    return out


class MetricReport:
    """
    Per-user metric values with their aggregate means.

    Rows carry ``empty`` (the user had no relevant items); such users score 0
    on ranking metrics and count in aggregates unless ``exclude_empty``.
    """

    def __init__(self, rows: pd.DataFrame, exclude_empty: bool = False):
        if "empty" not in rows.columns:
            rows = rows.assign(empty=False)
        self.rows = rows
        self.exclude_empty = exclude_empty

    @classmethod
    def from_records(cls, records, exclude_empty: bool = False) -> MetricReport:
        return cls(pd.DataFrame.from_records(records, columns=USER_COLUMNS + ["empty"]), exclude_empty)

    @property
    def n_empty(self) -> int:
        return int(self.rows.loc[self.rows["empty"], ["algo", "strategy", "n_decoys", "user"]].drop_duplicates().shape[0])

    def per_user(self) -> pd.DataFrame:
        return _sorted(self.rows)[USER_COLUMNS].reset_index(drop=True)

    def aggregate(self) -> pd.DataFrame:
        rows = self.rows
        if self.exclude_empty:
            rows = rows[~rows["empty"] | (rows["metric"] == "pop_rank")]
        return aggregate_rows(rows)


def aggregate_rows(rows: pd.DataFrame) -> pd.DataFrame:
    """Mean and user count per (algo, strategy, n_decoys, metric), reduced in user order."""
    rows = _sorted(rows)
    keys = ["algo", "strategy", "n_decoys", "metric"]
    g = rows.groupby(keys, sort=True, dropna=False)["value"]
    out = pd.DataFrame({"mean": g.agg(lambda v: math.fsum(v) / len(v)), "n_users": g.size()})
    return out.reset_index()[AGGREGATE_COLUMNS]


def _sorted(rows: pd.DataFrame) -> pd.DataFrame:
    return rows.sort_values(["algo", "strategy", "n_decoys", "metric", "user"], kind="stable")
