"""
User-partitioned train/test splits.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import pandas as pd

from . import _rng
from .corpus import DataError, InteractionSet

_log = logging.getLogger(__name__)

FOLD_COLUMNS = ["fold", "user", "item", "value", "part"]


@dataclass(frozen=True, eq=False)
class Fold:
    """
    One train/test partition.  ``train`` and ``test`` share the same user and
    item indices.
    """

    train: InteractionSet
    test: InteractionSet
    test_users: np.ndarray
    fold_id: int = 0
    dropped_users: int = 0

    @property
    def items(self) -> pd.Index:
        return self.train.item_index

    @cached_property
    def _test_user_set(self) -> frozenset:
        return frozenset(self.test_users.tolist())

    def is_test_user(self, user) -> bool:
        return user in self._test_user_set


@dataclass(frozen=True, eq=False)
class SplitPlan:
    folds: list[Fold]
    seed: int
    n_folds: int
    test_fraction: float
    min_ratings: int = 5
    meta: dict = field(default_factory=dict)


def holdout_size(n: int, fraction: float) -> int:
    """Number of a user's ``n`` interactions held out: ``ceil(fraction * n)``, leaving at least one."""
    # round first so 0.2 * 15 counts as 3, not 3.0000000000000004
    k = math.ceil(round(fraction * n, 9))
    return max(1, min(k, n - 1))


def holdout_mask(data: InteractionSet, test_codes, fraction: float, seed: int, *keys) -> np.ndarray:
    """Boolean mask over ``data`` selecting the held-out interactions of the given users."""
    mask = np.zeros(len(data), bool)
    indptr = data.matrix().indptr
    for uc in test_codes:
        lo, hi = indptr[uc], indptr[uc + 1]
        n = hi - lo
        k = holdout_size(n, fraction)
        rng = _rng.stream(_rng.SPLIT, seed, *keys, data.user_index[uc])
        picked = rng.choice(n, size=k, replace=False)
        mask[lo + picked] = True
    return mask


def crossfold_users(
    data: InteractionSet,
    n_folds: int = 5,
    test_fraction: float = 0.2,
    min_ratings: int = 5,
    seed: int = 42,
) -> SplitPlan:
    """
    Partition eligible users into ``n_folds`` test-user groups and hold out a
    fraction of each test user's interactions.

    Users with at least ``min_ratings`` interactions are eligible.  Within a
    fold, each test user contributes ``ceil(test_fraction * n_u)`` randomly
    chosen interactions to the test set; everything else is training data.

    Raises:
        DataError: fewer eligible users than folds.
        ValueError: invalid parameters.
    """
    if n_folds < 2:
        raise ValueError("n_folds must be at least 2")
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    if min_ratings < 2:
        raise ValueError("min_ratings must be at least 2")

    counts = data.user_counts()
    eligible = np.flatnonzero(counts >= min_ratings)
    if len(eligible) < n_folds:
        raise DataError(f"{len(eligible)} eligible users is fewer than {n_folds} folds")

    perm = _rng.stream(_rng.SPLIT, seed).permutation(eligible)
    folds = []
    for fid, group in enumerate(np.array_split(perm, n_folds)):
        group = np.sort(group)
        mask = holdout_mask(data, group, test_fraction, seed)
        folds.append(
            Fold(
                train=data.select(~mask),
                test=data.select(mask),
                test_users=data.user_index.values[group],
                fold_id=fid,
            )
        )
        _log.debug("fold %d: %d test users, %d test interactions", fid, len(group), mask.sum())

    return SplitPlan(folds, seed, n_folds, test_fraction, min_ratings)


def external_test_split(train_data: InteractionSet, test_data: InteractionSet) -> Fold:
    """
    Pair a training set with an externally collected test set (e.g. Yahoo! R3
    random-exposure ratings).

    Test users without training data are dropped and counted in
    ``Fold.dropped_users``.  Test pairs also present in training are dropped
    from the test side so the two sets stay disjoint.

    Raises:
        DataError: no test user has training data.
    """
    train_users = train_data.user_index[train_data.user_counts() > 0]
    test_users = test_data.user_index[test_data.user_counts() > 0]
    keep = test_users.intersection(train_users, sort=False).sort_values()
    if len(keep) == 0:
        raise DataError("no test user appears in the training data")
    dropped = len(test_users) - len(keep)

    users = train_data.user_index.union(test_data.user_index)
    items = train_data.item_index.union(test_data.item_index)
    tf = train_data.to_frame()
    sf = test_data.to_frame()
    sf = sf[sf["user"].isin(keep)]
    overlap = sf.merge(tf[["user", "item"]], on=["user", "item"], how="left", indicator=True)
    sf = sf[(overlap["_merge"] == "left_only").to_numpy()]
    if dropped:
        _log.info("dropped %d test users without training data", dropped)

    train = InteractionSet.from_frame(tf, user_index=users, item_index=items)
    test = InteractionSet.from_frame(sf, user_index=users, item_index=items)
    return Fold(train, test, keep.to_numpy(), fold_id=0, dropped_users=dropped)


def save_plan(plan: SplitPlan, directory: str | Path) -> list[Path]:
    """Write one CSV per fold (``fold,user,item,value,part``) plus ``plan.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for fold in plan.folds:
        parts = []
        for name, part in (("train", fold.train), ("test", fold.test)):
            f = part.to_frame()
            if "value" not in f.columns:
                f["value"] = np.nan
            f.insert(0, "fold", fold.fold_id)
            f["part"] = name
            parts.append(f[FOLD_COLUMNS])
        path = directory / f"fold{fold.fold_id}.csv"
        pd.concat(parts).to_csv(path, index=False, lineterminator="\n")
        paths.append(path)
    meta = {
        "seed": plan.seed,
        "n_folds": plan.n_folds,
        "test_fraction": plan.test_fraction,
        "min_ratings": plan.min_ratings,
        "test_users": {str(f.fold_id): [_jsonable(u) for u in f.test_users] for f in plan.folds},
    }
    (directory / "plan.json").write_text(json.dumps(meta, indent=2) + "\n")
    return paths


def load_plan(directory: str | Path) -> SplitPlan:
    directory = Path(directory)
    meta = json.loads((directory / "plan.json").read_text())
    folds = []
    for fid in range(meta["n_folds"]):
        f = pd.read_csv(directory / f"fold{fid}.csv")
        # a fold file holds every interaction, so it carries the full indices
        users = pd.Index(np.unique(f["user"].to_numpy()), name="user")
        items = pd.Index(np.unique(f["item"].to_numpy()), name="item")
        cols = ["user", "item", "value"]
        train = InteractionSet.from_frame(f.loc[f["part"] == "train", cols], user_index=users, item_index=items)
        test = InteractionSet.from_frame(f.loc[f["part"] == "test", cols], user_index=users, item_index=items)
        tu = np.asarray(meta["test_users"][str(fid)], dtype=users.dtype)
        folds.append(Fold(train, test, tu, fold_id=fid))
    return SplitPlan(folds, meta["seed"], meta["n_folds"], meta["test_fraction"], meta["min_ratings"])


def _jsonable(x):
    return x.item() if isinstance(x, np.generic) else x
