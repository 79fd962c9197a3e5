"""
Per-user candidate sets: the test items plus decoys, chosen by one of three
strategies (all non-training items, uniform sample, popularity-weighted sample).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from . import _rng
from .splitting import Fold

FULL = "full"
UNIFORM = "uniform"
POPULAR = "popularity-weighted"
STRATEGY_KINDS = (FULL, UNIFORM, POPULAR)

#: pseudo-weight for never-rated items under popularity weighting
ZERO_COUNT_WEIGHT = 0.1

DEFAULT_SIZES = (10, 20, 50, 100, 200, 500, 1000, 2000)


@dataclass(frozen=True)
class CandidateStrategy:
    kind: str
    n_decoys: int | None = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown candidate strategy {self.kind!r}")
        if self.kind != FULL:
            if self.n_decoys is None:
                raise ValueError(f"{self.kind} strategy needs n_decoys")
            if self.n_decoys < 0:
                raise ValueError("n_decoys must be non-negative")
        elif self.n_decoys is not None:
            object.__setattr__(self, "n_decoys", None)

    @property
    def label(self) -> str:
        return self.kind if self.kind == FULL else f"{self.kind}-{self.n_decoys}"

    def build(self, user, fold: Fold, seed: int = 0, counts: np.ndarray | None = None) -> CandidateSet:
        if self.kind == FULL:
            return build_full(user, fold)
        elif self.kind == UNIFORM:
            return build_uniform(user, fold, self.n_decoys, seed)
        else:
            return build_popularity_weighted(user, fold, self.n_decoys, seed, counts=counts)


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """
    Items to rank for one user: ``test_codes`` and ``decoy_codes`` index into
    ``item_index``.  ``requested`` is the asked-for decoy count (``None`` for
    the full strategy); ``len(decoy_codes)`` is smaller when the pool ran out.
    """

    user: Any
    test_codes: np.ndarray
    decoy_codes: np.ndarray
    item_index: Any = field(repr=False)
    strategy: str = FULL
    requested: int | None = None

    @property
    def codes(self) -> np.ndarray:
        return np.concatenate([self.test_codes, self.decoy_codes])

    @property
    def items(self) -> np.ndarray:
        return self.item_index.values[self.codes]

    @property
    def test_items(self) -> np.ndarray:
        return self.item_index.values[self.test_codes]

    @property
    def decoys(self) -> np.ndarray:
        return self.item_index.values[self.decoy_codes]

    @property
    def clamped(self) -> bool:
        return self.requested is not None and len(self.decoy_codes) < self.requested

    def __len__(self) -> int:
        return len(self.test_codes) + len(self.decoy_codes)


def _user_parts(user, fold: Fold) -> tuple[np.ndarray, np.ndarray]:
    if not fold.is_test_user(user):
        raise KeyError(f"user {user!r} is not a test user of fold {fold.fold_id}")
    ucode = fold.train.user_code(user)
    return fold.train.user_item_codes(ucode), fold.test.user_item_codes(ucode)


def decoy_pool(user, fold: Fold) -> tuple[np.ndarray, np.ndarray]:
    """The user's test item codes and the sorted codes of items eligible as decoys."""
    train, test = _user_parts(user, fold)
    excluded = np.zeros(fold.train.n_items, bool)
    excluded[train] = True
    excluded[test] = True
    return test, np.flatnonzero(~excluded)


def build_full(user, fold: Fold) -> CandidateSet:
    """Every item the user did not train on."""
    test, pool = decoy_pool(user, fold)
    return CandidateSet(user, test, pool, fold.items, FULL)


def build_uniform(user, fold: Fold, n_decoys: int, seed: int = 0) -> CandidateSet:
    """Test items plus up to ``n_decoys`` decoys drawn uniformly without replacement."""
    if n_decoys < 0:
        raise ValueError("n_decoys must be non-negative")
    test, pool = decoy_pool(user, fold)
    rng = _rng.stream(_rng.UNIFORM_DECOYS, seed, fold.fold_id, user)
    n = min(n_decoys, len(pool))
    picked = np.sort(rng.choice(len(pool), size=n, replace=False))
    return CandidateSet(user, test, pool[picked], fold.items, UNIFORM, n_decoys)


def build_popularity_weighted(
    user,
    fold: Fold,
    n_decoys: int,
    seed: int = 0,
    *,
    counts: np.ndarray | None = None,
) -> CandidateSet:
    """
    Test items plus up to ``n_decoys`` decoys drawn without replacement with
    probability proportional to training interaction count.

    Args:
        counts:
            Per-item weights; defaults to the fold's training counts.  Zero
            counts are replaced with :data:`ZERO_COUNT_WEIGHT`.
    """
    if n_decoys < 0:
        raise ValueError("n_decoys must be non-negative")
    test, pool = decoy_pool(user, fold)
    if counts is None:
        counts = fold.train.item_counts()
    weights = np.asarray(counts, dtype=np.float64)[pool]
    weights = np.where(weights > 0, weights, ZERO_COUNT_WEIGHT)
    rng = _rng.stream(_rng.POPULAR_DECOYS, seed, fold.fold_id, user)
    picked = np.sort(weighted_sample(weights, n_decoys, rng))
    return CandidateSet(user, test, pool[picked], fold.items, POPULAR, n_decoys)


def weighted_sample(weights, n: int, rng: np.random.Generator) -> np.ndarray:
    """
    Sample ``n`` positions without replacement, weighted by ``weights``.

    Uses exponential keys: each position gets ``log(u) / w`` for uniform
    ``u``, and the ``n`` largest keys win.  The first pick is distributed
    exactly as ``w / sum(w)``.  Returns positions in selection order.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights <= 0):
        raise ValueError("weights must be positive")
    m = len(weights)
    if n >= m:
        # still draw, so the stream position does not depend on exhaustion
        rng.random(m)
        return np.arange(m)
    if n <= 0:
        return np.zeros(0, np.int64)
    # 1 - random() lies in (0, 1], so the log is finite
    keys = np.log1p(-rng.random(m)) / weights
    top = np.argpartition(-keys, n - 1)[:n]
    return top[np.argsort(-keys[top], kind="stable")]


def sweep_sizes(kinds: Iterable[str], sizes: Iterable[int] = DEFAULT_SIZES) -> list[CandidateStrategy]:
    """
    Strategies for a decoy-size sweep: every sampled kind at every size, then
    one full strategy (included whether or not ``full`` is listed).
    """
    kinds = list(kinds)
    sizes = list(sizes)
    sampled = [k for k in STRATEGY_KINDS if k != FULL and k in kinds]
    unknown = set(kinds) - set(STRATEGY_KINDS)
    if unknown:
        raise ValueError(f"unknown strategy kinds: {sorted(unknown)}")
    if sampled and not sizes:
        raise ValueError("sampled strategies need at least one decoy size")
    out = [CandidateStrategy(k, n) for k in sampled for n in sizes]
    out.append(CandidateStrategy(FULL))
    return out


def write_candidates(sets: Iterable[CandidateSet], path: str | Path, fold_id: int = 0):
    """Dump candidate sets as ``fold,user,item,role`` rows."""
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["fold", "user", "item", "role"])
        for cs in sets:
            for item in cs.test_items:
                w.writerow([fold_id, cs.user, item, "test"])
            for item in cs.decoys:
                w.writerow([fold_id, cs.user, item, "decoy"])
