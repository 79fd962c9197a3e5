import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decoylab.corpus import DataError, InteractionSet
from decoylab.splitting import (
    crossfold_users,
    external_test_split,
    holdout_size,
    load_plan,
    save_plan,
)

from .conftest import random_interactions


def grid(n_users, n_items):
    u = np.repeat(np.arange(n_users), n_items)
    i = np.tile(np.arange(n_items), n_users)
    return InteractionSet(u, i, np.ones(len(u)))


def pairs(data):
    return set(zip(data.user_index.values[data.user_codes].tolist(), data.item_index.values[data.item_codes].tolist()))


def check_plan(data, plan):
    all_pairs = pairs(data)
    seen = []
    for fold in plan.folds:
        tr, te = pairs(fold.train), pairs(fold.test)
        assert not (tr & te)
        assert tr | te == all_pairs
        for u in fold.test_users:
            assert len(fold.train.user_items(u)) >= 1
            assert len(fold.test.user_items(u)) >= 1
        assert {u for u, _ in te} <= set(fold.test_users.tolist())
        seen.extend(fold.test_users.tolist())
    assert len(seen) == len(set(seen))
    eligible = data.user_index[data.user_counts() >= plan.min_ratings]
    assert sorted(seen) == sorted(eligible.tolist())


def test_grid_split():
    data = grid(10, 10)
    plan = crossfold_users(data, 5, 0.2, seed=3)
    assert len(plan.folds) == 5
    for fold in plan.folds:
        assert len(fold.test_users) == 2
        for u in fold.test_users:
            assert len(fold.test.user_items(u)) == 2
            assert len(fold.train.user_items(u)) == 8
    check_plan(data, plan)


@pytest.mark.parametrize("n,k", [(3, 1), (10, 2), (15, 3), (5, 1), (2, 1), (11, 3)])
def test_holdout_ceil(n, k):
    assert holdout_size(n, 0.2) == k


def test_small_user_holdout():
    data = InteractionSet([1] * 3 + [2] * 5 + [3] * 5, [1, 2, 3, 1, 2, 3, 4, 5, 1, 2, 3, 4, 5])
    plan = crossfold_users(data, 2, 0.2, min_ratings=3, seed=1)
    for fold in plan.folds:
        if fold.is_test_user(1):
            assert len(fold.test.user_items(1)) == 1


def test_deterministic(tmp_path):
    data = random_interactions(np.random.default_rng(5), 40, 30, 0.4)
    a = crossfold_users(data, 5, 0.2, seed=11)
    b = crossfold_users(data, 5, 0.2, seed=11)
    save_plan(a, tmp_path / "a")
    save_plan(b, tmp_path / "b")
    for f in range(5):
        assert (tmp_path / "a" / f"fold{f}.csv").read_bytes() == (tmp_path / "b" / f"fold{f}.csv").read_bytes()


def test_seed_changes_partition():
    data = random_interactions(np.random.default_rng(5), 40, 30, 0.4)
    a = crossfold_users(data, 5, 0.2, seed=1)
    b = crossfold_users(data, 5, 0.2, seed=2)
    assert any(set(x.test_users) != set(y.test_users) for x, y in zip(a.folds, b.folds))
    check_plan(data, b)


def test_too_few_users():
    with pytest.raises(DataError):
        crossfold_users(grid(3, 10), 5)


@pytest.mark.parametrize("kw", [{"n_folds": 1}, {"test_fraction": 0}, {"test_fraction": 1}, {"min_ratings": 1}])
def test_bad_params(kw):
    with pytest.raises(ValueError):
        crossfold_users(grid(10, 10), **kw)


def test_save_load_roundtrip(tmp_path):
    data = random_interactions(np.random.default_rng(9), 30, 20, 0.5)
    plan = crossfold_users(data, 3, 0.25, seed=4)
    save_plan(plan, tmp_path)
    back = load_plan(tmp_path)
    for a, b in zip(plan.folds, back.folds):
        assert pairs(a.train) == pairs(b.train)
        assert pairs(a.test) == pairs(b.test)
        assert np.array_equal(a.test.values, b.test.values)
        assert list(a.test_users) == list(b.test_users)
    save_plan(back, tmp_path / "again")
    for f in range(3):
        assert (tmp_path / f"fold{f}.csv").read_bytes() == (tmp_path / "again" / f"fold{f}.csv").read_bytes()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.floats(0.05, 0.9))
def test_split_invariants(seed, folds, frac):
    rng = np.random.default_rng(seed)
    data = random_interactions(rng, int(rng.integers(12, 40)), int(rng.integers(5, 30)))
    try:
        plan = crossfold_users(data, folds, frac, min_ratings=2, seed=seed)
    except DataError:
        return
    check_plan(data, plan)


def test_external_split():
    train = InteractionSet([1, 1, 2, 2], [10, 11, 10, 12])
    test = InteractionSet([2, 3, 2], [13, 10, 10])
    fold = external_test_split(train, test)
    assert list(fold.test_users) == [2]
    assert fold.dropped_users == 1
    # (2, 10) is also a training pair, so it leaves the test side
    assert pairs(fold.test) == {(2, 13)}
    assert 13 in fold.items


def test_external_disjoint_users():
    with pytest.raises(DataError):
        external_test_split(InteractionSet([1], [1]), InteractionSet([2], [1]))
