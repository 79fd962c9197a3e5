"""Input checks shared by the estimators and builders."""

from __future__ import annotations

import numpy as np

from .corpus import DataError, InteractionSet


def check_interactions(data, *, allow_empty: bool = False) -> InteractionSet:
    if not isinstance(data, InteractionSet):
        raise TypeError(f"expected InteractionSet, got {type(data).__name__}")
    if not allow_empty and len(data) == 0:
        raise DataError("interaction data is empty")
    return data


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise TypeError(f"{name} must be an integer")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_item_codes(codes, n_items: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    if codes.ndim != 1:
        raise ValueError("candidate codes must be one-dimensional")
    if len(codes) and (codes.min() < 0 or codes.max() >= n_items):
        raise KeyError("candidate item not in the model's item index")
    return codes
