"""
Synthetic preference data from an LDA-style generative model, and a
popularity-biased observation process over it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import _rng
from .candidates import weighted_sample
from .corpus import DatasetSummary, InteractionSet, summarize

_log = logging.getLogger(__name__)

LATENT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class LdaParams:
    """
    Parameters of the preference generator.

    ``alpha`` and ``beta`` are symmetric concentrations when scalar, or full
    vectors (length ``n_features`` and ``n_items`` respectively).
    """

    n_features: int = 50
    alpha: float | tuple = 0.1
    beta: float | tuple = 0.05
    lam: float = 165.0
    n_users: int = 6040
    n_items: int = 3706
    seed: int = 0

    def __post_init__(self):
        if self.n_features < 1:
            raise ValueError("n_features must be >= 1")
        if self.n_items < 2:
            raise ValueError("n_items must be >= 2")
        if self.n_users < 1:
            raise ValueError("n_users must be >= 1")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if np.any(self.alpha_vector() <= 0) or np.any(self.beta_vector() <= 0):
            raise ValueError("Dirichlet concentrations must be positive")

    def alpha_vector(self) -> np.ndarray:
        return _concentration(self.alpha, self.n_features, "alpha")

    def beta_vector(self) -> np.ndarray:
        return _concentration(self.beta, self.n_items, "beta")


def _concentration(value, n: int, name: str) -> np.ndarray:
    v = np.asarray(value, dtype=np.float64)
    if v.ndim == 0:
        return np.full(n, float(v))
    if v.shape != (n,):
        raise ValueError(f"{name} must be a scalar or a vector of length {n}")
    return v


@dataclass(frozen=True, eq=False)
class TruePreferences:
    """
    Complete implicit preferences with the latent state that produced them.

    Attributes:
        pairs: deduplicated liked (user, item) pairs over users ``0..n-1`` and
            items ``0..m-1``.
        theta: user feature mixtures, ``n_users x n_features``.
        phi: feature item distributions, ``n_features x n_items``.
        n_drawn: per-user item draws before deduplication.
    """

    pairs: InteractionSet
    theta: np.ndarray
    phi: np.ndarray
    n_drawn: np.ndarray
    params: LdaParams = field(default_factory=LdaParams)

    def liked_codes(self, ucode: int) -> np.ndarray:
        return self.pairs.user_item_codes(ucode)


def generate_preferences(params: LdaParams) -> TruePreferences:
    """
    Draw complete preferences.

    Feature-item distributions come from the stream for ``params.seed``;
    each user's mixture, item count and items come from a stream keyed by
    (seed, user), so users are independent of generation order.
    """
    n_items, n_feat = params.n_items, params.n_features
    phi = _rng.stream(_rng.LDA_ITEMS, params.seed).dirichlet(params.beta_vector(), size=n_feat)
    cdf = np.cumsum(phi, axis=1)
    cdf[:, -1] = 1.0
    alpha = params.alpha_vector()

    theta = np.empty((params.n_users, n_feat))
    n_drawn = np.empty(params.n_users, np.int64)
    users, items = [], []
    for u in range(params.n_users):
        rng = _rng.stream(_rng.LDA_USER, params.seed, u)
        theta[u] = rng.dirichlet(alpha)
        n = int(rng.poisson(params.lam))
        n_drawn[u] = n
        if n == 0:
            continue
        tcdf = np.cumsum(theta[u])
        tcdf[-1] = 1.0
        feats = np.minimum(np.searchsorted(tcdf, rng.random(n), side="right"), n_feat - 1)
        draws = rng.random(n)
        picked = np.empty(n, np.int64)
        for k in np.unique(feats):
            sel = feats == k
            picked[sel] = np.searchsorted(cdf[k], draws[sel], side="right")
        liked = np.unique(np.minimum(picked, n_items - 1))
        users.append(np.full(len(liked), u))
        items.append(liked)

    users = np.concatenate(users) if users else np.zeros(0, np.int64)
    items = np.concatenate(items) if items else np.zeros(0, np.int64)
    pairs = InteractionSet(
        users,
        items,
        user_index=pd.RangeIndex(params.n_users, name="user"),
        item_index=pd.RangeIndex(n_items, name="item"),
    )
    _log.info("generated %d true preferences for %d users", len(pairs), params.n_users)
    return TruePreferences(pairs, theta, phi, n_drawn, params)


def observation_size(n: int, fraction: float) -> int:
    """``round(fraction * n)`` with halves rounded up."""
    return min(n, int(math.floor(fraction * n + 0.5)))


def observe_popularity(
    truth: TruePreferences, observe_fraction: float = 0.2, gamma: float = 1.0, seed: int = 0
) -> InteractionSet:
    """
    Observe part of each user's true preferences, favoring popular items.

    Each user's ``round(observe_fraction * n)`` observed items are sampled
    without replacement from their liked items, weighted by
    ``true_popularity ** gamma``; ``gamma = 0`` is uniform observation.  The
    result keeps the truth's user and item indices.
    """
    if not 0 < observe_fraction <= 1:
        raise ValueError("observe_fraction must be in (0, 1]")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    pairs = truth.pairs
    if observe_fraction == 1:
        return pairs
    weights = pairs.item_counts().astype(np.float64) ** gamma
    indptr = pairs.matrix().indptr
    mask = np.zeros(len(pairs), bool)
    for uc in range(pairs.n_users):
        lo, hi = indptr[uc], indptr[uc + 1]
        m = observation_size(hi - lo, observe_fraction)
        if m == 0:
            continue
        rng = _rng.stream(_rng.OBSERVE, seed, pairs.user_index[uc])
        picked = weighted_sample(weights[pairs.item_codes[lo:hi]], m, rng)
        mask[lo + picked] = True
    return pairs.select(mask)


def fit_diagnostics(observed: InteractionSet, target: DatasetSummary) -> pd.DataFrame:
    """
    Compare generated data with a target dataset's summary: Gini index,
    density, and mean interactions per user.  Reports only; tunes nothing.
    """
    mine = summarize(observed)
    rows = [
        ("gini", mine.gini, target.gini),
        ("density", mine.density, target.density),
        ("mean_user_activity", mine.n_ratings / mine.n_users, target.n_ratings / target.n_users),
    ]
    df = pd.DataFrame(rows, columns=["statistic", "generated", "target"])
    df["delta"] = df["generated"] - df["target"]
    return df


def write_pairs(data: InteractionSet, path: str | Path):
    """Write implicit pairs as a headerless ``user,item`` CSV (the ``implicit`` format)."""
    data.to_frame()[["user", "item"]].to_csv(path, index=False, header=False, lineterminator="\n")


def save_latent(truth: TruePreferences, path: str | Path):
    np.savez(
        path,
        format_version=np.array([LATENT_FORMAT_VERSION]),
        theta=truth.theta,
        phi=truth.phi,
        n_drawn=truth.n_drawn,
    )


def load_latent(path: str | Path) -> dict[str, np.ndarray]:
    with np.load(path) as z:
        version = int(z["format_version"][0])
        if version != LATENT_FORMAT_VERSION:
            raise ValueError(f"unsupported latent-state format version {version}")
        return {k: z[k] for k in ("theta", "phi", "n_drawn")}
