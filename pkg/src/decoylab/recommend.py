"""
Top-N recommenders: Popular, Random, Oracle, item and user k-NN, and
implicit-feedback ALS matrix factorization.

Every recommender is a scikit-learn style estimator: hyper-parameters are
constructor arguments (so :func:`sklearn.base.clone` and ``get_params`` work),
learned state lives in attributes ending in ``_``, and :meth:`Recommender.fit`
returns the estimator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd
import scipy.sparse as sps
from numba import njit, prange
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _rng
from .corpus import InteractionSet
from .validation import check_interactions, check_item_codes, check_positive_int

_log = logging.getLogger(__name__)

KINDS = ("item-knn", "user-knn", "implicit-mf", "popular", "random", "oracle")
VALID_MODES = {
    "item-knn": ("explicit", "implicit"),
    "user-knn": ("explicit",),
    "implicit-mf": ("implicit",),
    "popular": (None,),
    "random": (None,),
    "oracle": (None,),
}


class ColdStartError(KeyError):
    """The user has no training data, so a personalized model cannot score for them."""


@dataclass(frozen=True, eq=False)
class RankedList:
    """Items recommended to one user, best first."""

    user: Any
    items: np.ndarray
    scores: np.ndarray
    codes: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.items)

    def head(self, n: int) -> RankedList:
        return RankedList(
            self.user, self.items[:n], self.scores[:n], None if self.codes is None else self.codes[:n]
        )


class Recommender(BaseEstimator):
    """
    Base class for recommenders.

    Subclasses implement :meth:`_fit` and :meth:`_score_codes`.  Candidates
    are scored by dense item code within ``item_index_``.
    """

    #: whether scoring requires the user to have training data
    personalized = True

    def fit(self, data: InteractionSet, truth=None):
        check_interactions(data)
        self.item_index_ = data.item_index
        self.user_index_ = data.user_index
        self.known_users_ = data.user_counts() > 0
        self._fit(data, truth)
        return self

    def _fit(self, data: InteractionSet, truth):  # pragma: no cover
        raise NotImplementedError

    def _score_codes(self, ucode: int, user, icodes: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def _user_code(self, user) -> int:
        code = int(self.user_index_.get_indexer([user])[0])
        if self.personalized and (code < 0 or not self.known_users_[code]):
            raise ColdStartError(user)
        return code

    def score_codes(self, user, icodes=None) -> np.ndarray:
        """
        Scores for item codes (all items if ``icodes`` is ``None``).  Items
        the model cannot score get ``-inf``.

        Raises:
            ColdStartError: a personalized model was asked about an unknown user.
        """
        check_is_fitted(self)
        if icodes is None:
            icodes = np.arange(len(self.item_index_))
        icodes = check_item_codes(icodes, len(self.item_index_))
        return self._score_codes(self._user_code(user), user, icodes)

    def score(self, user, items) -> pd.Series:
        """Scores for item identifiers; unknown items get ``-inf``."""
        codes = self.item_index_.get_indexer(items)
        out = np.full(len(codes), -np.inf)
        ok = codes >= 0
        out[ok] = self.score_codes(user, codes[ok])
        return pd.Series(out, index=items)

    def rank(self, user, icodes, scores=None, n: int | None = None) -> RankedList:
        """
        Rank item codes by descending score, ties by ascending index position.

        ``scores`` may be a precomputed full-catalog score vector for ``user``.
        """
        icodes = np.asarray(icodes, dtype=np.int64)
        if scores is None:
            s = self.score_codes(user, icodes)
        else:
            s = np.asarray(scores)[icodes]
        order = np.lexsort((icodes, -s))
        if n is not None:
            order = order[:n]
        codes = icodes[order]
        return RankedList(user, self.item_index_.values[codes], s[order], codes)


class Popular(Recommender):
    """Scores items by their training interaction count."""

    personalized = False

    def _fit(self, data, truth):
        self.item_counts_ = data.item_counts().astype(np.float64)

    def _score_codes(self, ucode, user, icodes):
        return self.item_counts_[icodes]


class Random(Recommender):
    """
    Random scores, fixed per (seed, user) so a user sees the same relative
    order of any two items whatever candidate set they appear in.
    """

    personalized = False

    def __init__(self, seed: int = 0):
        self.seed = seed

    def _fit(self, data, truth):
        self.n_items_ = data.n_items

    def _score_codes(self, ucode, user, icodes):
        scores = _rng.stream(_rng.RANDOM_SCORES, self.seed, user).random(self.n_items_)
        return scores[icodes]


class Oracle(Recommender):
    """
    Ranks a user's truly liked items first, using complete preference data.

    ``truth`` passed to :meth:`fit` is a
    :class:`~decoylab.simulate.TruePreferences` or a bare
    :class:`InteractionSet` of liked pairs.
    """

    personalized = False

    def _fit(self, data, truth):
        if truth is None:
            raise ValueError("Oracle requires true preference data")
        pairs = getattr(truth, "pairs", truth)
        ucodes = data.user_index.get_indexer(pairs.user_index.values[pairs.user_codes])
        icodes = data.item_index.get_indexer(pairs.item_index.values[pairs.item_codes])
        ok = (ucodes >= 0) & (icodes >= 0)
        self.liked_ = sps.csr_matrix(
            (np.ones(ok.sum()), (ucodes[ok], icodes[ok])), shape=(data.n_users, data.n_items)
        )

    def _user_code(self, user):
        code = int(self.user_index_.get_indexer([user])[0])
        if code < 0:
            raise ColdStartError(user)
        return code

    def _score_codes(self, ucode, user, icodes):
        row = np.zeros(self.liked_.shape[1])
        lo, hi = self.liked_.indptr[ucode], self.liked_.indptr[ucode + 1]
        row[self.liked_.indices[lo:hi]] = 1.0
        return row[icodes]


def _topk_mask(block: np.ndarray, k: int) -> np.ndarray:
    """Zero all but the ``k`` largest entries of each column."""
    if block.shape[0] <= k:
        return block
    top = np.argpartition(-block, k - 1, axis=0)[:k]
    out = np.zeros_like(block)
    np.put_along_axis(out, top, np.take_along_axis(block, top, axis=0), axis=0)
    return out


class ItemKNN(Recommender):
    """
    Item-item nearest-neighbor collaborative filtering.

    Similarities are cosine between item rating vectors, mean-centered by
    item in explicit mode.  Only positive similarities are kept.  To score an
    item for a user, the ``k`` most similar items the user has rated are its
    neighbors; fewer than ``min_nbrs`` neighbors makes the item unscorable.

    In explicit mode the score is the item mean plus the similarity-weighted
    average of the user's centered ratings on the neighbors; in implicit mode
    it is the sum of neighbor similarities.
    """

    def __init__(self, k: int = 20, min_nbrs: int = 1, min_sim: float = 0.0, feedback: str = "explicit"):
        self.k = k
        self.min_nbrs = min_nbrs
        self.min_sim = min_sim
        self.feedback = feedback

    def _fit(self, data, truth):
        check_positive_int(self.k, "k")
        if self.feedback not in VALID_MODES["item-knn"]:
            raise ValueError(f"unknown feedback mode {self.feedback!r}")
        m = data.matrix().tocsc(copy=True)
        m.sort_indices()
        if self.feedback == "explicit" and data.is_explicit:
            counts = np.diff(m.indptr)
            sums = np.asarray(m.sum(axis=0)).ravel()
            means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
            m.data = m.data - np.repeat(means, counts)
            self.item_means_ = means
        else:
            m.data = np.ones_like(m.data)
            self.item_means_ = None
        norms = np.sqrt(np.asarray(m.multiply(m).sum(axis=0)).ravel())
        inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        m = m @ sps.diags(inv)
        sim = (m.T @ m).tocsr()
        sim.setdiag(0)
        sim.data[sim.data <= self.min_sim] = 0
        sim.eliminate_zeros()
        sim.sort_indices()
        self.sim_ = sim
        # keeps every rated item, including ratings equal to the item mean
        rows = data.matrix().copy()
        if self.item_means_ is not None:
            rows.data = rows.data - self.item_means_[rows.indices]
        self.user_rows_ = rows
        _log.info("item-knn: %d items, %d positive similarities", data.n_items, sim.nnz)

    def _score_codes(self, ucode, user, icodes):
        rows = self.user_rows_
        lo, hi = rows.indptr[ucode], rows.indptr[ucode + 1]
        rated = rows.indices[lo:hi]
        vals = rows.data[lo:hi]
        block = self.sim_[rated][:, icodes].toarray()
        block = _topk_mask(block, self.k)
        nbrs = (block > 0).sum(axis=0)
        wsum = block.sum(axis=0)
        if self.item_means_ is not None:
            num = vals @ block
            scores = self.item_means_[icodes] + np.divide(num, wsum, out=np.zeros_like(num), where=wsum > 0)
        else:
            scores = wsum
        return np.where(nbrs >= self.min_nbrs, scores, -np.inf)


class UserKNN(Recommender):
    """
    User-user nearest-neighbor collaborative filtering on explicit ratings.

    Similarity is cosine between users' mean-centered rating vectors; the
    ``k`` most similar positively-correlated users who rated an item are its
    neighbors, and the score is the user's mean plus their similarity-weighted
    average centered rating.
    """

    def __init__(self, k: int = 30, min_nbrs: int = 1, min_sim: float = 0.0):
        self.k = k
        self.min_nbrs = min_nbrs
        self.min_sim = min_sim

    def _fit(self, data, truth):
        check_positive_int(self.k, "k")
        m = data.matrix().astype(np.float64, copy=True)
        counts = np.diff(m.indptr)
        sums = np.asarray(m.sum(axis=1)).ravel()
        means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
        m.data = m.data - np.repeat(means, counts)
        norms = np.sqrt(np.asarray(m.multiply(m).sum(axis=1)).ravel())
        inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        self.user_means_ = means
        self.centered_ = m
        self.normed_ = (sps.diags(inv) @ m).tocsr()
        self.rated_ = data.matrix().copy()
        self.rated_.data = np.ones_like(self.rated_.data)

    def _score_codes(self, ucode, user, icodes):
        sims = (self.normed_ @ self.normed_[ucode].T).toarray().ravel()
        sims[ucode] = 0
        peers = np.flatnonzero(sims > self.min_sim)
        if len(peers) == 0:
            return np.full(len(icodes), -np.inf)
        rated = self.rated_[peers][:, icodes].toarray()
        weights = _topk_mask(rated * sims[peers, None], self.k)
        nbrs = (weights > 0).sum(axis=0)
        wsum = weights.sum(axis=0)
        num = (weights * self.centered_[peers][:, icodes].toarray()).sum(axis=0)
        avg = np.divide(num, wsum, out=np.zeros_like(num), where=wsum > 0)
        return np.where(nbrs >= self.min_nbrs, self.user_means_[ucode] + avg, -np.inf)


@njit(parallel=True, cache=True)
def _als_half(indptr, indices, other, reg, weight, out):
    nf = other.shape[1]
    gram = other.T @ other
    for r in prange(len(indptr) - 1):
        a = gram.copy()
        b = np.zeros(nf)
        for j in range(indptr[r], indptr[r + 1]):
            y = other[indices[j]]
            for p in range(nf):
                b[p] += (1.0 + weight) * y[p]
                for q in range(nf):
                    a[p, q] += weight * y[p] * y[q]
        for p in range(nf):
            a[p, p] += reg
        out[r] = np.linalg.solve(a, b)


class ImplicitMF(Recommender):
    """
    Implicit-feedback matrix factorization trained by alternating least squares.

    Minimizes the confidence-weighted squared error over all user-item pairs,
    with preference 1 for observed pairs (confidence ``1 + weight``) and 0
    otherwise (confidence 1), plus L2 regularization on both factor matrices.
    Each half-step solves its block exactly, so the objective never
    increases; the value after every half-step is kept in ``loss_history_``.
    """

    def __init__(
        self,
        features: int = 50,
        iterations: int = 20,
        reg: float = 0.1,
        weight: float = 40.0,
        seed: int = 0,
    ):
        self.features = features
        self.iterations = iterations
        self.reg = reg
        self.weight = weight
        self.seed = seed

    def _fit(self, data, truth):
        check_positive_int(self.features, "features")
        check_positive_int(self.iterations, "iterations", 0)
        ui = data.matrix()
        iu = ui.T.tocsr()
        iu.sort_indices()
        rng = _rng.stream(_rng.ALS_INIT, self.seed)
        items = rng.standard_normal((data.n_items, self.features)) * 0.1
        users = np.zeros((data.n_users, self.features))
        history = []
        for it in range(self.iterations):
            _als_half(ui.indptr, ui.indices, items, float(self.reg), float(self.weight), users)
            history.append(self._objective(ui, users, items))
            _als_half(iu.indptr, iu.indices, users, float(self.reg), float(self.weight), items)
            history.append(self._objective(ui, users, items))
            _log.debug("implicit-mf iteration %d: objective %.4f", it, history[-1])
        self.user_features_ = users
        self.item_features_ = items
        self.loss_history_ = np.array(history)

    def _objective(self, ui, users, items) -> float:
        # sum over all pairs of s^2, corrected on observed pairs to c (1 - s)^2
        total = float(np.sum((users.T @ users) * (items.T @ items)))
        rows = np.repeat(np.arange(ui.shape[0]), np.diff(ui.indptr))
        s = np.einsum("ij,ij->i", users[rows], items[ui.indices])
        total += float(np.sum((1.0 + self.weight) * (1.0 - s) ** 2 - s**2))
        total += self.reg * (float(np.sum(users**2)) + float(np.sum(items**2)))
        return total

    def objective(self, data: InteractionSet) -> float:
        """Training objective of the fitted factors on ``data``."""
        check_is_fitted(self)
        return self._objective(data.matrix(), self.user_features_, self.item_features_)

    def _score_codes(self, ucode, user, icodes):
        return self.item_features_[icodes] @ self.user_features_[ucode]


@dataclass(frozen=True)
class RecommenderSpec:
    """
    Declarative description of a recommender.

    ``mode`` is ``explicit`` or ``implicit`` for the k-NN and MF kinds and
    ``None`` for the non-personalized kinds.  ``name`` labels results and
    defaults to the kind.
    """

    kind: str
    mode: str | None = None
    hyperparams: dict = field(default_factory=dict)
    seed: int = 0
    name: str | None = None

    def __post_init__(self):
        if self.kind not in VALID_MODES:
            raise ValueError(f"unknown recommender kind {self.kind!r}")
        if self.mode is None and None not in VALID_MODES[self.kind]:
            object.__setattr__(self, "mode", VALID_MODES[self.kind][0])
        if self.mode not in VALID_MODES[self.kind]:
            raise ValueError(f"{self.kind} does not support mode {self.mode!r}")

    @property
    def label(self) -> str:
        return self.name or self.kind


def make_recommender(spec: RecommenderSpec) -> Recommender:
    hp = dict(spec.hyperparams)
    match spec.kind:
        case "popular":
            return Popular()
        case "random":
            return Random(seed=spec.seed)
        case "oracle":
            return Oracle()
        case "item-knn":
            return ItemKNN(feedback=spec.mode, **hp)
        case "user-knn":
            return UserKNN(**hp)
        case "implicit-mf":
            hp.setdefault("seed", spec.seed)
            return ImplicitMF(**hp)


def train(spec: RecommenderSpec, train_data: InteractionSet, truth=None) -> Recommender:
    """Build and fit the recommender described by ``spec``."""
    model = make_recommender(spec)
    model.fit(train_data, truth)
    model.spec_ = spec
    return model


def _candidate_codes(model: Recommender, candidates) -> np.ndarray:
    if hasattr(candidates, "codes"):
        codes = candidates.codes
    else:
        codes = model.item_index_.get_indexer(list(candidates))
        if np.any(codes < 0):
            raise KeyError("candidate item not in the model's item index")
    if len(codes) == 0:
        raise ValueError("candidate set is empty")
    return codes


def score_candidates(model: Recommender, user, candidates, *, scores=None) -> RankedList:
    """
    Score and rank every candidate for ``user``.

    ``candidates`` is a :class:`~decoylab.candidates.CandidateSet` or an
    iterable of item identifiers.  Unscorable candidates get ``-inf`` and
    sort last.
    """
    return model.rank(user, _candidate_codes(model, candidates), scores)


def recommend_top_n(model: Recommender, user, candidates, n: int, *, scores=None) -> RankedList:
    check_positive_int(n, "n")
    return model.rank(user, _candidate_codes(model, candidates), scores, n=n)
