"""Exhaustive matching, NNF quality metrics and evaluation-count models."""
import time

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_feature_map, check_same_channels
from .accounting import CostLedger
from .matcher import CANDIDATES_PER_STEP, NNF, EmbeddedPatchMatch, num_dilations
from .pyramid import CoarseToFinePatchMatch, check_schedule, level_dims

__all__ = [
    "BruteForceNNF",
    "CostLedger",
    "brute_force_nnf",
    "convergence_trace",
    "cost_model",
    "enumerated_cost",
    "init_cost",
    "nnf_mse",
]

_ROWS_PER_BLOCK = 256


def _normalize_rows(x, eps):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms < eps, 1.0, norms)
    return np.where(norms < eps, 0.0, x / safe)


def brute_force_nnf(k_map, q_map, eps=1e-12, ledger=None):
    """All-pairs argmax of the normalized inner product.

    Ties resolve to the smallest row-major Q index. Adds
    ``H_K * W_K * H_Q * W_Q`` to ``ledger`` when given.
    """
    k_map = check_feature_map(k_map, "k_map")
    q_map = check_feature_map(q_map, "q_map")
    check_same_channels(k_map, q_map)
    c, hk, wk = k_map.shape
    _, hq, wq = q_map.shape
    kn = _normalize_rows(k_map.reshape(c, -1).T, eps)
    qn = _normalize_rows(q_map.reshape(c, -1).T, eps)
    best = np.empty(hk * wk, dtype=np.int64)
    score = np.empty(hk * wk)
    for start in range(0, hk * wk, _ROWS_PER_BLOCK):
        block = np.clip(kn[start:start + _ROWS_PER_BLOCK] @ qn.T, -1.0, 1.0)
        idx = np.argmax(block, axis=1)
        best[start:start + idx.size] = idx
        score[start:start + idx.size] = block[np.arange(idx.size), idx]
    if ledger is not None:
        ledger.add(0, hk * wk * hq * wq)
    positions = np.stack(np.divmod(best, wq), axis=-1).reshape(hk, wk, 2)
    return NNF(positions, score.reshape(hk, wk))


class BruteForceNNF(BaseEstimator):
    """Enumerated matcher with the same ``fit``/``match`` surface as the
    PatchMatch estimators."""

    def __init__(self, eps=1e-12):
        self.eps = eps

    def fit(self, X, y=None):
        self.ref_map_ = check_feature_map(X, "reference map")
        self.n_features_in_ = self.ref_map_.shape[0]
        return self

    def match(self, X, callback=None):
        check_is_fitted(self, "ref_map_")
        self.ledger_ = CostLedger()
        start = time.perf_counter()
        nnf = brute_force_nnf(X, self.ref_map_, self.eps, self.ledger_)
        self.ledger_.wall_time = time.perf_counter() - start
        return nnf

    def predict(self, X):
        return self.match(X).positions

    def score(self, X, y=None):
        return float(self.match(X).relevance.mean())


def nnf_mse(s, s_star):
    """Mean squared gap between two relevance maps."""
    s = np.asarray(s, dtype=np.float64)
    s_star = np.asarray(s_star, dtype=np.float64)
    if s.shape != s_star.shape:
        raise ValueError(f"relevance maps differ in shape: {s.shape} vs {s_star.shape}")
    return float(np.mean((s_star - s) ** 2))


def enumerated_cost(hk, wk, hq=None, wq=None):
    hq = hk if hq is None else hq
    wq = wk if wq is None else wq
    return hk * wk * hq * wq


def _schedule_of(matcher):
    if isinstance(matcher, CoarseToFinePatchMatch):
        return check_schedule(matcher.scales, matcher.iters_per_level)
    if isinstance(matcher, EmbeddedPatchMatch):
        return [0], [int(matcher.n_iter)]
    raise TypeError(f"no cost model for {type(matcher).__name__}")


def cost_model(h, w, matcher, q_dims=None):
    """Predicted propagation relevance evaluations for a K map of ``h x w``.

    ``matcher`` is an :class:`EmbeddedPatchMatch` (``18 h w M L``), a
    :class:`CoarseToFinePatchMatch` (the per-level sum over pooled sizes) or
    a :class:`BruteForceNNF` (``h w h_Q w_Q``, Q defaulting to K's size).
    """
    if isinstance(matcher, BruteForceNNF):
        return enumerated_cost(h, w, *(q_dims or (h, w)))
    shifts, iters = _schedule_of(matcher)
    total = 0
    for s, m in zip(shifts, iters):
        lh, lw = level_dims(h, w, s)
        total += 2 * CANDIDATES_PER_STEP * lh * lw * m * num_dilations(lh, lw)
    return total


def init_cost(h, w, matcher):
    """Relevance evaluations spent initialising each level (one per position)."""
    if isinstance(matcher, BruteForceNNF):
        return 0
    shifts, _ = _schedule_of(matcher)
    return sum(level_dims(h, w, s)[0] * level_dims(h, w, s)[1] for s in shifts)


def convergence_trace(k_map, q_map, matcher, s_star=None):
    """MSE-to-oracle after every finest-level iteration.

    ``matcher`` is an unfitted PatchMatch estimator; it is fitted on
    ``q_map``. Returns ``[(cumulative_evals, mse), ...]`` where the first
    entry is taken at finest-level entry and each later one after a
    query/reference step pair. ``cumulative_evals`` counts every relevance
    evaluation made so far, initialisation and coarser levels included.
    """
    if s_star is None:
        s_star = brute_force_nnf(k_map, q_map, matcher.eps).relevance
    shifts, _ = _schedule_of(matcher)
    finest = len(shifts) - 1
    trace = []
    spent = [0]

    def record(info):
        if info.phase == "init":
            spent[0] += info.relevance.size
        else:
            spent[0] += info.evals
        if info.level != finest or info.phase == "lr":
            return
        trace.append((spent[0], nnf_mse(info.relevance, s_star)))

    matcher.fit(q_map)
    matcher.match(k_map, callback=record)
    return trace
